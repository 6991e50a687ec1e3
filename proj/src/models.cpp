#include "vt/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <random>
#include <stdexcept>

namespace vt {

using nn::Tensor;

std::string to_string(Family f) {
  switch (f) {
    case Family::paired_gan: return "paired_gan";
    case Family::cycle_gan: return "cycle_gan";
    case Family::diffusion_25d: return "diffusion_25d";
  }
  return "?";
}

Family parse_family(const std::string& s) {
  if (s == "paired_gan" || s == "pix2pix") return Family::paired_gan;
  if (s == "cycle_gan" || s == "cyclegan") return Family::cycle_gan;
  if (s == "diffusion_25d" || s == "diffusion") return Family::diffusion_25d;
  throw std::invalid_argument("unknown model family '" + s + "'");
}

void GeneratorSpec::validate() const {
  if (base_channels < 1 || n_res_blocks < 0 || embed_dim < 1 || in_channels < 1 || condition_dim < 2 ||
      context_channels < 1)
    throw std::invalid_argument("generator spec: channel counts and dimensions must be positive");
  if (family == Family::diffusion_25d && in_channels != 3)
    throw std::invalid_argument("generator spec: the 2.5D diffusion model takes 3-slice inputs");
}

namespace {

int norm_groups(int channels) { return std::gcd(channels, 8); }

void check_divisible(const Tensor& x, int factor, const char* who) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(who) + ": expected NCHW input");
  if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0)
    throw std::invalid_argument(std::string(who) + ": spatial size " + std::to_string(x.dim(2)) + "x" +
                                std::to_string(x.dim(3)) + " not divisible by " + std::to_string(factor));
}

nn::Rng seeded(unsigned long long seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return nn::Rng(seq);
}

}  // namespace

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : steps_(steps), beta_start_(beta_start), beta_end_(beta_end) {
  if (steps < 1) throw std::invalid_argument("noise schedule needs at least one step");
  if (!(beta_start > 0 && beta_end >= beta_start && beta_end < 1))
    throw std::invalid_argument("noise schedule: need 0 < beta_start <= beta_end < 1");
  betas_.assign(steps + 1, 0.0);
  alpha_bars_.assign(steps + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    betas_[t] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (steps - 1);
    alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - betas_[t]);
  }
}

std::vector<float> NoiseSchedule::q_sample(std::span<const float> x0, int t, std::span<const float> eps) const {
  if (x0.size() != eps.size()) throw std::invalid_argument("q_sample: size mismatch");
  const double a = std::sqrt(alpha_bar(t)), b = std::sqrt(1.0 - alpha_bar(t));
  std::vector<float> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
  return out;
}

ConditionEmbedder::ConditionEmbedder(std::string name, int in, int embed, nn::Rng& rng)
    : nn::Module(std::move(name)), in_dim(in), embed_dim(embed), fc1_("fc1", in, embed, rng), fc2_("fc2", embed, embed, rng) {
  register_child(fc1_);
  register_child(fc2_);
}

Tensor ConditionEmbedder::forward(const Tensor& h) const {
  return nn::silu(fc2_.forward(nn::silu(fc1_.forward(h))));
}

FilmResBlock::FilmResBlock(std::string name, int c, nn::Rng& rng)
    : nn::Module(std::move(name)),
      conv1_("conv1", c, c, 3, 1, 1, true, rng),
      conv2_("conv2", c, c, 3, 1, 1, true, rng),
      norm1_("norm1", c, c),
      norm2_("norm2", c, c) {
  register_child(conv1_);
  register_child(norm1_);
  register_child(conv2_);
  register_child(norm2_);
}

Tensor FilmResBlock::branch(const Tensor& x) const {
  return norm2_.forward(conv2_.forward(nn::relu(norm1_.forward(conv1_.forward(x)))));
}

Tensor FilmResBlock::forward(const Tensor& x, const Tensor& scale, const Tensor& shift) const {
  return nn::add(x, nn::add_channel(nn::mul_channel(branch(x), scale), shift));
}

Tensor FilmResBlock::forward_unconditioned(const Tensor& x) const { return nn::add(x, branch(x)); }

ConditionalResnetGenerator::ConditionalResnetGenerator(std::string name, const GeneratorSpec& spec, int cond_dim,
                                                       nn::Rng& rng)
    : nn::Module(std::move(name)),
      condition_dim_(cond_dim),
      bottleneck_channels_(4 * spec.base_channels),
      embed_("embed", cond_dim, spec.embed_dim, rng),
      film_("film", spec.embed_dim, 2 * spec.n_res_blocks * 4 * spec.base_channels, rng),
      stem_("stem", spec.in_channels, spec.base_channels, 3, 1, 1, true, rng),
      down1_("down1", spec.base_channels, 2 * spec.base_channels, 3, 2, 1, true, rng),
      down2_("down2", 2 * spec.base_channels, 4 * spec.base_channels, 3, 2, 1, true, rng),
      up1_("up1", 4 * spec.base_channels, 2 * spec.base_channels, 3, 1, 1, true, rng),
      up2_("up2", 2 * spec.base_channels, spec.base_channels, 3, 1, 1, true, rng),
      head_("head", spec.base_channels, 1, 3, 1, 1, true, rng),
      stem_norm_("stem_norm", spec.base_channels, spec.base_channels),
      down1_norm_("down1_norm", 2 * spec.base_channels, 2 * spec.base_channels),
      down2_norm_("down2_norm", 4 * spec.base_channels, 4 * spec.base_channels),
      up1_norm_("up1_norm", 2 * spec.base_channels, 2 * spec.base_channels),
      up2_norm_("up2_norm", spec.base_channels, spec.base_channels) {
  register_child(embed_);
  register_child(film_);
  register_child(stem_);
  register_child(stem_norm_);
  register_child(down1_);
  register_child(down1_norm_);
  register_child(down2_);
  register_child(down2_norm_);
  for (int b = 0; b < spec.n_res_blocks; ++b) {
    blocks_.push_back(std::make_unique<FilmResBlock>("block" + std::to_string(b), bottleneck_channels_, rng));
    register_child(*blocks_.back());
  }
  register_child(up1_);
  register_child(up1_norm_);
  register_child(up2_);
  register_child(up2_norm_);
  register_child(head_);
}

Tensor ConditionalResnetGenerator::forward(const Tensor& x, const Tensor& h) const {
  check_divisible(x, kDownsampling, "generator");
  if (h.rank() != 2 || h.dim(0) != x.dim(0) || h.dim(1) != condition_dim_)
    throw std::invalid_argument("generator: conditioning must be [N, " + std::to_string(condition_dim_) + "], got " +
                                nn::shape_string(h.shape()));
  auto f = nn::relu(stem_norm_.forward(stem_.forward(x)));
  f = nn::relu(down1_norm_.forward(down1_.forward(f)));
  f = nn::relu(down2_norm_.forward(down2_.forward(f)));

  const auto mod = film_.forward(embed_.forward(h));
  const int c = bottleneck_channels_;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const int base = static_cast<int>(b) * 2 * c;
    const auto scale = nn::add_scalar(nn::columns(mod, base, c), 1.0f);
    const auto shift = nn::columns(mod, base + c, c);
    f = blocks_[b]->forward(f, scale, shift);
  }
  f = nn::relu(up1_norm_.forward(up1_.forward(nn::upsample_nearest2x(f))));
  f = nn::relu(up2_norm_.forward(up2_.forward(nn::upsample_nearest2x(f))));
  return nn::sigmoid(head_.forward(f));
}

PatchDiscriminator::PatchDiscriminator(std::string name, int in_channels, int c, nn::Rng& rng)
    : nn::Module(std::move(name)),
      c1_("c1", in_channels, c, 4, 2, 1, true, rng),
      c2_("c2", c, 2 * c, 4, 2, 1, true, rng),
      c3_("c3", 2 * c, 4 * c, 4, 2, 1, true, rng),
      out_("out", 4 * c, 1, 3, 1, 0, true, rng),
      n2_("n2", 2 * c, 2 * c),
      n3_("n3", 4 * c, 4 * c) {
  register_child(c1_);
  register_child(c2_);
  register_child(n2_);
  register_child(c3_);
  register_child(n3_);
  register_child(out_);
}

Tensor PatchDiscriminator::forward(const Tensor& x) const {
  auto f = nn::leaky_relu(c1_.forward(x), 0.2f);
  f = nn::leaky_relu(n2_.forward(c2_.forward(f)), 0.2f);
  f = nn::leaky_relu(n3_.forward(c3_.forward(f)), 0.2f);
  return out_.forward(f);
}

int PatchDiscriminator::patch_size(int input_size) {
  int s = input_size;
  for (int i = 0; i < 3; ++i) s = nn::conv_output_size(s, 4, 2, 1);
  return nn::conv_output_size(s, 3, 1, 0);
}

ContextEncoder::ContextEncoder(std::string name, int in_channels, int c, nn::Rng& rng)
    : nn::Module(std::move(name)),
      c1_("c1", in_channels, c, 3, 1, 1, true, rng),
      c2_("c2", c, c, 3, 1, 1, true, rng),
      n1_("n1", norm_groups(c), c),
      n2_("n2", norm_groups(c), c) {
  register_child(c1_);
  register_child(n1_);
  register_child(c2_);
  register_child(n2_);
}

Tensor ContextEncoder::forward(const Tensor& triplet) const {
  auto f = nn::silu(n1_.forward(c1_.forward(triplet)));
  return nn::silu(n2_.forward(c2_.forward(f)));
}

EmbedResBlock::EmbedResBlock(std::string name, int in_c, int out_c, int embed_dim, nn::Rng& rng)
    : nn::Module(std::move(name)),
      in_channels_(in_c),
      out_channels_(out_c),
      n1_("n1", norm_groups(in_c), in_c),
      n2_("n2", norm_groups(out_c), out_c),
      c1_("c1", in_c, out_c, 3, 1, 1, true, rng),
      c2_("c2", out_c, out_c, 3, 1, 1, true, rng),
      proj_("proj", embed_dim, out_c, rng) {
  register_child(n1_);
  register_child(c1_);
  register_child(proj_);
  register_child(n2_);
  register_child(c2_);
  if (in_c != out_c) {
    skip_ = std::make_unique<nn::Conv2d>("skip", in_c, out_c, 1, 1, 0, true, rng);
    register_child(*skip_);
  }
}

Tensor EmbedResBlock::forward(const Tensor& x, const Tensor& emb) const {
  auto h = c1_.forward(nn::silu(n1_.forward(x)));
  h = nn::add_channel(h, proj_.forward(emb));
  h = c2_.forward(nn::silu(n2_.forward(h)));
  return nn::add(skip_ ? skip_->forward(x) : x, h);
}

Tensor timestep_features(const std::vector<int>& timesteps, int dim) {
  const int n = static_cast<int>(timesteps.size());
  const int half = dim / 2;
  std::vector<float> out(static_cast<std::size_t>(n) * dim, 0.0f);
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
      const double a = timesteps[s] * freq;
      out[static_cast<std::size_t>(s) * dim + i] = static_cast<float>(std::sin(a));
      out[static_cast<std::size_t>(s) * dim + half + i] = static_cast<float>(std::cos(a));
    }
  return Tensor::from({n, dim}, std::move(out));
}

DiffusionDenoiser::DiffusionDenoiser(std::string name, const GeneratorSpec& spec, nn::Rng& rng)
    : nn::Module(std::move(name)),
      embed_dim_(spec.embed_dim),
      t1_("time1", spec.embed_dim, spec.embed_dim, rng),
      t2_("time2", spec.embed_dim, spec.embed_dim, rng),
      d1_("dose1", 1, spec.embed_dim, rng),
      d2_("dose2", spec.embed_dim, spec.embed_dim, rng),
      k1_("clinical1", spec.clinical_dim(), spec.embed_dim, rng),
      k2_("clinical2", spec.embed_dim, spec.embed_dim, rng),
      in_("in", 1 + spec.context_channels, spec.base_channels, 3, 1, 1, true, rng),
      down1_("down1", spec.base_channels, 2 * spec.base_channels, 3, 2, 1, true, rng),
      down2_("down2", 2 * spec.base_channels, 2 * spec.base_channels, 3, 2, 1, true, rng),
      up1_("up1", 2 * spec.base_channels, 2 * spec.base_channels, 3, 1, 1, true, rng),
      up2_("up2", 2 * spec.base_channels, spec.base_channels, 3, 1, 1, true, rng),
      out_("out", spec.base_channels, 1, 3, 1, 1, true, rng),
      out_norm_("out_norm", norm_groups(spec.base_channels), spec.base_channels),
      l0_("level0", spec.base_channels, spec.base_channels, spec.embed_dim, rng),
      l1_("level1", 2 * spec.base_channels, 2 * spec.base_channels, spec.embed_dim, rng),
      mid0_("mid0", 2 * spec.base_channels, 2 * spec.base_channels, spec.embed_dim, rng),
      mid1_("mid1", 2 * spec.base_channels, 2 * spec.base_channels, spec.embed_dim, rng),
      u1_("up_level1", 4 * spec.base_channels, 2 * spec.base_channels, spec.embed_dim, rng),
      u0_("up_level0", 2 * spec.base_channels, spec.base_channels, spec.embed_dim, rng) {
  for (nn::Module* m : std::initializer_list<nn::Module*>{&t1_, &t2_, &d1_, &d2_, &k1_, &k2_, &in_, &l0_, &down1_,
                                                          &l1_, &down2_, &mid0_, &mid1_, &up1_, &u1_, &up2_, &u0_,
                                                          &out_norm_, &out_})
    register_child(*m);
}

Tensor DiffusionDenoiser::forward(const Tensor& noisy, const Tensor& context, const std::vector<int>& t,
                                  const Tensor& dose, const Tensor& clinical) const {
  check_divisible(noisy, 4, "diffusion denoiser");
  const int n = noisy.dim(0);
  if (static_cast<int>(t.size()) != n || dose.dim(0) != n || clinical.dim(0) != n || context.dim(0) != n)
    throw std::invalid_argument("diffusion denoiser: batch sizes disagree");

  const auto t_emb = t2_.forward(nn::silu(t1_.forward(timestep_features(t, embed_dim_))));
  const auto d_emb = d2_.forward(nn::silu(d1_.forward(dose)));
  const auto k_emb = k2_.forward(nn::silu(k1_.forward(clinical)));
  const auto emb = nn::silu(nn::add(nn::add(t_emb, d_emb), k_emb));

  auto h0 = l0_.forward(in_.forward(nn::concat_channels(noisy, context)), emb);
  auto h1 = l1_.forward(down1_.forward(h0), emb);
  auto m = down2_.forward(h1);
  m = mid1_.forward(mid0_.forward(m, emb), emb);
  auto u1 = u1_.forward(nn::concat_channels(up1_.forward(nn::upsample_nearest2x(m)), h1), emb);
  auto u0 = u0_.forward(nn::concat_channels(up2_.forward(nn::upsample_nearest2x(u1)), h0), emb);
  return out_.forward(nn::silu(out_norm_.forward(u0)));
}

PairedGan::PairedGan(const GeneratorSpec& spec) : GenerativeModel("paired_gan", spec) {
  spec.validate();
  auto rng = seeded(spec.init_seed, 1);
  generator_ = std::make_unique<ConditionalResnetGenerator>("generator", spec, spec.condition_dim, rng);
  discriminator_ = std::make_unique<PatchDiscriminator>("discriminator", 1, spec.base_channels, rng);
  register_child(*generator_);
  register_child(*discriminator_);
}

Tensor PairedGan::predict(const Tensor& input, const Tensor& h, const std::vector<std::uint64_t>&) const {
  return generator_->forward(input, h);
}

CycleGan::CycleGan(const GeneratorSpec& spec) : GenerativeModel("cycle_gan", spec) {
  spec.validate();
  auto rng = seeded(spec.init_seed, 2);
  g_forward_ = std::make_unique<ConditionalResnetGenerator>("g_forward", spec, spec.condition_dim + 1, rng);
  g_backward_ = std::make_unique<ConditionalResnetGenerator>("g_backward", spec, spec.condition_dim + 1, rng);
  d_a_ = std::make_unique<PatchDiscriminator>("d_a", 1, spec.base_channels, rng);
  d_b_ = std::make_unique<PatchDiscriminator>("d_b", 1, spec.base_channels, rng);
  register_child(*g_forward_);
  register_child(*g_backward_);
  register_child(*d_a_);
  register_child(*d_b_);
}

Tensor CycleGan::with_direction(const Tensor& h, bool backward) {
  const int n = h.dim(0), k = h.dim(1);
  std::vector<float> v(static_cast<std::size_t>(n) * (k + 1));
  for (int s = 0; s < n; ++s) {
    for (int j = 0; j < k; ++j) v[static_cast<std::size_t>(s) * (k + 1) + j] = h.data()[static_cast<std::size_t>(s) * k + j];
    v[static_cast<std::size_t>(s) * (k + 1) + k] = backward ? 1.0f : 0.0f;
  }
  return Tensor::from({n, k + 1}, std::move(v));
}

Tensor CycleGan::predict(const Tensor& input, const Tensor& h, const std::vector<std::uint64_t>&) const {
  return g_forward_->forward(input, with_direction(h, false));
}

ResidualDiffusion::ResidualDiffusion(const GeneratorSpec& spec, NoiseSchedule schedule)
    : GenerativeModel("residual_diffusion", spec), schedule_(std::move(schedule)) {
  spec.validate();
  if (schedule_.steps() < 1) throw std::invalid_argument("diffusion model needs a noise schedule");
  auto rng = seeded(spec.init_seed, 3);
  encoder_ = std::make_unique<ContextEncoder>("encoder", spec.in_channels, spec.context_channels, rng);
  denoiser_ = std::make_unique<DiffusionDenoiser>("denoiser", spec, rng);
  register_child(*encoder_);
  register_child(*denoiser_);
}

Tensor ResidualDiffusion::predict_noise_with_context(const Tensor& context, const Tensor& noisy,
                                                     const std::vector<int>& t, const Tensor& h) const {
  const int d = spec_.clinical_dim();
  if (h.rank() != 2 || h.dim(1) != spec_.condition_dim)
    throw std::invalid_argument("diffusion: conditioning must be [N, " + std::to_string(spec_.condition_dim) + "]");
  return denoiser_->forward(noisy, context, t, nn::columns(h, d, 1), nn::columns(h, 0, d));
}

Tensor ResidualDiffusion::predict_noise(const Tensor& triplet, const Tensor& noisy, const std::vector<int>& t,
                                        const Tensor& h) const {
  return predict_noise_with_context(encoder_->forward(triplet), noisy, t, h);
}

Tensor ResidualDiffusion::sample_residual(const Tensor& triplet, const Tensor& h,
                                          const std::vector<std::uint64_t>& seeds) const {
  nn::NoGradGuard no_grad;
  const int n = triplet.dim(0), rows = triplet.dim(2), cols = triplet.dim(3);
  if (static_cast<int>(seeds.size()) != n) throw std::invalid_argument("sample_residual: one seed per sample");
  const std::size_t per = static_cast<std::size_t>(rows) * cols;

  std::vector<nn::Rng> rngs;
  for (auto s : seeds) rngs.push_back(seeded(s, 0xd1ff));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  auto draw = [&](std::vector<float>& buf) {
    for (int s = 0; s < n; ++s)
      for (std::size_t i = 0; i < per; ++i) buf[s * per + i] = normal(rngs[s]);
  };

  const auto context = encoder_->forward(triplet);
  std::vector<float> x(static_cast<std::size_t>(n) * per), z(x.size());
  draw(x);
  for (int t = schedule_.steps(); t >= 1; --t) {
    const auto xt = Tensor::from({n, 1, rows, cols}, x);
    const auto eps = predict_noise_with_context(context, xt, std::vector<int>(n, t), h);
    const double ab = schedule_.alpha_bar(t), ab_prev = schedule_.alpha_bar(t - 1);
    const double beta = schedule_.beta(t);
    const double c_x0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double c_xt = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
    if (t > 1) draw(z);
    auto ev = eps.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0 = std::clamp((x[i] - std::sqrt(1.0 - ab) * ev[i]) / std::sqrt(ab), -1.0, 1.0);
      double next = c_x0 * x0 + c_xt * x[i];
      if (t > 1) next += sigma * z[i];
      x[i] = static_cast<float>(next);
    }
  }
  return Tensor::from({n, 1, rows, cols}, std::move(x));
}

Tensor ResidualDiffusion::predict(const Tensor& input, const Tensor& h, const std::vector<std::uint64_t>& seeds) const {
  nn::NoGradGuard no_grad;
  const auto r = sample_residual(input, h, seeds);
  const int n = input.dim(0), rows = input.dim(2), cols = input.dim(3);
  const std::size_t per = static_cast<std::size_t>(rows) * cols;
  std::vector<float> out(static_cast<std::size_t>(n) * per);
  for (int s = 0; s < n; ++s)
    for (std::size_t i = 0; i < per; ++i) {
      const float centre = input.data()[(static_cast<std::size_t>(s) * 3 + 1) * per + i];
      out[s * per + i] = std::clamp(centre + r.data()[s * per + i], 0.0f, 1.0f);
    }
  return Tensor::from({n, 1, rows, cols}, std::move(out));
}

std::unique_ptr<ConditionalResnetGenerator> build_paired_generator(const GeneratorSpec& spec) {
  spec.validate();
  auto rng = seeded(spec.init_seed, 1);
  return std::make_unique<ConditionalResnetGenerator>("generator", spec, spec.condition_dim, rng);
}

std::unique_ptr<PatchDiscriminator> build_patchgan_discriminator(const GeneratorSpec& spec) {
  spec.validate();
  auto rng = seeded(spec.init_seed, 4);
  return std::make_unique<PatchDiscriminator>("discriminator", 1, spec.base_channels, rng);
}

std::unique_ptr<CycleGan> build_cycle_pair(const GeneratorSpec& spec) { return std::make_unique<CycleGan>(spec); }

std::unique_ptr<ResidualDiffusion> build_diffusion_model(const GeneratorSpec& spec, const NoiseSchedule& schedule) {
  return std::make_unique<ResidualDiffusion>(spec, schedule);
}

std::unique_ptr<GenerativeModel> build_model(const GeneratorSpec& spec, const NoiseSchedule& schedule) {
  switch (spec.family) {
    case Family::paired_gan: return std::make_unique<PairedGan>(spec);
    case Family::cycle_gan: return build_cycle_pair(spec);
    case Family::diffusion_25d: return build_diffusion_model(spec, schedule);
  }
  throw std::invalid_argument("unknown family");
}

Tensor stack_rows(const std::vector<std::vector<float>>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const int k = static_cast<int>(rows.front().size());
  std::vector<float> v;
  v.reserve(rows.size() * k);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != k) throw std::invalid_argument("stack_rows: ragged rows");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor::from({static_cast<int>(rows.size()), k}, std::move(v));
}

}  // namespace vt
