#include "vt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vt/nn/module.hpp"
#include "vt/nn/ops.hpp"
#include "vt/parallel.hpp"
#include "vt/seed.hpp"

namespace vt {

using nlohmann::json;
using nn::Tensor;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(lr_generator > 0 && lr_discriminator > 0 && lr_diffusion > 0))
    throw std::invalid_argument("train: learning rates must be positive");
  if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
  if (workers < 1) throw std::invalid_argument("train: workers must be >= 1");
  if (device != "cpu") throw std::invalid_argument("train: only the cpu device is available, got '" + device + "'");
  if (diffusion_steps < 1) throw std::invalid_argument("train: diffusion_steps must be >= 1");
  loss.validate();
}

std::string TrainReport::to_json() const {
  json j{{"model_id", model_id},
         {"family", to_string(family)},
         {"epochs", epochs},
         {"curves", curves},
         {"validation_masked_l1", validation_l1 ? json(*validation_l1) : json(nullptr)},
         {"wall_seconds", wall_seconds},
         {"checkpoint", checkpoint},
         {"patients_read", patients_read}};
  return j.dump(2);
}

Batch make_batch(const std::vector<SliceSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  const auto& s0 = samples.front();
  const int n = static_cast<int>(samples.size());
  const int c = s0.channels, rows = s0.rows, cols = s0.cols;
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  const int k = static_cast<int>(s0.condition.size());
  std::vector<float> in, tg, mk, h;
  in.reserve(n * c * plane);
  tg.reserve(n * plane);
  mk.reserve(n * plane);
  h.reserve(static_cast<std::size_t>(n) * k);
  Batch b;
  for (const auto& s : samples) {
    if (s.channels != c || s.rows != rows || s.cols != cols || static_cast<int>(s.condition.size()) != k)
      throw std::invalid_argument("make_batch: samples disagree in shape (patient " + s.patient_id + ")");
    in.insert(in.end(), s.input.begin(), s.input.end());
    tg.insert(tg.end(), s.target.begin(), s.target.end());
    mk.insert(mk.end(), s.mask.begin(), s.mask.end());
    h.insert(h.end(), s.condition.values.begin(), s.condition.values.end());
    b.patients.push_back(s.patient_id);
  }
  b.input = Tensor::from({n, c, rows, cols}, std::move(in));
  b.target = Tensor::from({n, 1, rows, cols}, std::move(tg));
  b.mask = Tensor::from({n, 1, rows, cols}, std::move(mk));
  b.h = Tensor::from({n, k}, std::move(h));
  return b;
}

namespace {

Tensor per_sample_constant(const std::vector<double>& v, const nn::Shape& shape) {
  const std::size_t per = nn::numel(shape) / v.size();
  std::vector<float> out(nn::numel(shape));
  for (std::size_t s = 0; s < v.size(); ++s)
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(s * per), per, static_cast<float>(v[s]));
  return Tensor::from(shape, std::move(out));
}

Tensor centre_slice(const Tensor& input) {
  const int n = input.dim(0), c = input.dim(1), rows = input.dim(2), cols = input.dim(3);
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  const int mid = c / 2;
  std::vector<float> out(n * plane);
  for (int s = 0; s < n; ++s)
    std::copy_n(input.data().begin() + static_cast<std::ptrdiff_t>((s * c + mid) * plane), plane,
                out.begin() + static_cast<std::ptrdiff_t>(s * plane));
  return Tensor::from({n, 1, rows, cols}, std::move(out));
}

std::string batch_diagnostics(const Batch& b, const std::map<std::string, double>& terms) {
  std::ostringstream os;
  os << "non-finite loss; last batch:";
  for (const auto& [k, v] : terms) os << ' ' << k << '=' << v;
  auto stats = [&](const char* name, const Tensor& t) {
    auto d = t.data();
    double lo = 1e300, hi = -1e300, sum = 0;
    for (float x : d) {
      lo = std::min(lo, double(x));
      hi = std::max(hi, double(x));
      sum += x;
    }
    os << "; " << name << " min=" << lo << " max=" << hi << " mean=" << sum / d.size();
  };
  stats("input", b.input);
  stats("target", b.target);
  stats("h", b.h);
  os << "; patients=";
  for (std::size_t i = 0; i < b.patients.size(); ++i) os << (i ? "," : "") << b.patients[i];
  return os.str();
}

void check_finite(const Batch& b, const std::map<std::string, double>& terms) {
  for (const auto& [k, v] : terms)
    if (!std::isfinite(v)) throw NumericalFailure(batch_diagnostics(b, terms));
}

/// Epoch-shuffled batches of sample indices.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch, unsigned long long seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch)
    out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch));
  return out;
}

Batch load_batch(const SliceDataset& data, const std::vector<std::size_t>& idx, int workers) {
  std::vector<SliceSample> samples(idx.size());
  parallel_for(idx.size(), workers, [&](std::size_t i) { samples[i] = data.get(idx[i]); });
  return make_batch(samples);
}

/// Running per-epoch means of named terms.
class CurveAccumulator {
 public:
  void add(const std::map<std::string, double>& terms) {
    for (const auto& [k, v] : terms) sums_[k] += v;
    ++count_;
  }
  void close_epoch(std::map<std::string, std::vector<double>>& curves) {
    for (const auto& [k, v] : sums_) curves[k].push_back(v / count_);
    sums_.clear();
    count_ = 0;
  }

 private:
  std::map<std::string, double> sums_;
  int count_ = 0;
};

struct RunState {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  TrainResult result;
};

RunState begin_run(const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup, Family family) {
  config.validate();
  if (train.size() == 0) throw std::invalid_argument("train: empty training dataset");
  if (!(setup.stats.dose_max > 0)) throw std::invalid_argument("train: setup.stats.dose_max must be positive");
  RunState st;
  auto cfg = config;
  cfg.family = family;
  auto& meta = st.result.meta;
  meta.model_id = setup.model_id.empty() ? to_string(family) : setup.model_id;
  meta.spec = spec_for(cfg, train);
  if (family == Family::diffusion_25d) {
    meta.schedule_steps = cfg.diffusion_steps;
    meta.beta_start = cfg.beta_start;
    meta.beta_end = cfg.beta_end;
  }
  meta.stats = setup.stats;
  meta.preprocess_fingerprint = setup.preprocess_fingerprint;
  meta.train_seed = config.seed;
  st.result.model = build_model(meta.spec, meta.schedule());
  st.result.report.model_id = meta.model_id;
  st.result.report.family = family;
  return st;
}

void maybe_checkpoint(RunState& st, const TrainConfig& config, const TrainSetup& setup, int epoch) {
  st.result.meta.epochs_trained = epoch;
  if (setup.checkpoint.empty()) return;
  const bool last = epoch == config.epochs;
  if (last || (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0))
    save_checkpoint(setup.checkpoint, *st.result.model, st.result.meta);
}

TrainResult finish_run(RunState& st, const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup) {
  auto& r = st.result.report;
  r.epochs = config.epochs;
  if (setup.val && setup.val->size() > 0) r.validation_l1 = validate(*st.result.model, *setup.val, config.seed);
  if (!setup.checkpoint.empty()) r.checkpoint = setup.checkpoint.string();
  for (const auto& p : train.store().accessed_patients()) r.patients_read.push_back(p);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - st.start).count();
  return std::move(st.result);
}

}  // namespace

DiffusionTerms diffusion_objective(const Tensor& eps_hat, const Tensor& eps, const Tensor& noisy,
                                   const std::vector<int>& t, const Tensor& centre, const Batch& batch,
                                   const NoiseSchedule& schedule, double lambda) {
  std::vector<double> inv_sqrt_ab, ratio;
  for (int ti : t) {
    const double ab = schedule.alpha_bar(ti);
    inv_sqrt_ab.push_back(1.0 / std::sqrt(ab));
    ratio.push_back(-std::sqrt(1.0 - ab) / std::sqrt(ab));
  }
  DiffusionTerms out;
  out.main = nn::l1_loss(eps_hat, eps);
  const auto residual = nn::add(nn::mul(noisy, per_sample_constant(inv_sqrt_ab, noisy.shape())),
                                nn::mul(eps_hat, per_sample_constant(ratio, eps_hat.shape())));
  const auto x0 = nn::add(centre, residual);
  out.tumor = nn::masked_l1_loss(x0, batch.target, batch.mask);
  out.total = nn::add(out.main, nn::scale(out.tumor, static_cast<float>(lambda)));
  return out;
}

GeneratorSpec spec_for(const TrainConfig& config, const SliceDataset& data) {
  if (data.size() == 0) throw std::invalid_argument("spec_for: empty dataset");
  const auto s = data.get(0);
  GeneratorSpec spec;
  spec.family = config.family;
  spec.base_channels = config.base_channels;
  spec.n_res_blocks = config.n_res_blocks;
  spec.embed_dim = config.embed_dim;
  spec.context_channels = config.context_channels;
  spec.in_channels = s.channels;
  spec.condition_dim = static_cast<int>(s.condition.size());
  spec.init_seed = config.seed;
  const bool triplets = data.layout() == SampleLayout::triplet_25d;
  if ((config.family == Family::diffusion_25d) != triplets)
    throw std::invalid_argument("spec_for: " + to_string(config.family) + " needs " +
                                (triplets ? "2D slice" : "2.5D triplet") + " samples");
  spec.validate();
  return spec;
}

TrainResult train_paired_gan(const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup) {
  auto st = begin_run(train, config, setup, Family::paired_gan);
  auto& model = static_cast<PairedGan&>(*st.result.model);
  auto& G = model.generator();
  auto& D = model.discriminator();
  nn::Adam opt_g(nn::tensors_of(G.parameters()), static_cast<float>(config.lr_generator), 0.5f);
  nn::Adam opt_d(nn::tensors_of(D.parameters()), static_cast<float>(config.lr_discriminator), 0.5f);
  const auto& w = config.loss;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    CurveAccumulator acc;
    for (const auto& idx : epoch_batches(train.size(), config.batch_size, config.seed, epoch)) {
      const auto b = load_batch(train, idx, config.workers);

      Tensor fake_detached;
      {
        nn::NoGradGuard ng;
        fake_detached = G.forward(b.input, b.h);
      }
      opt_d.zero_grad();
      auto d_loss = nn::scale(nn::add(nn::mse_to_constant(D.forward(b.target), 1.0f),
                                      nn::mse_to_constant(D.forward(fake_detached), 0.0f)),
                              0.5f);
      d_loss.backward();
      opt_d.step();

      opt_g.zero_grad();
      const auto fake = G.forward(b.input, b.h);
      const auto adv = nn::mse_to_constant(D.forward(fake), 1.0f);
      const auto l1 = nn::l1_loss(fake, b.target);
      const auto tumor = nn::masked_l1_loss(fake, b.target, b.mask);
      const auto main = nn::add(nn::scale(adv, static_cast<float>(w.adversarial_weight)),
                                nn::scale(l1, static_cast<float>(w.l1_weight)));
      auto total = nn::add(main, nn::scale(tumor, static_cast<float>(w.lambda_tumor)));
      const std::map<std::string, double> terms{{"d_loss", d_loss.item()}, {"g_adv", adv.item()},
                                                {"g_l1", l1.item()},       {"tumor", tumor.item()},
                                                {"g_main", main.item()},   {"g_total", total.item()}};
      check_finite(b, terms);
      total.backward();
      opt_g.step();
      opt_d.zero_grad();
      acc.add(terms);
    }
    acc.close_epoch(st.result.report.curves);
    maybe_checkpoint(st, config, setup, epoch);
  }
  return finish_run(st, train, config, setup);
}

TrainResult train_cycle_gan(const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup) {
  auto st = begin_run(train, config, setup, Family::cycle_gan);
  auto& model = static_cast<CycleGan&>(*st.result.model);
  auto& Gf = model.forward_generator();
  auto& Gb = model.backward_generator();
  auto& Da = model.discriminator_a();
  auto& Db = model.discriminator_b();
  auto g_params = nn::tensors_of(Gf.parameters());
  for (auto& p : nn::tensors_of(Gb.parameters())) g_params.push_back(p);
  auto d_params = nn::tensors_of(Da.parameters());
  for (auto& p : nn::tensors_of(Db.parameters())) d_params.push_back(p);
  nn::Adam opt_g(g_params, static_cast<float>(config.lr_generator), 0.5f);
  nn::Adam opt_d(d_params, static_cast<float>(config.lr_discriminator), 0.5f);
  const auto& w = config.loss;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    CurveAccumulator acc;
    for (const auto& idx : epoch_batches(train.size(), config.batch_size, config.seed, epoch)) {
      const auto b = load_batch(train, idx, config.workers);
      const auto h_f = CycleGan::with_direction(b.h, false);
      const auto h_b = CycleGan::with_direction(b.h, true);

      opt_g.zero_grad();
      const auto fake_b = Gf.forward(b.input, h_f);
      const auto fake_a = Gb.forward(b.target, h_b);
      const auto adv = nn::add(nn::mse_to_constant(Db.forward(fake_b), 1.0f),
                               nn::mse_to_constant(Da.forward(fake_a), 1.0f));
      const auto cyc = nn::add(nn::l1_loss(Gb.forward(fake_b, h_b), b.input),
                               nn::l1_loss(Gf.forward(fake_a, h_f), b.target));
      const auto tumor = nn::masked_l1_loss(fake_b, b.target, b.mask);
      const auto main = nn::add(nn::scale(adv, static_cast<float>(w.adversarial_weight)),
                                nn::scale(cyc, static_cast<float>(w.cycle_weight)));
      auto total = nn::add(main, nn::scale(tumor, static_cast<float>(w.lambda_tumor)));
      std::map<std::string, double> terms{{"g_adv", adv.item()},   {"cycle", cyc.item()},
                                          {"tumor", tumor.item()}, {"g_main", main.item()},
                                          {"g_total", total.item()}};
      check_finite(b, terms);
      total.backward();
      opt_g.step();

      opt_d.zero_grad();
      auto d_loss = nn::scale(nn::add(nn::add(nn::mse_to_constant(Db.forward(b.target), 1.0f),
                                              nn::mse_to_constant(Db.forward(fake_b.detach()), 0.0f)),
                                      nn::add(nn::mse_to_constant(Da.forward(b.input), 1.0f),
                                              nn::mse_to_constant(Da.forward(fake_a.detach()), 0.0f))),
                              0.5f);
      terms["d_loss"] = d_loss.item();
      check_finite(b, terms);
      d_loss.backward();
      opt_d.step();
      acc.add(terms);
    }
    acc.close_epoch(st.result.report.curves);
    maybe_checkpoint(st, config, setup, epoch);
  }
  return finish_run(st, train, config, setup);
}

TrainResult train_diffusion(const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup) {
  auto st = begin_run(train, config, setup, Family::diffusion_25d);
  auto& model = static_cast<ResidualDiffusion&>(*st.result.model);
  const auto& schedule = model.schedule();
  nn::Adam opt(nn::tensors_of(model.parameters()), static_cast<float>(config.lr_diffusion));

  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    CurveAccumulator acc;
    for (const auto& idx : epoch_batches(train.size(), config.batch_size, config.seed, epoch)) {
      const auto b = load_batch(train, idx, config.workers);
      const int n = b.input.dim(0);
      std::mt19937_64 rng(mix_seed(mix_seed(config.seed, std::uint64_t{0xd1ff}), ++step));
      std::uniform_int_distribution<int> pick_t(1, schedule.steps());
      std::normal_distribution<float> normal(0.0f, 1.0f);
      std::vector<int> t(n);
      for (auto& ti : t) ti = pick_t(rng);

      const auto centre = centre_slice(b.input);
      std::vector<float> eps_v(b.target.numel()), noisy_v(b.target.numel());
      for (auto& e : eps_v) e = normal(rng);
      const std::size_t per = eps_v.size() / n;
      for (int s = 0; s < n; ++s) {
        const double a = std::sqrt(schedule.alpha_bar(t[s])), c = std::sqrt(1.0 - schedule.alpha_bar(t[s]));
        for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
          const double r = b.target.data()[i] - centre.data()[i];
          noisy_v[i] = static_cast<float>(a * r + c * eps_v[i]);
        }
      }
      const auto eps = Tensor::from(b.target.shape(), std::move(eps_v));
      const auto noisy = Tensor::from(b.target.shape(), std::move(noisy_v));

      opt.zero_grad();
      const auto eps_hat = model.predict_noise(b.input, noisy, t, b.h);
      auto terms_t = diffusion_objective(eps_hat, eps, noisy, t, centre, b, schedule, config.loss.lambda_tumor);
      const std::map<std::string, double> terms{
          {"noise_l1", terms_t.main.item()}, {"tumor", terms_t.tumor.item()}, {"total", terms_t.total.item()}};
      check_finite(b, terms);
      terms_t.total.backward();
      opt.step();
      acc.add(terms);
    }
    acc.close_epoch(st.result.report.curves);
    maybe_checkpoint(st, config, setup, epoch);
  }
  return finish_run(st, train, config, setup);
}

TrainResult train_model(const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup) {
  switch (config.family) {
    case Family::paired_gan: return train_paired_gan(train, config, setup);
    case Family::cycle_gan: return train_cycle_gan(train, config, setup);
    case Family::diffusion_25d: return train_diffusion(train, config, setup);
  }
  throw std::invalid_argument("unknown family");
}

std::vector<std::vector<float>> predict_dataset(const GenerativeModel& model, const SliceDataset& data,
                                                unsigned long long seed, int batch_size) {
  nn::NoGradGuard ng;
  std::vector<std::vector<float>> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(data.size(), i + batch_size); ++j) idx.push_back(j);
    const auto b = load_batch(data, idx, 1);
    std::vector<std::uint64_t> seeds;
    for (auto j : idx) seeds.push_back(mix_seed(seed, static_cast<std::uint64_t>(j)));
    const auto pred = model.predict(b.input, b.h, seeds);
    const std::size_t per = pred.numel() / idx.size();
    for (std::size_t s = 0; s < idx.size(); ++s)
      out.emplace_back(pred.data().begin() + s * per, pred.data().begin() + (s + 1) * per);
  }
  return out;
}

double validate(const GenerativeModel& model, const SliceDataset& data, unsigned long long seed, int batch_size) {
  if (data.size() == 0) throw std::invalid_argument("validate: empty dataset");
  const auto preds = predict_dataset(model, data, seed, batch_size);
  double acc = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data.get(i);
    acc += losses::tumor_l1(preds[i], s.target, s.mask);
  }
  return acc / static_cast<double>(data.size());
}

double validate(const std::filesystem::path& checkpoint, const SliceDataset& data, unsigned long long seed,
                int batch_size) {
  const auto loaded = load_checkpoint(checkpoint);
  return validate(*loaded.model, data, seed, batch_size);
}

}  // namespace vt
