#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vt/nn/module.hpp"

namespace vt {

enum class Family { paired_gan, cycle_gan, diffusion_25d };
std::string to_string(Family f);
Family parse_family(const std::string& s);

struct GeneratorSpec {
  Family family = Family::paired_gan;
  int base_channels = 16;
  int n_res_blocks = 4;
  int embed_dim = 64;
  int in_channels = 1;        // 1 for 2D slices, 3 for triplets
  int condition_dim = 12;     // length of h: clinical block + normalised dose
  int context_channels = 16;  // diffusion context encoder width
  unsigned long long init_seed = 0;

  int clinical_dim() const { return condition_dim - 1; }
  void validate() const;
};

/// Linear beta schedule; alpha_bar[t] for t in 1..T (index 0 is 1.0).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(int steps, double beta_start, double beta_end);

  int steps() const { return steps_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  double beta(int t) const { return betas_.at(t); }
  double alpha(int t) const { return 1.0 - betas_.at(t); }
  double alpha_bar(int t) const { return alpha_bars_.at(t); }

  /// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, elementwise.
  std::vector<float> q_sample(std::span<const float> x0, int t, std::span<const float> eps) const;

 private:
  int steps_ = 0;
  double beta_start_ = 0, beta_end_ = 0;
  std::vector<double> betas_;       // index 0 unused
  std::vector<double> alpha_bars_;  // alpha_bars_[0] = 1
};

/// Shared conditioning MLP: h -> embedding (SiLU activated).
class ConditionEmbedder final : public nn::Module {
 public:
  ConditionEmbedder(std::string name, int in_dim, int embed_dim, nn::Rng& rng);
  std::string kind() const override { return "condition_embedder"; }
  nn::Tensor forward(const nn::Tensor& h) const;

  int in_dim, embed_dim;

 private:
  nn::Linear fc1_, fc2_;
};

/// Residual block whose second normalised branch is modulated channel-wise:
/// out = x + (norm2(conv2(relu(norm1(conv1(x))))) * scale + shift).
class FilmResBlock final : public nn::Module {
 public:
  FilmResBlock(std::string name, int channels, nn::Rng& rng);
  std::string kind() const override { return "film_res_block"; }
  nn::Tensor forward(const nn::Tensor& x, const nn::Tensor& scale, const nn::Tensor& shift) const;
  nn::Tensor forward_unconditioned(const nn::Tensor& x) const;

 private:
  nn::Tensor branch(const nn::Tensor& x) const;
  nn::Conv2d conv1_, conv2_;
  nn::GroupNorm norm1_, norm2_;
};

/// Encoder / FiLM-modulated residual bottleneck / decoder with a sigmoid head.
class ConditionalResnetGenerator final : public nn::Module {
 public:
  ConditionalResnetGenerator(std::string name, const GeneratorSpec& spec, int condition_dim, nn::Rng& rng);
  std::string kind() const override { return "conditional_resnet_generator"; }

  /// x [N, in, H, W], h [N, condition_dim] -> [N, 1, H, W] in [0, 1].
  nn::Tensor forward(const nn::Tensor& x, const nn::Tensor& h) const;

  static constexpr int kDownsampling = 4;
  int condition_dim() const { return condition_dim_; }
  const std::vector<std::unique_ptr<FilmResBlock>>& blocks() const { return blocks_; }

 private:
  int condition_dim_;
  int bottleneck_channels_;
  ConditionEmbedder embed_;
  nn::Linear film_;  // -> [scale_delta, shift] for every block
  nn::Conv2d stem_, down1_, down2_, up1_, up2_, head_;
  nn::GroupNorm stem_norm_, down1_norm_, down2_norm_, up1_norm_, up2_norm_;
  std::vector<std::unique_ptr<FilmResBlock>> blocks_;
};

/// Unconditional PatchGAN: three stride-2 4x4 convolutions and a 3x3 valid
/// convolution producing a patch map.
class PatchDiscriminator final : public nn::Module {
 public:
  PatchDiscriminator(std::string name, int in_channels, int base_channels, nn::Rng& rng);
  std::string kind() const override { return "patch_discriminator"; }
  nn::Tensor forward(const nn::Tensor& x) const;

  /// Patch map side length for a square input of the given size.
  static int patch_size(int input_size);

 private:
  nn::Conv2d c1_, c2_, c3_, out_;
  nn::GroupNorm n2_, n3_;
};

/// Strided conv encoder over the input triplet; runs once per sample.
class ContextEncoder final : public nn::Module {
 public:
  ContextEncoder(std::string name, int in_channels, int channels, nn::Rng& rng);
  std::string kind() const override { return "context_encoder"; }
  nn::Tensor forward(const nn::Tensor& triplet) const;

 private:
  nn::Conv2d c1_, c2_;
  nn::GroupNorm n1_, n2_;
};

/// Residual block with additive per-channel embedding injection.
class EmbedResBlock final : public nn::Module {
 public:
  EmbedResBlock(std::string name, int in_channels, int out_channels, int embed_dim, nn::Rng& rng);
  std::string kind() const override { return "embed_res_block"; }
  nn::Tensor forward(const nn::Tensor& x, const nn::Tensor& emb) const;

 private:
  int in_channels_, out_channels_;
  nn::GroupNorm n1_, n2_;
  nn::Conv2d c1_, c2_;
  nn::Linear proj_;
  std::unique_ptr<nn::Conv2d> skip_;
};

/// Sinusoidal timestep features of width dim.
nn::Tensor timestep_features(const std::vector<int>& timesteps, int dim);

/// U-shaped noise predictor with separate timestep, dose and clinical
/// projections summed into one embedding added in every residual block.
class DiffusionDenoiser final : public nn::Module {
 public:
  DiffusionDenoiser(std::string name, const GeneratorSpec& spec, nn::Rng& rng);
  std::string kind() const override { return "diffusion_denoiser"; }

  /// noisy [N,1,H,W], context [N,Cc,H,W], t per sample, dose [N,1], clinical [N,d].
  nn::Tensor forward(const nn::Tensor& noisy, const nn::Tensor& context, const std::vector<int>& t,
                     const nn::Tensor& dose, const nn::Tensor& clinical) const;

 private:
  int embed_dim_;
  nn::Linear t1_, t2_, d1_, d2_, k1_, k2_;
  nn::Conv2d in_, down1_, down2_, up1_, up2_, out_;
  nn::GroupNorm out_norm_;
  EmbedResBlock l0_, l1_, mid0_, mid1_, u1_, u0_;
};

/// A trained or initialised forecaster. predict() maps inputs and h to a
/// target-slice prediction in [0, 1].
class GenerativeModel : public nn::Module {
 public:
  GenerativeModel(std::string name, GeneratorSpec spec) : nn::Module(std::move(name)), spec_(spec) {}
  const GeneratorSpec& spec() const { return spec_; }
  Family family() const { return spec_.family; }

  /// input [N, in_channels, H, W]; h [N, condition_dim]; one seed per sample.
  virtual nn::Tensor predict(const nn::Tensor& input, const nn::Tensor& h,
                             const std::vector<std::uint64_t>& seeds) const = 0;

 protected:
  GeneratorSpec spec_;
};

class PairedGan final : public GenerativeModel {
 public:
  explicit PairedGan(const GeneratorSpec& spec);
  std::string kind() const override { return "paired_gan"; }
  nn::Tensor predict(const nn::Tensor& input, const nn::Tensor& h,
                     const std::vector<std::uint64_t>& seeds) const override;

  ConditionalResnetGenerator& generator() { return *generator_; }
  const ConditionalResnetGenerator& generator() const { return *generator_; }
  PatchDiscriminator& discriminator() { return *discriminator_; }
  const PatchDiscriminator& discriminator() const { return *discriminator_; }

 private:
  std::unique_ptr<ConditionalResnetGenerator> generator_;
  std::unique_ptr<PatchDiscriminator> discriminator_;
};

/// Forward and backward generators receive h with a trailing direction flag
/// (0 forward, 1 backward).
class CycleGan final : public GenerativeModel {
 public:
  explicit CycleGan(const GeneratorSpec& spec);
  std::string kind() const override { return "cycle_gan"; }
  nn::Tensor predict(const nn::Tensor& input, const nn::Tensor& h,
                     const std::vector<std::uint64_t>& seeds) const override;

  static nn::Tensor with_direction(const nn::Tensor& h, bool backward);

  ConditionalResnetGenerator& forward_generator() { return *g_forward_; }
  ConditionalResnetGenerator& backward_generator() { return *g_backward_; }
  const ConditionalResnetGenerator& forward_generator() const { return *g_forward_; }
  const ConditionalResnetGenerator& backward_generator() const { return *g_backward_; }
  PatchDiscriminator& discriminator_a() { return *d_a_; }
  PatchDiscriminator& discriminator_b() { return *d_b_; }
  const PatchDiscriminator& discriminator_a() const { return *d_a_; }
  const PatchDiscriminator& discriminator_b() const { return *d_b_; }

 private:
  std::unique_ptr<ConditionalResnetGenerator> g_forward_, g_backward_;
  std::unique_ptr<PatchDiscriminator> d_a_, d_b_;
};

class ResidualDiffusion final : public GenerativeModel {
 public:
  ResidualDiffusion(const GeneratorSpec& spec, NoiseSchedule schedule);
  std::string kind() const override { return "residual_diffusion"; }

  const NoiseSchedule& schedule() const { return schedule_; }
  ContextEncoder& encoder() { return *encoder_; }
  const ContextEncoder& encoder() const { return *encoder_; }
  const DiffusionDenoiser& denoiser() const { return *denoiser_; }

  /// Predicted noise for a batch of noisy residuals at timesteps t.
  nn::Tensor predict_noise(const nn::Tensor& triplet, const nn::Tensor& noisy, const std::vector<int>& t,
                           const nn::Tensor& h) const;
  nn::Tensor predict_noise_with_context(const nn::Tensor& context, const nn::Tensor& noisy,
                                        const std::vector<int>& t, const nn::Tensor& h) const;

  /// Ancestral sampling from T to 1; returns the residual [N,1,H,W].
  nn::Tensor sample_residual(const nn::Tensor& triplet, const nn::Tensor& h,
                             const std::vector<std::uint64_t>& seeds) const;

  /// clamp(centre slice + sampled residual, 0, 1).
  nn::Tensor predict(const nn::Tensor& input, const nn::Tensor& h,
                     const std::vector<std::uint64_t>& seeds) const override;

 private:
  NoiseSchedule schedule_;
  std::unique_ptr<ContextEncoder> encoder_;
  std::unique_ptr<DiffusionDenoiser> denoiser_;
};

std::unique_ptr<ConditionalResnetGenerator> build_paired_generator(const GeneratorSpec& spec);
std::unique_ptr<PatchDiscriminator> build_patchgan_discriminator(const GeneratorSpec& spec);
std::unique_ptr<CycleGan> build_cycle_pair(const GeneratorSpec& spec);
std::unique_ptr<ResidualDiffusion> build_diffusion_model(const GeneratorSpec& spec, const NoiseSchedule& schedule);

/// Builds the model for spec.family (schedule used for diffusion only).
std::unique_ptr<GenerativeModel> build_model(const GeneratorSpec& spec, const NoiseSchedule& schedule = {});

/// Stacks per-sample conditioning vectors into [N, K].
nn::Tensor stack_rows(const std::vector<std::vector<float>>& rows);

}  // namespace vt
