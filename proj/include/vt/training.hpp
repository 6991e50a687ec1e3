#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vt/checkpoint.hpp"
#include "vt/losses.hpp"
#include "vt/models.hpp"
#include "vt/nn/tensor.hpp"
#include "vt/pairing.hpp"

namespace vt {

/// Raised when a loss turns non-finite; what() carries the last batch stats.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Family family = Family::diffusion_25d;
  int epochs = 1;
  int batch_size = 8;
  double lr_generator = 2e-4;
  double lr_discriminator = 2e-4;
  double lr_diffusion = 1e-4;
  losses::LossConfig loss;
  unsigned long long seed = 0;
  int checkpoint_every = 0;  // epochs between intermediate saves; 0 = final only
  std::string device = "cpu";
  int workers = 1;

  int base_channels = 16;
  int n_res_blocks = 4;
  int embed_dim = 64;
  int context_channels = 16;
  int diffusion_steps = 250;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  void validate() const;
};

struct TrainReport {
  std::string model_id;
  Family family = Family::paired_gan;
  int epochs = 0;
  std::map<std::string, std::vector<double>> curves;  // one mean value per epoch
  std::optional<double> validation_l1;
  double wall_seconds = 0.0;
  std::string checkpoint;
  std::vector<std::string> patients_read;  // by the training loader

  std::string to_json() const;
};

struct TrainResult {
  TrainReport report;
  std::shared_ptr<GenerativeModel> model;
  CheckpointMeta meta;
};

/// Where the run writes and what it records about its data.
struct TrainSetup {
  std::string model_id;
  CohortStats stats;
  std::string preprocess_fingerprint;
  std::filesystem::path checkpoint;     // empty: do not save
  const SliceDataset* val = nullptr;    // validated once after the last epoch
};

/// Batch tensors assembled from slice samples.
struct Batch {
  nn::Tensor input;   // [B, C, H, W]
  nn::Tensor target;  // [B, 1, H, W]
  nn::Tensor mask;    // [B, 1, H, W]
  nn::Tensor h;       // [B, K]
  std::vector<std::string> patients;
};

Batch make_batch(const std::vector<SliceSample>& samples);

/// Diffusion objective terms for one batch given the predicted noise.
struct DiffusionTerms {
  nn::Tensor main;   // noise-space L1
  nn::Tensor tumor;  // masked L1 of the one-step reconstruction
  nn::Tensor total;  // main + lambda * tumor
};

/// x0_hat = centre + (noisy - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
DiffusionTerms diffusion_objective(const nn::Tensor& eps_hat, const nn::Tensor& eps, const nn::Tensor& noisy,
                                   const std::vector<int>& t, const nn::Tensor& centre, const Batch& batch,
                                   const NoiseSchedule& schedule, double lambda);

GeneratorSpec spec_for(const TrainConfig& config, const SliceDataset& data);

TrainResult train_paired_gan(const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup);
TrainResult train_cycle_gan(const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup);
TrainResult train_diffusion(const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup);

/// Dispatches on config.family.
TrainResult train_model(const SliceDataset& train, const TrainConfig& config, const TrainSetup& setup);

/// Per-sample predictions over a dataset; sample i uses seed mix(seed, i).
std::vector<std::vector<float>> predict_dataset(const GenerativeModel& model, const SliceDataset& data,
                                                unsigned long long seed, int batch_size = 16);

/// Mean tumour L1 over all samples of the dataset.
double validate(const GenerativeModel& model, const SliceDataset& data, unsigned long long seed, int batch_size = 16);
double validate(const std::filesystem::path& checkpoint, const SliceDataset& data, unsigned long long seed,
                int batch_size = 16);

}  // namespace vt
