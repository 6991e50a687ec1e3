#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

#include "vt/cohort.hpp"
#include "vt/models.hpp"

namespace vt {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to rebuild a model and feed it correctly normalised data.
struct CheckpointMeta {
  static constexpr int kFormatVersion = 1;

  std::string model_id;
  GeneratorSpec spec;
  int schedule_steps = 0;  // 0 for GAN families
  double beta_start = 0.0;
  double beta_end = 0.0;
  CohortStats stats;                   // training-split normalisation stats
  std::string preprocess_fingerprint;  // preprocessing the model was trained on
  int epochs_trained = 0;
  unsigned long long train_seed = 0;

  NoiseSchedule schedule() const;
};

/// Layout: "VTCK" magic, u32 version, u64 header length, JSON header, then
/// every parameter as little-endian float32 in registration order.
void save_checkpoint(const std::filesystem::path& path, const GenerativeModel& model, const CheckpointMeta& meta);

struct LoadedModel {
  std::shared_ptr<GenerativeModel> model;
  CheckpointMeta meta;
};

LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace vt
