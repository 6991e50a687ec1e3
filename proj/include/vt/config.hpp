#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vt/cohort.hpp"
#include "vt/preprocess.hpp"
#include "vt/training.hpp"

namespace vt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PairsOptions {
  unsigned long long seed = 0;
  bool include_identity = true;
};

struct InferOptions {
  unsigned long long seed = 0;
  std::vector<double> trajectory_doses{10, 20, 30, 40, 50, 60};
  int roi_pad = 0;
};

struct EvalOptions {
  int otsu_bins = 256;
  bool largest_component = false;
  double summary_max_delta_gy = 40.0;  // cutoff for the headline mean |dV|
};

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string model_dir;  // empty: <workdir>/models
  int workers = 4;
};

/// Where each stage reads and writes under the work directory.
struct StagePaths {
  std::filesystem::path root;

  std::filesystem::path cohort_dir() const { return root / "cohort"; }
  std::filesystem::path cohort_manifest() const { return cohort_dir() / "manifest.json"; }
  std::filesystem::path preprocessed_dir() const { return root / "preprocessed"; }
  std::filesystem::path preprocessed_manifest() const { return preprocessed_dir() / "preprocess.json"; }
  std::filesystem::path pairs_dir() const { return root / "pairs"; }
  std::filesystem::path models_dir() const { return root / "models"; }
  std::filesystem::path checkpoint(const std::string& id) const { return models_dir() / (id + ".vtck"); }
  std::filesystem::path train_report(const std::string& id) const { return models_dir() / (id + ".train.json"); }
  std::filesystem::path inference_dir() const { return root / "inference"; }
  std::filesystem::path inference_summary(const std::string& id) const {
    return inference_dir() / id / "summary.json";
  }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path profile_dir() const { return root / "profile"; }
  std::filesystem::path plots_dir() const { return root / "plots"; }
};

struct RunConfig {
  std::string workdir = "vt_run";
  int workers = 1;
  PhantomConfig phantom;
  PreprocessOptions preprocess;
  PairsOptions pairs;
  TrainConfig train;
  std::string model_id;  // empty: the family name
  InferOptions infer;
  EvalOptions eval;
  ServiceOptions service;

  StagePaths paths() const { return {workdir}; }
  std::string resolved_model_id() const { return model_id.empty() ? to_string(train.family) : model_id; }
  std::filesystem::path service_model_dir() const {
    return service.model_dir.empty() ? paths().models_dir() : std::filesystem::path(service.model_dir);
  }

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);

/// Strict: unknown keys and wrong types are ConfigErrors. Missing keys keep
/// their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);

/// "a.b.c=value"; value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults, then the file (if any), then overrides in order; validated.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace vt
