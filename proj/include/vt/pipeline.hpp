#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "vt/config.hpp"

namespace vt {

/// An upstream stage has not produced its outputs yet.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(std::string stage, const std::string& what)
      : std::runtime_error(what + " (run the '" + stage + "' stage first)"), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Each stage reads its predecessors' outputs under config.workdir and returns
// a JSON summary. Re-running with the same config rewrites identical outputs.

nlohmann::json run_synth(const RunConfig& config);
nlohmann::json run_preprocess(const RunConfig& config);
nlohmann::json run_pairs(const RunConfig& config);
/// Skips training when the checkpoint and its report already match the config
/// and the preprocessing, unless force is set.
nlohmann::json run_train(const RunConfig& config, bool force = false);
/// Every checkpoint in the models directory, or only `model_id`.
nlohmann::json run_infer(const RunConfig& config, const std::optional<std::string>& model_id = {});
nlohmann::json run_eval(const RunConfig& config);
nlohmann::json run_profile(const RunConfig& config);
nlohmann::json run_plot(const RunConfig& config);

/// Checkpoint ids found in a directory, sorted.
std::vector<std::string> list_model_ids(const std::filesystem::path& models_dir);

}  // namespace vt
