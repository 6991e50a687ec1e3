#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vt/models.hpp"
#include "vt/nn/module.hpp"

namespace vt {

class UnsupportedLayer : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// conv: Cin Cout k^2 Hout Wout per sample; dense: in out per sample;
/// normalisation: 0. Anything else throws UnsupportedLayer naming the layer.
std::int64_t layer_macs(const nn::LayerCall& call);
std::int64_t count_macs(const std::vector<nn::LayerCall>& calls);

/// Leaf-layer calls made by fn on this thread.
std::vector<nn::LayerCall> trace_layers(const std::function<void()>& fn);

std::int64_t count_params(const nn::Module& module);

struct MacsReport {
  std::string model_id;
  Family family = Family::paired_gan;
  std::int64_t params = 0;           // every trained network of the family
  std::int64_t train_forward_macs = 0;  // forward passes of one optimisation step, per sample
  std::int64_t train_macs = 0;       // 3 x train_forward_macs (backward taken as 2x forward)
  std::int64_t infer_macs = 0;       // one generated slice
  std::map<std::string, std::int64_t> components;  // per-network forward cost

  double train_gmacs() const { return train_macs / 1e9; }
  double infer_gmacs() const { return infer_macs / 1e9; }
  double reduction_percent() const { return 100.0 * (1.0 - static_cast<double>(infer_macs) / train_macs); }
};

/// Costs on a rows x cols slice (or triplet) with batch size 1.
MacsReport profile_model(const GenerativeModel& model, int rows, int cols, const std::string& model_id);

/// costs.csv (model, params, train GMACs, infer GMACs, reduction %) and,
/// for non-empty input, cost_bubbles.png: log cost on x, mean |dV| on y,
/// radius proportional to params, dark train and light inference bubbles.
std::vector<std::filesystem::path> emit_cost_report(const std::vector<MacsReport>& reports,
                                                    const std::map<std::string, double>& mean_delta_v,
                                                    const std::filesystem::path& out_dir);

}  // namespace vt
