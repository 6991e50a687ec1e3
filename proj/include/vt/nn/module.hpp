#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "vt/nn/ops.hpp"
#include "vt/nn/tensor.hpp"

namespace vt::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Tree of layers owning parameters. Modules are neither copyable nor
/// movable so children can be registered by address.
class Module {
 public:
  explicit Module(std::string name) : name_(std::move(name)) {}
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  const std::string& name() const { return name_; }
  virtual std::string kind() const = 0;

  const std::vector<Module*>& children() const { return children_; }
  const std::deque<NamedTensor>& local_parameters() const { return params_; }

  /// All parameters in registration order, names prefixed by the module path.
  std::vector<NamedTensor> parameters() const;

 protected:
  Tensor& register_parameter(std::string name, Tensor t);
  template <typename M>
  M& register_child(M& child) {
    children_.push_back(&child);
    return child;
  }

 private:
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

  std::string name_;
  std::deque<NamedTensor> params_;
  std::vector<Module*> children_;
};

/// One leaf-layer invocation captured while a LayerTrace is active.
struct LayerCall {
  const Module* layer = nullptr;
  Shape input;
  Shape output;
};

/// Captures leaf-layer calls on the current thread for its lifetime.
class LayerTrace {
 public:
  LayerTrace();
  ~LayerTrace();
  LayerTrace(const LayerTrace&) = delete;
  LayerTrace& operator=(const LayerTrace&) = delete;

  const std::vector<LayerCall>& calls() const { return calls_; }

  /// Called by leaf layers; no-op when no trace is active.
  static void record(const Module& layer, const Shape& input, const Shape& output);

 private:
  LayerTrace* previous_;
  std::vector<LayerCall> calls_;
};

using Rng = std::mt19937_64;

class Conv2d final : public Module {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad, bool bias, Rng& rng);
  std::string kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& x) const;

  int in_channels, out_channels, kernel, stride, pad;
  bool has_bias;
  Tensor weight;
  Tensor bias;  // undefined when has_bias is false
};

class Linear final : public Module {
 public:
  Linear(std::string name, int in_features, int out_features, Rng& rng);
  std::string kind() const override { return "linear"; }
  Tensor forward(const Tensor& x) const;

  /// Sets weights and bias to zero (e.g. identity-initialised modulation).
  void zero_init();

  int in_features, out_features;
  Tensor weight;
  Tensor bias;
};

class GroupNorm final : public Module {
 public:
  GroupNorm(std::string name, int groups, int channels);
  std::string kind() const override { return "group_norm"; }
  Tensor forward(const Tensor& x) const;

  int groups, channels;
  Tensor gamma;
  Tensor beta;
};

/// Adam; gradients are read from each parameter's grad buffer.
class Adam {
 public:
  Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);
  void zero_grad();
  void step();
  float lr;

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  float beta1_, beta2_, eps_;
  long step_count_ = 0;
};

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named);

/// Total element count over every parameter tensor reachable from the module.
std::int64_t parameter_elements(const Module& m);

}  // namespace vt::nn
