#include "vt/nn/module.hpp"

#include <cmath>
#include <stdexcept>

namespace vt::nn {

namespace {

thread_local LayerTrace* t_active_trace = nullptr;

Tensor uniform_tensor(Shape shape, float bound, Rng& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

std::vector<NamedTensor> Module::parameters() const {
  std::vector<NamedTensor> out;
  collect(name_, out);
  return out;
}

void Module::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (const auto& p : params_) out.push_back({prefix + "." + p.name, p.tensor});
  for (const Module* c : children_) c->collect(prefix + "." + c->name(), out);
}

Tensor& Module::register_parameter(std::string name, Tensor t) {
  t.set_requires_grad(true);
  params_.push_back({std::move(name), std::move(t)});
  return params_.back().tensor;
}

LayerTrace::LayerTrace() : previous_(t_active_trace) { t_active_trace = this; }
LayerTrace::~LayerTrace() { t_active_trace = previous_; }

void LayerTrace::record(const Module& layer, const Shape& input, const Shape& output) {
  if (t_active_trace) t_active_trace->calls_.push_back({&layer, input, output});
}

Conv2d::Conv2d(std::string name, int in_c, int out_c, int k, int s, int p, bool use_bias, Rng& rng)
    : Module(std::move(name)), in_channels(in_c), out_channels(out_c), kernel(k), stride(s), pad(p), has_bias(use_bias) {
  if (in_c < 1 || out_c < 1 || k < 1 || s < 1 || p < 0) throw std::invalid_argument("Conv2d: invalid geometry");
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_c * k * k));
  weight = register_parameter("weight", uniform_tensor({out_c, in_c, k, k}, bound, rng));
  if (use_bias) bias = register_parameter("bias", uniform_tensor({out_c}, bound, rng));
}

Tensor Conv2d::forward(const Tensor& x) const {
  auto y = conv2d(x, weight, bias, stride, pad);
  LayerTrace::record(*this, x.shape(), y.shape());
  return y;
}

Linear::Linear(std::string name, int in_f, int out_f, Rng& rng)
    : Module(std::move(name)), in_features(in_f), out_features(out_f) {
  if (in_f < 1 || out_f < 1) throw std::invalid_argument("Linear: invalid geometry");
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_f));
  weight = register_parameter("weight", uniform_tensor({out_f, in_f}, bound, rng));
  bias = register_parameter("bias", uniform_tensor({out_f}, bound, rng));
}

Tensor Linear::forward(const Tensor& x) const {
  auto y = linear(x, weight, bias);
  LayerTrace::record(*this, x.shape(), y.shape());
  return y;
}

void Linear::zero_init() {
  for (auto& v : weight.data()) v = 0.0f;
  for (auto& v : bias.data()) v = 0.0f;
}

GroupNorm::GroupNorm(std::string name, int g, int c) : Module(std::move(name)), groups(g), channels(c) {
  if (g < 1 || c % g != 0) throw std::invalid_argument("GroupNorm: channels must be divisible by groups");
  gamma = register_parameter("gamma", Tensor::full({c}, 1.0f));
  beta = register_parameter("beta", Tensor::zeros({c}));
}

Tensor GroupNorm::forward(const Tensor& x) const {
  auto y = group_norm(x, groups, gamma, beta);
  LayerTrace::record(*this, x.shape(), y.shape());
  return y;
}

Adam::Adam(std::vector<Tensor> params, float learning_rate, float beta1, float beta2, float eps)
    : lr(learning_rate), params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++step_count_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(step_count_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1 - beta2_) * g[j] * g[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

std::int64_t parameter_elements(const Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += static_cast<std::int64_t>(p.tensor.numel());
  return n;
}

}  // namespace vt::nn
