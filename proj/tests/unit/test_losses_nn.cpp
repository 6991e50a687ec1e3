#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vt/losses.hpp"
#include "vt/nn/ops.hpp"
#include "vt/nn/tensor.hpp"

using namespace vt;
using nn::Tensor;

namespace {

std::vector<float> randoms(std::size_t n, std::mt19937& rng, float lo = -1, float hi = 1) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Analytic gradient of a scalar-valued graph w.r.t. x against central differences.
void check_gradient(const std::vector<float>& x0, const nn::Shape& shape,
                    const std::function<Tensor(const Tensor&)>& f, double rel = 1e-2, double abs_tol = 2e-3) {
  auto x = Tensor::from(shape, x0, true);
  auto y = f(x);
  y.backward();
  const std::vector<float> g(x.grad().begin(), x.grad().end());
  auto scalar = [&](std::span<const float> v) {
    nn::NoGradGuard ng;
    return static_cast<double>(f(Tensor::from(shape, {v.begin(), v.end()})).item());
  };
  for (std::size_t i = 0; i < x0.size(); i += std::max<std::size_t>(1, x0.size() / 23)) {
    const double fd = oracle::central_difference(scalar, x0, i, 1e-2);
    CHECK(std::abs(g[i] - fd) <= abs_tol + rel * std::abs(fd));
  }
}

}  // namespace

TEST_CASE("l1 family identities") {
  std::mt19937 rng(1);
  const auto a = randoms(200, rng), b = randoms(200, rng);
  CHECK(losses::l1_mean(a, a) == 0.0);
  auto shifted = a;
  for (auto& x : shifted) x += 0.1f;
  CHECK(losses::l1_mean(shifted, a) == doctest::Approx(0.1).epsilon(1e-5));
  double loop = 0;
  for (std::size_t i = 0; i < a.size(); ++i) loop += std::abs(static_cast<double>(a[i]) - b[i]);
  CHECK(std::abs(losses::l1_mean(a, b) - loop / a.size()) < 1e-6);
  CHECK(losses::noise_l1(a, b) == losses::noise_l1(b, a));
  CHECK(losses::noise_l1(a, b) == losses::l1_mean(a, b));
  CHECK(losses::cycle_term(a, b) == losses::l1_mean(a, b));
  CHECK(losses::cycle_term(a, a) == 0.0);
}

TEST_CASE("tumour-focused l1") {
  std::mt19937 rng(2);
  const auto p = randoms(100, rng), t = randoms(100, rng);
  const std::vector<float> ones(100, 1.0f);
  CHECK(std::abs(losses::tumor_l1(p, t, ones) - losses::l1_mean(p, t)) < 1e-6);

  std::vector<float> one_voxel(100, 0.0f), q = t;
  one_voxel[17] = 1;
  q[17] = t[17] + 0.3f;
  CHECK(losses::tumor_l1(q, t, one_voxel) == doctest::Approx(0.3).epsilon(1e-5));

  auto outside = t;
  for (std::size_t i = 0; i < outside.size(); ++i)
    if (!one_voxel[i]) outside[i] += 5;
  CHECK(losses::tumor_l1(outside, t, one_voxel) == 0.0);

  // padding with unmasked voxels leaves it unchanged
  auto p2 = p, t2 = t, m2 = std::vector<float>(100, 0.0f);
  for (int i = 0; i < 40; ++i) m2[i] = 1;
  const double base = losses::tumor_l1(p2, t2, m2);
  p2.resize(300, 0.7f);
  t2.resize(300, 0.1f);
  m2.resize(300, 0.0f);
  CHECK(losses::tumor_l1(p2, t2, m2) == base);

  CHECK_THROWS_AS(losses::tumor_l1(p, t, std::vector<float>(100, 0.0f)), losses::EmptyMaskError);
}

TEST_CASE("composite and adversarial terms") {
  CHECK(losses::composite(0.4, 0.2, 0) == 0.4);
  CHECK(losses::composite(0, 0.2, 1) == doctest::Approx(0.2));
  for (double l : {0.0, 1.0, 2.0}) CHECK(losses::composite(0.3, 0.2, l) == doctest::Approx(0.3 + 0.2 * l));
  const std::vector<float> ones(9, 1.0f), zeros(9, 0.0f), c(9, 0.3f);
  CHECK(losses::adversarial_terms(ones, ones, losses::AdversarialRole::generator) == 0.0);
  CHECK(losses::adversarial_terms(ones, zeros, losses::AdversarialRole::discriminator) == 0.0);
  CHECK(losses::adversarial_terms(ones, c, losses::AdversarialRole::generator) ==
        doctest::Approx(0.49).epsilon(1e-6));
  losses::LossConfig cfg;
  cfg.lambda_tumor = -1;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("masked l1 gradient: zero outside, finite differences inside") {
  std::mt19937 rng(3);
  const nn::Shape shape{2, 1, 6, 6};
  auto pred0 = randoms(72, rng, 0, 1), target = randoms(72, rng, 0, 1);
  std::vector<float> mask(72, 0.0f);
  for (int s = 0; s < 2; ++s)
    for (int i = 1; i < 4; ++i)
      for (int j = 2; j < 5; ++j) mask[s * 36 + i * 6 + j] = 1;
  // keep away from the |.| kink
  for (std::size_t i = 0; i < pred0.size(); ++i)
    if (std::abs(pred0[i] - target[i]) < 0.05f) pred0[i] = target[i] + 0.1f;

  const auto T = Tensor::from(shape, target), M = Tensor::from(shape, mask);
  auto pred = Tensor::from(shape, pred0, true);
  auto loss = nn::masked_l1_loss(pred, T, M);
  loss.backward();
  auto value = [&](std::span<const float> v) {
    nn::NoGradGuard ng;
    return static_cast<double>(nn::masked_l1_loss(Tensor::from(shape, {v.begin(), v.end()}), T, M).item());
  };
  for (std::size_t i = 0; i < pred0.size(); ++i) {
    if (mask[i] == 0) {
      CHECK(pred.grad()[i] == 0.0f);
      auto moved = pred0;
      moved[i] += 0.37f;
      CHECK(value(moved) == value(pred0));
    } else {
      const double fd = oracle::central_difference(value, pred0, i, 1e-3);
      CHECK(std::abs(pred.grad()[i] - fd) <= 1e-4 * std::abs(fd) + 1e-4);
    }
  }
  CHECK(loss.item() == doctest::Approx(losses::tumor_l1(pred0, target, mask) * 1.0).epsilon(1e-6));
}

TEST_CASE("operator gradients agree with finite differences") {
  std::mt19937 rng(4);
  SUBCASE("conv2d") {
    const auto w = Tensor::from({3, 2, 3, 3}, randoms(54, rng, -0.5f, 0.5f));
    const auto b = Tensor::from({3}, randoms(3, rng));
    check_gradient(randoms(2 * 2 * 7 * 7, rng), {2, 2, 7, 7},
                   [&](const Tensor& x) { return nn::mean(nn::mul(nn::conv2d(x, w, b, 2, 1), nn::conv2d(x, w, b, 2, 1))); });
  }
  SUBCASE("conv2d weights") {
    const auto x = Tensor::from({1, 2, 5, 5}, randoms(50, rng));
    const auto b = Tensor::from({2}, randoms(2, rng));
    check_gradient(randoms(2 * 2 * 3 * 3, rng), {2, 2, 3, 3}, [&](const Tensor& w) {
      auto y = nn::conv2d(x, w, b, 1, 1);
      return nn::mean(nn::mul(y, y));
    });
  }
  SUBCASE("linear") {
    const auto w = Tensor::from({4, 5}, randoms(20, rng));
    const auto b = Tensor::from({4}, randoms(4, rng));
    check_gradient(randoms(15, rng), {3, 5}, [&](const Tensor& x) {
      auto y = nn::linear(x, w, b);
      return nn::mean(nn::mul(y, y));
    });
  }
  SUBCASE("group norm") {
    const auto g = Tensor::from({4}, randoms(4, rng, 0.5f, 1.5f));
    const auto b = Tensor::from({4}, randoms(4, rng));
    const auto wts = Tensor::from({2, 4, 3, 3}, randoms(72, rng));
    check_gradient(randoms(72, rng), {2, 4, 3, 3},
                   [&](const Tensor& x) { return nn::mean(nn::mul(nn::group_norm(x, 2, g, b), wts)); });
  }
  SUBCASE("activations") {
    const auto wts = Tensor::from({1, 1, 4, 4}, randoms(16, rng));
    for (auto act : std::vector<std::function<Tensor(const Tensor&)>>{
             [](const Tensor& x) { return nn::silu(x); }, [](const Tensor& x) { return nn::sigmoid(x); },
             [](const Tensor& x) { return nn::tanh(x); }, [](const Tensor& x) { return nn::leaky_relu(x, 0.2f); }})
      check_gradient(randoms(16, rng), {1, 1, 4, 4}, [&](const Tensor& x) { return nn::mean(nn::mul(act(x), wts)); });
  }
  SUBCASE("channel broadcast and concat") {
    const auto v = Tensor::from({2, 3}, randoms(6, rng));
    const auto other = Tensor::from({2, 1, 2, 2}, randoms(8, rng));
    check_gradient(randoms(24, rng), {2, 3, 2, 2}, [&](const Tensor& x) {
      auto y = nn::concat_channels(nn::add_channel(nn::mul_channel(x, v), v), other);
      return nn::mean(nn::mul(y, y));
    });
  }
}
