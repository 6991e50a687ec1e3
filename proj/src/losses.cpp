#include "vt/losses.hpp"

#include <cmath>
#include <string>

namespace vt::losses {

namespace {

template <typename T>
void check_sizes(std::span<const T> a, std::span<const T> b, const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

template <typename T>
double l1_impl(std::span<const T> pred, std::span<const T> target) {
  check_sizes(pred, target, "l1_mean");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(static_cast<double>(pred[i]) - target[i]);
  return acc / static_cast<double>(pred.size());
}

template <typename T>
double tumor_impl(std::span<const T> pred, std::span<const T> target, std::span<const T> mask) {
  check_sizes(pred, target, "tumor_l1");
  check_sizes(pred, mask, "tumor_l1");
  double acc = 0, count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] != 0 && mask[i] != 1) throw std::invalid_argument("tumor_l1: mask is not binary");
    count += mask[i];
    acc += std::abs(static_cast<double>(pred[i]) - target[i]) * mask[i];
  }
  if (count == 0) throw EmptyMaskError("tumor_l1: CTV mask is empty");
  return acc / count;
}

double mean_sq(std::span<const float> v, double c) {
  if (v.empty()) throw std::invalid_argument("adversarial_terms: empty patch map");
  double acc = 0;
  for (float x : v) acc += (x - c) * (x - c);
  return acc / static_cast<double>(v.size());
}

}  // namespace

void LossConfig::validate() const {
  if (lambda_tumor < 0 || adversarial_weight < 0 || l1_weight < 0 || cycle_weight < 0)
    throw std::invalid_argument("loss weights must be non-negative");
}

double l1_mean(std::span<const float> pred, std::span<const float> target) { return l1_impl(pred, target); }
double l1_mean(std::span<const double> pred, std::span<const double> target) { return l1_impl(pred, target); }

double noise_l1(std::span<const float> eps_pred, std::span<const float> eps_true) {
  return l1_impl(eps_pred, eps_true);
}

double tumor_l1(std::span<const float> pred, std::span<const float> target, std::span<const float> mask) {
  return tumor_impl(pred, target, mask);
}
double tumor_l1(std::span<const double> pred, std::span<const double> target, std::span<const double> mask) {
  return tumor_impl(pred, target, mask);
}

double composite(double main, double tumor, double lambda) { return main + lambda * tumor; }

double adversarial_terms(std::span<const float> disc_real, std::span<const float> disc_fake, AdversarialRole role) {
  if (role == AdversarialRole::generator) return mean_sq(disc_fake, 1.0);
  return 0.5 * (mean_sq(disc_real, 1.0) + mean_sq(disc_fake, 0.0));
}

double cycle_term(std::span<const float> x, std::span<const float> x_reconstructed) {
  return l1_impl(x, x_reconstructed);
}

}  // namespace vt::losses
