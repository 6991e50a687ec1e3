#pragma once

#include <span>
#include <stdexcept>

namespace vt::losses {

struct LossConfig {
  double lambda_tumor = 1.0;
  double adversarial_weight = 1.0;
  double l1_weight = 10.0;
  double cycle_weight = 10.0;

  void validate() const;
};

/// Raised when the tumour term is evaluated on an all-zero mask.
class EmptyMaskError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// (1/N) sum |pred - target|.
double l1_mean(std::span<const float> pred, std::span<const float> target);
double l1_mean(std::span<const double> pred, std::span<const double> target);

/// Noise-space L1; same reduction as l1_mean over the noise grid.
double noise_l1(std::span<const float> eps_pred, std::span<const float> eps_true);

/// (1/sum M) sum |pred - target| * M. Throws EmptyMaskError if sum M == 0.
double tumor_l1(std::span<const float> pred, std::span<const float> target, std::span<const float> mask);
double tumor_l1(std::span<const double> pred, std::span<const double> target, std::span<const double> mask);

/// main + lambda * tumor.
double composite(double main, double tumor, double lambda);

enum class AdversarialRole { generator, discriminator };

/// Least-squares GAN terms over patch maps. Generator: mean((D(fake)-1)^2).
/// Discriminator: 0.5 * [mean((D(real)-1)^2) + mean(D(fake)^2)].
double adversarial_terms(std::span<const float> disc_real, std::span<const float> disc_fake, AdversarialRole role);

/// l1_mean(x, x_reconstructed).
double cycle_term(std::span<const float> x, std::span<const float> x_reconstructed);

}  // namespace vt::losses
