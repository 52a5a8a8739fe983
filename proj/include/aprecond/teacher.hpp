#pragma once

// Analytic Gaussian-mixture teacher. Every component is isotropic,
// N(m_k, σ_k² I), so the noisy marginal q_t is again a mixture with
// variances σ_k² + t² and the posterior mean E[x0 | x_t] is closed form.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "aprecond/common.hpp"

namespace aprecond {

class GaussianMixture {
 public:
  /// Throws std::invalid_argument unless weights are positive and sum to 1
  /// (within 1e-12), sigmas are positive and all means share one dimension.
  GaussianMixture(std::vector<double> weights, std::vector<Vec> means, std::vector<double> sigmas);

  /// (1/3) N(−2, 1) + (2/3) N(1, 0.25), the 1-D trajectory-alignment toy.
  static GaussianMixture two_mode();

  std::size_t dim() const { return dim_; }
  std::size_t components() const { return weights_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Vec>& means() const { return means_; }
  const std::vector<double>& sigmas() const { return sigmas_; }
  const std::vector<double>& log_weights() const { return log_weights_; }

  Vec mean() const;
  /// Per-coordinate variance averaged over coordinates.
  double variance() const;

 private:
  std::size_t dim_ = 0;
  std::vector<double> weights_;
  std::vector<Vec> means_;
  std::vector<double> sigmas_;
  std::vector<double> log_weights_;

  friend struct MixturePosterior;
};

/// Samples of q_t with the clean points that produced them.
struct NoisyBatch {
  double t = 0.0;
  std::vector<Vec> x;
  std::vector<Vec> x0;
};

std::vector<Vec> sample_data(const GaussianMixture& gm, std::size_t n, std::uint64_t seed);

/// x = x0 + t·ε. Throws std::domain_error for t < 0.
NoisyBatch sample_noisy(const GaussianMixture& gm, double t, std::size_t n, std::uint64_t seed);

/// Posterior mean E[x0 | x_t = x]. Throws std::domain_error for t <= 0.
Vec denoise(const GaussianMixture& gm, ConstVecRef x, double t);

/// Exact d×d Jacobian ∇_x D(x, t).
Eigen::MatrixXd denoiser_jacobian(const GaussianMixture& gm, ConstVecRef x, double t);

/// tr ∇_x D(x, t) without forming the Jacobian.
double denoiser_trace(const GaussianMixture& gm, ConstVecRef x, double t);

/// Jacobian-vector product (∇_x D) v in O(K·d).
Vec denoiser_jvp(const GaussianMixture& gm, ConstVecRef x, double t, ConstVecRef v);

/// Partial time derivative ∂_t D(x, t) at fixed x.
Vec denoiser_time_derivative(const GaussianMixture& gm, ConstVecRef x, double t);

/// Central-difference Jacobian. Test fallback only.
Eigen::MatrixXd denoiser_jacobian_fd(const GaussianMixture& gm, ConstVecRef x, double t, double step = 1e-5);

/// Modulated drift g = D(x, t) − (1 − l_t) x.
Vec g_phi(const GaussianMixture& gm, ConstVecRef x, double t, double l_t);

/// log q_t(x) of the noisy marginal.
double log_marginal_density(const GaussianMixture& gm, ConstVecRef x, double t);

}  // namespace aprecond
