#pragma once

#include <cstddef>
#include <vector>

namespace aprecond {

/// Log-time λ = −log t. Throws std::domain_error for t <= 0.
double lambda_of_t(double t);

/// Inverse of lambda_of_t. Throws std::overflow_error when e^{−λ} is not a
/// finite positive double.
double t_of_lambda(double lambda);

/// EDM ρ-schedule, stored high-to-low (t_max first, t_min last).
struct TimeGrid {
  std::size_t n_steps = 0;
  double t_min = 0.0;
  double t_max = 0.0;
  double rho = 0.0;
  std::vector<double> points;

  std::size_t size() const { return points.size(); }
  double operator[](std::size_t i) const { return points[i]; }
};

/// points[i] = (t_max^{1/ρ} + (i/N)(t_min^{1/ρ} − t_max^{1/ρ}))^ρ with exact endpoints.
/// Throws std::invalid_argument on n_steps == 0, t bounds out of order or rho <= 0.
TimeGrid edm_grid(std::size_t n_steps, double t_min, double t_max, double rho);

}  // namespace aprecond
