#include "aprecond/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace aprecond {

double lambda_of_t(double t) {
  if (!(t > 0.0)) throw std::domain_error("lambda_of_t: t must be positive, got " + std::to_string(t));
  return -std::log(t);
}

double t_of_lambda(double lambda) {
  if (!std::isfinite(lambda)) throw std::domain_error("t_of_lambda: lambda must be finite");
  const double t = std::exp(-lambda);
  if (!std::isfinite(t) || t <= 0.0) {
    throw std::overflow_error("t_of_lambda: e^{-lambda} saturates for lambda=" + std::to_string(lambda));
  }
  return t;
}

TimeGrid edm_grid(std::size_t n_steps, double t_min, double t_max, double rho) {
  if (n_steps < 1) throw std::invalid_argument("edm_grid: n_steps must be >= 1");
  if (!(t_min > 0.0) || !(t_max > t_min)) throw std::invalid_argument("edm_grid: need 0 < t_min < t_max");
  if (!(rho > 0.0)) throw std::invalid_argument("edm_grid: rho must be positive");

  TimeGrid grid{n_steps, t_min, t_max, rho, {}};
  grid.points.resize(n_steps + 1);
  const double hi = std::pow(t_max, 1.0 / rho);
  const double lo = std::pow(t_min, 1.0 / rho);
  const auto n = static_cast<double>(n_steps);
  for (std::size_t i = 0; i <= n_steps; ++i) {
    grid.points[i] = std::pow(hi + (static_cast<double>(i) / n) * (lo - hi), rho);
  }
  grid.points.front() = t_max;
  grid.points.back() = t_min;
  return grid;
}

}  // namespace aprecond
