#pragma once

// Teacher PF-ODE dx/dt = (x − D(x, t)) / t: right-hand side, Euler and Heun
// solvers over a decreasing time sequence, and a dense-grid Heun reference
// used wherever an "exact" trajectory point is needed.

#include <iosfwd>
#include <span>
#include <vector>

#include "aprecond/common.hpp"
#include "aprecond/schedule.hpp"
#include "aprecond/tables.hpp"
#include "aprecond/teacher.hpp"

namespace aprecond {

struct Trajectory {
  std::vector<double> times;  // strictly decreasing
  std::vector<Vec> states;
};

inline constexpr std::size_t kDefaultOracleSubsteps = 1000;

Vec pf_rhs(const GaussianMixture& gm, ConstVecRef x, double t);

/// x_s = (s/t) x + (1 − s/t) D(x, t).
Vec euler_step(const GaussianMixture& gm, ConstVecRef x, double t, double s);

/// EDM Heun: Euler predictor, trapezoidal corrector.
Vec heun_step(const GaussianMixture& gm, ConstVecRef x, double t, double s);

/// Integrates through every time of `times` (strictly decreasing, >= 2 entries).
/// Throws DivergenceError with the step index when the state blows up.
Trajectory solve_heun(const GaussianMixture& gm, ConstVecRef x_start, std::span<const double> times);
Trajectory solve_heun(const GaussianMixture& gm, ConstVecRef x_start, const TimeGrid& grid);
Trajectory solve_euler(const GaussianMixture& gm, ConstVecRef x_start, std::span<const double> times);
Trajectory solve_euler(const GaussianMixture& gm, ConstVecRef x_start, const TimeGrid& grid);

/// Heun on an n_sub-step ρ=7 sub-grid of [s, t]. Requires 0 < s <= t, n_sub >= 100.
Vec exact_jump_oracle(const GaussianMixture& gm, ConstVecRef x, double t, double s,
                      std::size_t n_sub = kDefaultOracleSubsteps);

/// Same integration as exact_jump_oracle but returns x_s − x accumulated from
/// the step increments, which keeps short jumps free of cancellation.
Vec exact_jump_displacement(const GaussianMixture& gm, ConstVecRef x, double t, double s,
                            std::size_t n_sub = kDefaultOracleSubsteps);

/// Optimal student denoiser under the forward Analytic coefficients:
///   D* = S_t (L_s x_s − L_t x_t) / (η_s − η_t) + (1 − l_t) x_t
/// with x_s from the dense reference. Throws std::domain_error when
/// |η_s − η_t| < 1e-14 and std::invalid_argument unless 0 < s < t.
Vec optimal_student_denoiser(const GaussianMixture& gm, const PrecondTables& tables, ConstVecRef x, double t,
                             double s, std::size_t n_sub = kDefaultOracleSubsteps);

/// CSV with columns traj,step,t,x_0..x_{d-1}.
void write_trajectories_csv(std::ostream& out, std::span<const Trajectory> trajectories);

}  // namespace aprecond
