#pragma once

// Validation metrics: consistency gap of the optimal student, its a-priori
// bound, trajectory alignment against the teacher, and sample distances.

#include <span>
#include <vector>

#include "aprecond/common.hpp"
#include "aprecond/ode.hpp"
#include "aprecond/parallel.hpp"
#include "aprecond/tables.hpp"
#include "aprecond/teacher.hpp"

namespace aprecond {

/// ‖D*(x, t, s) − D(x, t)‖ with D* the optimal student under the forward coefficients.
double consistency_gap(const GaussianMixture& gm, const PrecondTables& tables, ConstVecRef x, double t, double s,
                       std::size_t n_sub = kDefaultOracleSubsteps);

/// ((t/s)^{3C} − 1)/(3C) written as a function of a = 3C and log(t/s); uses the
/// series when a·log(t/s) < 1e-6.
double bound_prefactor(double three_c, double log_ratio);

struct GapBound {
  double bound = 0.0;
  double prefactor = 0.0;
  double C = 0.0;
  double max_term = 0.0;  // max over τ of ‖dg/dλ − s_τ g‖
};

/// Bound on consistency_gap. τ runs over n_tau points uniform in λ on [λ_t, λ_s]
/// plus the table nodes inside, visited along the reference trajectory through
/// (x, t); at interior nodes both one-sided slopes of l are tried.
GapBound gap_bound(const GaussianMixture& gm, const PrecondTables& tables, ConstVecRef x, double t, double s,
                   std::size_t n_tau = 64, std::size_t n_sub = kDefaultOracleSubsteps);

struct TrajectoryMse {
  std::vector<double> times;     // jump times after the start point
  std::vector<double> per_time;  // mean over trajectories of ‖x_student − x_teacher‖² / d
  double aggregate = 0.0;        // mean of per_time
};

/// Throws std::invalid_argument if the sets differ in size or any pair differs in times.
TrajectoryMse trajectory_mse(std::span<const Trajectory> student, std::span<const Trajectory> teacher);

/// W1 between two 1-D empirical distributions (sizes may differ). Throws on empty input.
double wasserstein1_1d(std::span<const double> a, std::span<const double> b);

/// Energy distance 2E‖X−Y‖ − E‖X−X'‖ − E‖Y−Y'‖ (V-statistic). Throws on empty input.
double energy_distance(const std::vector<Vec>& a, const std::vector<Vec>& b, Exec exec = Exec::parallel);

}  // namespace aprecond
