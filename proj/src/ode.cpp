#include "aprecond/ode.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "aprecond/csv.hpp"

namespace aprecond {

namespace {

void check_times(std::span<const double> times) {
  if (times.size() < 2) throw std::invalid_argument("solver: need at least one step");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0.0)) throw std::invalid_argument("solver: times must be positive");
    if (i > 0 && !(times[i] < times[i - 1])) throw std::invalid_argument("solver: times must be strictly decreasing");
  }
}

// Heun increment x_s − x for one step t → s.
void heun_increment(const GaussianMixture& gm, ConstVecRef x, double t, double s, Vec& out) {
  const Vec d_t = denoise(gm, x, t);
  const std::size_t n = x.size();
  const double h = s - t;
  Vec pred(n);
  Vec slope_t(n);
  for (std::size_t j = 0; j < n; ++j) {
    slope_t[j] = (x[j] - d_t[j]) / t;
    pred[j] = x[j] + h * slope_t[j];
  }
  const Vec d_s = denoise(gm, pred, s);
  out.resize(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = 0.5 * h * (slope_t[j] + (pred[j] - d_s[j]) / s);
}

template <class Step>
Trajectory integrate(const GaussianMixture& gm, ConstVecRef x_start, std::span<const double> times, Step step) {
  check_times(times);
  if (x_start.size() != gm.dim()) throw std::invalid_argument("solver: x_start has wrong dimension");
  Trajectory traj;
  traj.times.assign(times.begin(), times.end());
  traj.states.reserve(times.size());
  traj.states.emplace_back(x_start.begin(), x_start.end());
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    Vec next = step(gm, traj.states.back(), times[i], times[i + 1]);
    if (!state_is_sane(next)) throw DivergenceError("solver diverged", i);
    traj.states.push_back(std::move(next));
  }
  return traj;
}

}  // namespace

Vec pf_rhs(const GaussianMixture& gm, ConstVecRef x, double t) {
  if (!(t > 0.0)) throw std::domain_error("pf_rhs: t must be positive");
  Vec out = denoise(gm, x, t);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (x[j] - out[j]) / t;
  return out;
}

Vec euler_step(const GaussianMixture& gm, ConstVecRef x, double t, double s) {
  if (s == t) return Vec(x.begin(), x.end());
  const Vec d = denoise(gm, x, t);
  const double r = s / t;
  Vec out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = r * x[j] + (1.0 - r) * d[j];
  return out;
}

Vec heun_step(const GaussianMixture& gm, ConstVecRef x, double t, double s) {
  Vec out(x.begin(), x.end());
  if (s == t) return out;
  Vec inc;
  heun_increment(gm, x, t, s, inc);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += inc[j];
  return out;
}

Trajectory solve_heun(const GaussianMixture& gm, ConstVecRef x_start, std::span<const double> times) {
  return integrate(gm, x_start, times, heun_step);
}

Trajectory solve_heun(const GaussianMixture& gm, ConstVecRef x_start, const TimeGrid& grid) {
  return solve_heun(gm, x_start, std::span<const double>(grid.points));
}

Trajectory solve_euler(const GaussianMixture& gm, ConstVecRef x_start, std::span<const double> times) {
  return integrate(gm, x_start, times, euler_step);
}

Trajectory solve_euler(const GaussianMixture& gm, ConstVecRef x_start, const TimeGrid& grid) {
  return solve_euler(gm, x_start, std::span<const double>(grid.points));
}

Vec exact_jump_displacement(const GaussianMixture& gm, ConstVecRef x, double t, double s, std::size_t n_sub) {
  if (!(s > 0.0) || !(s <= t)) throw std::invalid_argument("exact_jump_oracle: need 0 < s <= t");
  if (n_sub < 100) throw std::invalid_argument("exact_jump_oracle: n_sub must be >= 100");
  if (x.size() != gm.dim()) throw std::invalid_argument("exact_jump_oracle: x has wrong dimension");
  Vec total(x.size(), 0.0);
  if (s == t) return total;
  const TimeGrid sub = edm_grid(n_sub, s, t, 7.0);
  Vec state(x.begin(), x.end());
  Vec inc;
  for (std::size_t i = 0; i < n_sub; ++i) {
    heun_increment(gm, state, sub.points[i], sub.points[i + 1], inc);
    for (std::size_t j = 0; j < state.size(); ++j) {
      total[j] += inc[j];
      state[j] = x[j] + total[j];
    }
    if (!state_is_sane(state)) throw DivergenceError("exact_jump_oracle diverged", i);
  }
  return total;
}

Vec exact_jump_oracle(const GaussianMixture& gm, ConstVecRef x, double t, double s, std::size_t n_sub) {
  Vec out = exact_jump_displacement(gm, x, t, s, n_sub);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += x[j];
  return out;
}

Vec optimal_student_denoiser(const GaussianMixture& gm, const PrecondTables& tables, ConstVecRef x, double t,
                             double s, std::size_t n_sub) {
  if (!(s > 0.0) || !(s < t)) throw std::invalid_argument("optimal_student_denoiser: need 0 < s < t");
  const TablePoint at_t = tables.at(t);
  const TablePoint at_s = tables.at(s);
  const double d_eta = tables.eta_between(t, s);
  if (std::abs(d_eta) < 1e-14) throw std::domain_error("optimal_student_denoiser: degenerate interval (eta_s == eta_t)");
  const Vec dx = exact_jump_displacement(gm, x, t, s, n_sub);
  // L_s x_s − L_t x_t = L_s (x_s − x_t) + (L_s − L_t) x_t
  const double d_L = at_t.L * std::expm1(at_s.log_L - at_t.log_L);
  Vec out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    out[j] = at_t.S * (at_s.L * dx[j] + d_L * x[j]) / d_eta + (1.0 - at_t.l) * x[j];
  }
  return out;
}

void write_trajectories_csv(std::ostream& out, std::span<const Trajectory> trajectories) {
  const std::size_t d = trajectories.empty() || trajectories.front().states.empty()
                            ? 0
                            : trajectories.front().states.front().size();
  out << "traj,step,t";
  for (std::size_t j = 0; j < d; ++j) out << ",x_" << j;
  out << '\n';
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& tr = trajectories[k];
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      out << k << ',' << i << ',' << csv::num(tr.times[i]);
      for (double v : tr.states[i]) out << ',' << csv::num(v);
      out << '\n';
    }
  }
}

}  // namespace aprecond
