#include "aprecond/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aprecond/analytic.hpp"
#include "aprecond/schedule.hpp"

namespace aprecond {

namespace {

double norm_diff(ConstVecRef a, ConstVecRef b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(acc);
}

// λ is passed alongside τ so that table nodes are hit exactly.
double bound_term(const GaussianMixture& gm, const PrecondTables& tables, ConstVecRef x, double tau, double lambda) {
  const TablePoint p = tables.at_lambda(lambda);
  const Vec g = g_phi(gm, x, tau, p.l);
  const auto [left, right] = tables.l_slopes(lambda);
  double worst = 0.0;
  for (double slope : {left, right}) {
    const Vec dg = dg_dlambda(gm, x, tau, p.l, slope);
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double r = dg[j] - p.s * g[j];
      acc += r * r;
    }
    worst = std::max(worst, std::sqrt(acc));
  }
  return worst;
}

}  // namespace

double consistency_gap(const GaussianMixture& gm, const PrecondTables& tables, ConstVecRef x, double t, double s,
                       std::size_t n_sub) {
  const Vec d_star = optimal_student_denoiser(gm, tables, x, t, s, n_sub);
  return norm_diff(d_star, denoise(gm, x, t));
}

double bound_prefactor(double three_c, double log_ratio) {
  const double a = three_c * log_ratio;
  if (std::abs(a) < 1e-6) return log_ratio * (1.0 + a / 2.0 + a * a / 6.0);
  return std::expm1(a) / three_c;
}

GapBound gap_bound(const GaussianMixture& gm, const PrecondTables& tables, ConstVecRef x, double t, double s,
                   std::size_t n_tau, std::size_t n_sub) {
  if (!(s > 0.0) || !(s < t)) throw std::invalid_argument("gap_bound: need 0 < s < t");
  if (n_tau < 2) throw std::invalid_argument("gap_bound: n_tau must be >= 2");
  GapBound out;
  out.C = tables.max_abs_ls(t, s);
  out.prefactor = bound_prefactor(3.0 * out.C, std::log(t / s));

  // The term jumps where the slope of l does, so every table node inside the
  // interval is visited too; between nodes it is smooth and the uniform grid resolves it.
  const double lam_t = lambda_of_t(t);
  const double lam_s = lambda_of_t(s);
  std::vector<double> lams;
  for (std::size_t k = 0; k < n_tau; ++k) {
    lams.push_back(lam_t + (lam_s - lam_t) * static_cast<double>(k) / (n_tau - 1.0));
  }
  lams.back() = lam_s;
  for (double node : tables.lambdas()) {
    if (node > lam_t && node < lam_s) lams.push_back(node);
  }
  std::sort(lams.begin(), lams.end());
  lams.erase(std::unique(lams.begin(), lams.end()), lams.end());
  const std::size_t per_segment = std::max<std::size_t>(100, n_sub / (lams.size() - 1));
  Vec state(x.begin(), x.end());
  double tau_prev = t;
  for (std::size_t k = 0; k < lams.size(); ++k) {
    const double tau = k == 0 ? t : k + 1 == lams.size() ? s : t_of_lambda(lams[k]);
    if (k > 0) state = exact_jump_oracle(gm, state, tau_prev, tau, per_segment);
    out.max_term = std::max(out.max_term, bound_term(gm, tables, state, tau, lams[k]));
    tau_prev = tau;
  }
  out.bound = out.prefactor * out.max_term;
  return out;
}

TrajectoryMse trajectory_mse(std::span<const Trajectory> student, std::span<const Trajectory> teacher) {
  if (student.size() != teacher.size() || student.empty()) {
    throw std::invalid_argument("trajectory_mse: need matching non-empty trajectory sets");
  }
  const std::vector<double>& times = student.front().times;
  if (times.size() < 2) throw std::invalid_argument("trajectory_mse: trajectories need at least one jump");
  TrajectoryMse out;
  out.times.assign(times.begin() + 1, times.end());
  out.per_time.assign(out.times.size(), 0.0);
  for (std::size_t k = 0; k < student.size(); ++k) {
    const Trajectory& a = student[k];
    const Trajectory& b = teacher[k];
    if (a.times != times || b.times != times) throw std::invalid_argument("trajectory_mse: time grids differ");
    if (a.states.size() != times.size() || b.states.size() != times.size()) {
      throw std::invalid_argument("trajectory_mse: state count does not match times");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
      const double dist = norm_diff(a.states[i], b.states[i]);
      out.per_time[i - 1] += dist * dist / static_cast<double>(a.states[i].size());
    }
  }
  for (double& v : out.per_time) v /= static_cast<double>(student.size());
  for (double v : out.per_time) out.aggregate += v;
  out.aggregate /= static_cast<double>(out.per_time.size());
  return out;
}

double wasserstein1_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1_1d: empty sample set");
  std::vector<double> xs(a.begin(), a.end());
  std::vector<double> ys(b.begin(), b.end());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  // ∫ |F_a − F_b| dx over the merged support.
  const double na = static_cast<double>(xs.size());
  const double nb = static_cast<double>(ys.size());
  std::size_t i = 0, j = 0;
  double prev = std::min(xs.front(), ys.front());
  double total = 0.0;
  while (i < xs.size() || j < ys.size()) {
    const double next = (j == ys.size() || (i < xs.size() && xs[i] <= ys[j])) ? xs[i] : ys[j];
    total += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (next - prev);
    while (i < xs.size() && xs[i] == next) ++i;
    while (j < ys.size() && ys[j] == next) ++j;
    prev = next;
  }
  return total;
}

double energy_distance(const std::vector<Vec>& a, const std::vector<Vec>& b, Exec exec) {
  if (a.empty() || b.empty()) throw std::invalid_argument("energy_distance: empty sample set");
  const auto mean_dist = [&](const std::vector<Vec>& p, const std::vector<Vec>& q) {
    const auto rows = map_indexed<double>(p.size(), exec, [&](std::size_t i) {
      double acc = 0.0;
      for (const Vec& y : q) acc += norm_diff(p[i], y);
      return acc;
    });
    return ordered_sum(rows) / (static_cast<double>(p.size()) * static_cast<double>(q.size()));
  };
  return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

}  // namespace aprecond
