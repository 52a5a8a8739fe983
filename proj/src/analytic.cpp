#include "aprecond/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace aprecond {

namespace {

constexpr std::uint64_t kProbeStream = 0x70726f6265;
constexpr std::uint64_t kLStream = 0x6c5f74;
constexpr std::uint64_t kSStream = 0x735f74;
constexpr double kGuardRatio = 1e-12;

double mean_of(const std::vector<double>& v) { return ordered_sum(v) / static_cast<double>(v.size()); }

}  // namespace

std::string_view to_string(TraceMode mode) {
  return mode == TraceMode::hutchinson ? "hutchinson" : "analytic_trace";
}

TraceMode trace_mode_from_string(std::string_view name) {
  if (name == "analytic_trace" || name == "analytic") return TraceMode::analytic_trace;
  if (name == "hutchinson") return TraceMode::hutchinson;
  throw std::invalid_argument("unknown trace mode '" + std::string(name) + "'");
}

double estimate_l(const GaussianMixture& gm, double t, std::size_t n_samples, TraceMode mode,
                  std::size_t n_probes, std::uint64_t seed, Exec exec) {
  if (!(t > 0.0)) throw std::invalid_argument("estimate_l: t must be positive");
  if (n_samples == 0) throw std::invalid_argument("estimate_l: n_samples must be >= 1");
  if (mode == TraceMode::hutchinson && n_probes == 0) {
    throw std::invalid_argument("estimate_l: hutchinson mode needs n_probes >= 1");
  }
  const NoisyBatch batch = sample_noisy(gm, t, n_samples, seed);
  const std::size_t d = gm.dim();
  const auto traces = map_indexed<double>(n_samples, exec, [&](std::size_t i) {
    const Vec& x = batch.x[i];
    if (mode == TraceMode::analytic_trace) return denoiser_trace(gm, x, t);
    std::mt19937_64 rng(derive_seed(seed, kProbeStream, i));
    Vec v(d);
    double acc = 0.0;
    for (std::size_t p = 0; p < n_probes; ++p) {
      for (double& c : v) c = (rng() & 1ULL) ? 1.0 : -1.0;
      const Vec jv = denoiser_jvp(gm, x, t, v);
      for (std::size_t j = 0; j < d; ++j) acc += v[j] * jv[j];
    }
    return acc / static_cast<double>(n_probes);
  });
  return 1.0 - mean_of(traces) / static_cast<double>(d);
}

Vec dg_dlambda(const GaussianMixture& gm, ConstVecRef x, double t, double l_t, double dl_dlambda) {
  const Vec d_x = denoise(gm, x, t);
  const std::size_t n = x.size();
  Vec velocity(n);  // dx/dλ = D − x
  for (std::size_t j = 0; j < n; ++j) velocity[j] = d_x[j] - x[j];
  const Vec jvp = denoiser_jvp(gm, x, t, velocity);
  const Vec dt = denoiser_time_derivative(gm, x, t);
  Vec out(n);
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = jvp[j] - t * dt[j] + dl_dlambda * x[j] - (1.0 - l_t) * velocity[j];
  }
  return out;
}

double s_ratio(const std::vector<Vec>& g, const std::vector<Vec>& dg) {
  if (g.size() != dg.size() || g.empty()) throw std::invalid_argument("s_ratio: need matching non-empty samples");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g[i].size(); ++j) {
      num += g[i][j] * dg[i][j];
      den += g[i][j] * g[i][j];
    }
  }
  return num / den;
}

SEstimate estimate_s(const GaussianMixture& gm, double t, double l_t, double dl_dlambda, std::size_t n_samples,
                     std::uint64_t seed, Exec exec, bool allow_fallback) {
  if (!(t > 0.0)) throw std::invalid_argument("estimate_s: t must be positive");
  if (n_samples == 0) throw std::invalid_argument("estimate_s: n_samples must be >= 1");
  const NoisyBatch batch = sample_noisy(gm, t, n_samples, seed);
  struct Terms {
    double cross = 0.0;
    double g_sq = 0.0;
    double x_sq = 0.0;
  };
  const auto terms = map_indexed<Terms>(n_samples, exec, [&](std::size_t i) {
    const Vec& x = batch.x[i];
    const Vec g = g_phi(gm, x, t, l_t);
    const Vec dg = dg_dlambda(gm, x, t, l_t, dl_dlambda);
    Terms out;
    for (std::size_t j = 0; j < x.size(); ++j) {
      out.cross += g[j] * dg[j];
      out.g_sq += g[j] * g[j];
      out.x_sq += x[j] * x[j];
    }
    return out;
  });
  double cross = 0.0, g_sq = 0.0, x_sq = 0.0;
  for (const auto& term : terms) {
    cross += term.cross;
    g_sq += term.g_sq;
    x_sq += term.x_sq;
  }
  const auto n = static_cast<double>(n_samples);
  SEstimate est;
  est.numerator = cross / n;
  est.denominator = g_sq / n;
  if (est.denominator < kGuardRatio * (x_sq / n)) {
    if (!allow_fallback) {
      std::ostringstream msg;
      msg << "estimate_s: E[|g|^2]=" << est.denominator << " below guard at t=" << t;
      throw DegenerateDriftError(msg.str());
    }
    est.value = -1.0;
    est.guarded = true;
    return est;
  }
  est.value = est.numerator / est.denominator;
  return est;
}

std::vector<double> grid_derivative(const std::vector<double>& lambdas, const std::vector<double>& values) {
  const std::size_t n = lambdas.size();
  if (n < 2 || values.size() != n) throw std::invalid_argument("grid_derivative: need >= 2 matching points");
  std::vector<double> out(n);
  out.front() = (values[1] - values[0]) / (lambdas[1] - lambdas[0]);
  out.back() = (values[n - 1] - values[n - 2]) / (lambdas[n - 1] - lambdas[n - 2]);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    out[i] = (values[i + 1] - values[i - 1]) / (lambdas[i + 1] - lambdas[i - 1]);
  }
  return out;
}

std::vector<double> moving_average(const std::vector<double>& values, std::size_t window) {
  if (window <= 1) return values;
  const std::size_t half = window / 2;
  const std::size_t n = values.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n - 1, i + half);
    double acc = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) acc += values[k];
    out[i] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

PrecondTables build_tables(const GaussianMixture& gm, const TimeGrid& grid, const TableOptions& options,
                           Exec exec) {
  const std::size_t n = grid.size();
  if (n < 8) throw std::invalid_argument("build_tables: grid needs at least 8 points");
  std::vector<double> lambdas(n);
  for (std::size_t i = 0; i < n; ++i) lambdas[i] = lambda_of_t(grid[i]);

  const auto annotate = [&](std::size_t i, const std::exception& e) {
    std::ostringstream msg;
    msg << e.what() << " [timestep " << i << ", t=" << grid[i] << "]";
    return TableBuildError(msg.str(), i);
  };

  std::vector<double> l(n);
  for_each_index(n, exec, [&](std::size_t i) {
    try {
      l[i] = estimate_l(gm, grid[i], options.n_samples, options.mode, options.n_probes,
                        derive_seed(options.seed, kLStream, i), Exec::serial);
    } catch (const std::exception& e) {
      throw annotate(i, e);
    }
  });
  l = moving_average(l, options.smoothing_window);
  const std::vector<double> dl = grid_derivative(lambdas, l);

  std::vector<SEstimate> s_est(n);
  for_each_index(n, exec, [&](std::size_t i) {
    try {
      s_est[i] = estimate_s(gm, grid[i], l[i], dl[i], options.n_samples, derive_seed(options.seed, kSStream, i),
                            Exec::serial, options.allow_guard_fallback);
    } catch (const std::exception& e) {
      throw annotate(i, e);
    }
  });
  std::vector<double> s(n);
  TableMeta meta;
  meta.source = std::string(to_string(options.mode));
  meta.n_samples = options.n_samples;
  meta.n_probes = options.mode == TraceMode::hutchinson ? options.n_probes : 0;
  meta.seed = options.seed;
  meta.smoothing_window = options.smoothing_window;
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = s_est[i].value;
    if (s_est[i].guarded) meta.guard_activations.push_back(i);
  }
  s = moving_average(s, options.smoothing_window);
  return PrecondTables(std::move(lambdas), std::move(l), std::move(s), std::move(meta));
}

}  // namespace aprecond
