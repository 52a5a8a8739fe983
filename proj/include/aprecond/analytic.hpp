#pragma once

// Analytic-Precond estimation: per-timestep l_t and s_t from the teacher,
// then PrecondTables by integration over λ.
//
//   l_t = 1 − E_{q_t}[tr ∇_x D(x_t, t)] / d
//   s_t = E[g · dg/dλ] / E[‖g‖²],   g = D − (1 − l_t) x
//
// Expectations are plain Monte-Carlo over x_t ~ q_t with a caller-supplied seed.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "aprecond/common.hpp"
#include "aprecond/parallel.hpp"
#include "aprecond/schedule.hpp"
#include "aprecond/tables.hpp"
#include "aprecond/teacher.hpp"

namespace aprecond {

enum class TraceMode { analytic_trace, hutchinson };

std::string_view to_string(TraceMode mode);
TraceMode trace_mode_from_string(std::string_view name);

/// Throws std::invalid_argument for t <= 0, n_samples == 0, or Hutchinson with no probes.
double estimate_l(const GaussianMixture& gm, double t, std::size_t n_samples, TraceMode mode,
                  std::size_t n_probes, std::uint64_t seed, Exec exec = Exec::parallel);

/// Total derivative of g along the PF-ODE trajectory through (x, t):
///   dg/dλ = ∇D·(D − x) − t ∂_t D + (dl/dλ) x − (1 − l)(D − x)
Vec dg_dlambda(const GaussianMixture& gm, ConstVecRef x, double t, double l_t, double dl_dlambda);

struct SEstimate {
  double value = 0.0;
  bool guarded = false;    // denominator guard fired; value is the CTM fallback −1
  double numerator = 0.0;  // E[g · dg/dλ]
  double denominator = 0.0;  // E[‖g‖²]
};

/// Ratio E[g·dg]/E[‖g‖²] over paired samples.
double s_ratio(const std::vector<Vec>& g, const std::vector<Vec>& dg);

/// With allow_fallback, a denominator below 1e-12·E[‖x‖²] yields s = −1 and
/// guarded = true; without it, DegenerateDriftError is thrown.
SEstimate estimate_s(const GaussianMixture& gm, double t, double l_t, double dl_dlambda, std::size_t n_samples,
                     std::uint64_t seed, Exec exec = Exec::parallel, bool allow_fallback = true);

struct TableOptions {
  std::size_t n_samples = 4096;
  TraceMode mode = TraceMode::analytic_trace;
  std::size_t n_probes = 64;
  std::uint64_t seed = 0;
  std::size_t smoothing_window = 0;  // centred moving average over nodes; 0 or 1 disables
  bool allow_guard_fallback = true;
};

class TableBuildError : public std::runtime_error {
 public:
  TableBuildError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Estimates l and s at every grid time (grid must have >= 8 points) and
/// integrates them. dl/dλ for the s estimate is the central difference of
/// the l nodes in λ (one-sided at the ends).
PrecondTables build_tables(const GaussianMixture& gm, const TimeGrid& grid, const TableOptions& options,
                           Exec exec = Exec::parallel);

/// Centred finite differences of values over a non-uniform increasing grid.
std::vector<double> grid_derivative(const std::vector<double>& lambdas, const std::vector<double>& values);

std::vector<double> moving_average(const std::vector<double>& values, std::size_t window);

}  // namespace aprecond
