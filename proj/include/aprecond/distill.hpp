#pragma once

// Distillation: consistency (CM), trajectory (CTM) and denoising (DSM) losses
// with exact gradients, the training loop, and multistep sampling.
//
// Times are grid indices into cfg.grid (0 = t_max, N = t_min). The teacher
// solver branch is evaluated once per batch in draw_batch, so losses are pure
// functions of the two networks.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aprecond/common.hpp"
#include "aprecond/metrics.hpp"
#include "aprecond/ode.hpp"
#include "aprecond/parallel.hpp"
#include "aprecond/precond.hpp"
#include "aprecond/schedule.hpp"
#include "aprecond/student.hpp"
#include "aprecond/teacher.hpp"

namespace aprecond {

enum class LossKind { cm, ctm };
enum class Distance { squared_l2, pseudo_huber };
enum class SolverKind { heun, exact };

std::string_view to_string(LossKind kind);
std::string_view to_string(Distance kind);
std::string_view to_string(SolverKind kind);
LossKind loss_kind_from_string(std::string_view name);
Distance distance_from_string(std::string_view name);
SolverKind solver_kind_from_string(std::string_view name);

struct TrainConfig {
  PrecondFamily family = PrecondFamily::ctm(0.5);
  LossKind loss_kind = LossKind::ctm;
  double dsm_weight = 1.0;
  TimeGrid grid = edm_grid(18, 0.002, 80.0, 7.0);
  std::size_t max_solver_steps = 17;  // grid intervals per solver call
  std::size_t batch_size = 128;
  std::size_t iterations = 20000;
  double ema_mu = 0.999;
  std::uint64_t seed = 0;
  Distance distance = Distance::squared_l2;
  double lr = 4e-4;
  NetSpec net;
  SolverKind solver = SolverKind::heun;
  std::size_t solver_substeps = 1;    // Heun steps per grid interval
  std::size_t oracle_substeps = 200;  // dense reference steps per jump, SolverKind::exact
  bool cm_any_lower = false;          // CM: s uniform over all lower grid points instead of adjacent

  std::size_t log_every = 500;  // 0 disables the metric log
  std::size_t eval_samples = 4096;
  std::size_t eval_trajectories = 256;
  std::size_t eval_data_samples = 100000;
  Exec exec = Exec::parallel;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const TrainConfig& cfg);

/// Per-element training draw: x_t = x0 + t·ε at grid index t_index, target
/// indices s_index (CTM destination or CM solver end) and u_index, plus the
/// teacher solver output x_u = Solver(x_t, t, u).
struct DistillBatch {
  std::vector<Vec> x0;
  std::vector<Vec> xt;
  std::vector<Vec> xu;
  std::vector<std::size_t> t_index;
  std::vector<std::size_t> s_index;
  std::vector<std::size_t> u_index;
};

/// Deterministic in (cfg.seed, step).
DistillBatch draw_batch(const GaussianMixture& gm, const TrainConfig& cfg, std::uint64_t step);

/// Solver branch between grid indices a <= b per cfg.solver.
Vec run_solver(const GaussianMixture& gm, const TrainConfig& cfg, ConstVecRef x, std::size_t a, std::size_t b);

struct LossValue {
  double value = 0.0;
  Vec grad;  // gradient w.r.t. pair.online params; empty when not requested
};

double distance_value(Distance kind, ConstVecRef a, ConstVecRef b);
double pseudo_huber_c(std::size_t dim);

/// d( f_θ(x_t, t, ε), f_sg(x_u, s, ε) ) with u = s.
LossValue cm_loss(const EmaPair& pair, const DistillBatch& batch, const TrainConfig& cfg, bool with_grad = true);
/// d( f_sg(f_θ(x_t, t, s), s, ε), f_sg(f_sg(x_u, u, s), s, ε) ).
LossValue ctm_loss(const EmaPair& pair, const DistillBatch& batch, const TrainConfig& cfg, bool with_grad = true);
/// ‖D_θ(x_t, t, t) − x0‖².
LossValue dsm_loss(const EmaPair& pair, const DistillBatch& batch, const TrainConfig& cfg, bool with_grad = true);

/// Value-only losses over arbitrary jump maps f(x, t, s) -> Vec, used to check
/// the loss structure against oracles.
template <class Online, class Target>
double cm_loss_value(const DistillBatch& batch, const TimeGrid& grid, Distance kind, Online&& online,
                     Target&& target) {
  const double eps = grid.t_min;
  double acc = 0.0;
  for (std::size_t b = 0; b < batch.xt.size(); ++b) {
    const Vec lhs = online(batch.xt[b], grid[batch.t_index[b]], eps);
    const Vec rhs = target(batch.xu[b], grid[batch.s_index[b]], eps);
    acc += distance_value(kind, lhs, rhs);
  }
  return acc / static_cast<double>(batch.xt.size());
}

template <class Online, class Target>
double ctm_loss_value(const DistillBatch& batch, const TimeGrid& grid, Distance kind, Online&& online,
                      Target&& target) {
  const double eps = grid.t_min;
  double acc = 0.0;
  for (std::size_t b = 0; b < batch.xt.size(); ++b) {
    const double t = grid[batch.t_index[b]];
    const double s = grid[batch.s_index[b]];
    const double u = grid[batch.u_index[b]];
    const Vec lhs = target(online(batch.xt[b], t, s), s, eps);
    const Vec rhs = target(target(batch.xu[b], u, s), s, eps);
    acc += distance_value(kind, lhs, rhs);
  }
  return acc / static_cast<double>(batch.xt.size());
}

struct LogRow {
  std::uint64_t step = 0;  // iterations completed
  double consistency_loss = 0.0;  // mean over the logging window
  double dsm_loss = 0.0;
  double dist_2step = 0.0;  // W1 (d = 1) or energy distance of 2-step samples to data
  double mse_3step = 0.0;   // 3-step trajectory MSE against the teacher
};

struct TrainResult {
  EmaPair pair;
  Adam adam;
  std::uint64_t steps = 0;
  std::vector<LogRow> log;
};

/// Starts from `resume` when given, otherwise from a fresh network seeded by cfg.seed.
/// Throws DivergenceError with the step index on a non-finite loss.
TrainResult train(const GaussianMixture& gm, const TrainConfig& cfg, std::optional<CheckpointData> resume = {});

void write_log_csv(std::ostream& out, const std::vector<LogRow>& log, std::size_t dim);

/// Grid made of n + 1 evenly spaced indices of `grid` (both endpoints kept).
TimeGrid index_subgrid(const TimeGrid& grid, std::size_t n);

struct SampleSet {
  std::vector<Vec> samples;
  std::vector<Trajectory> trajectories;
};

/// x_T ~ N(0, T² I), then x ← f_sg(x, t_{k}, t_{k+1}) along grid with the target network.
SampleSet sample_multistep(const EmaPair& pair, const PrecondFamily& family, const TimeGrid& grid, std::size_t n,
                           std::uint64_t seed, Exec exec = Exec::parallel);

/// Same jumps from explicit start points.
SampleSet sample_multistep_from(const StudentNet& net, const PrecondFamily& family, const TimeGrid& grid,
                                const std::vector<Vec>& start, Exec exec = Exec::parallel);

/// Initial noise used by sample_multistep.
std::vector<Vec> initial_noise(std::size_t dim, double t_max, std::size_t n, std::uint64_t seed);

/// Teacher reference trajectories through the times of `grid` from the given starts.
std::vector<Trajectory> teacher_trajectories(const GaussianMixture& gm, const TimeGrid& grid,
                                             const std::vector<Vec>& start, std::size_t n_sub,
                                             Exec exec = Exec::parallel);

}  // namespace aprecond
