#include "aprecond/distill.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

#include "aprecond/csv.hpp"

namespace aprecond {

namespace {

constexpr std::uint64_t kBatchStream = 0x6261746368;
constexpr std::uint64_t kDataStream = 0x7830;
constexpr std::uint64_t kInitStream = 0x6e6574;
constexpr std::uint64_t kEvalNoise2 = 0x6576616c32;
constexpr std::uint64_t kEvalNoise3 = 0x6576616c33;
constexpr std::uint64_t kEvalData = 0x6576616c64;
constexpr std::size_t kChunk = 32;

using Eigen::MatrixXd;

MatrixXd columns(const std::vector<Vec>& v, std::size_t lo, std::size_t hi) {
  const std::size_t d = v[lo].size();
  MatrixXd m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(hi - lo));
  for (std::size_t b = lo; b < hi; ++b) {
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b - lo)) = v[b][j];
  }
  return m;
}

std::vector<double> times_of(const TimeGrid& grid, const std::vector<std::size_t>& idx, std::size_t lo,
                             std::size_t hi) {
  std::vector<double> out(hi - lo);
  for (std::size_t b = lo; b < hi; ++b) out[b - lo] = grid[idx[b]];
  return out;
}

// Sum of per-column distances; writes d(sum)/d(lhs) into grad.
double distance_columns(Distance kind, const MatrixXd& lhs, const MatrixXd& rhs, MatrixXd& grad) {
  const MatrixXd diff = lhs - rhs;
  grad.resize(diff.rows(), diff.cols());
  double total = 0.0;
  if (kind == Distance::squared_l2) {
    total = diff.squaredNorm();
    grad = 2.0 * diff;
    return total;
  }
  const double c = pseudo_huber_c(static_cast<std::size_t>(diff.rows()));
  for (Eigen::Index b = 0; b < diff.cols(); ++b) {
    const double r = std::sqrt(diff.col(b).squaredNorm() + c * c);
    total += r - c;
    grad.col(b) = diff.col(b) / r;
  }
  return total;
}

// Splits the batch into fixed chunks, evaluates them under cfg.exec and sums in chunk order.
template <class Chunk>
LossValue chunked_loss(std::size_t batch_size, std::size_t n_params, const TrainConfig& cfg, bool with_grad,
                       Chunk&& chunk) {
  if (batch_size == 0) throw std::invalid_argument("loss: empty batch");
  const std::size_t n_chunks = (batch_size + kChunk - 1) / kChunk;
  std::vector<double> values(n_chunks);
  std::vector<Vec> grads(n_chunks);
  for_each_index(n_chunks, cfg.exec, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(batch_size, lo + kChunk);
    if (with_grad) grads[c].assign(n_params, 0.0);
    values[c] = chunk(lo, hi, with_grad ? &grads[c] : nullptr);
  });
  LossValue out;
  const double inv = 1.0 / static_cast<double>(batch_size);
  out.value = ordered_sum(values) * inv;
  if (with_grad) {
    out.grad.assign(n_params, 0.0);
    for (const Vec& g : grads) {
      for (std::size_t i = 0; i < n_params; ++i) out.grad[i] += g[i];
    }
    for (double& g : out.grad) g *= inv;
  }
  return out;
}

Vec to_vec(const MatrixXd& m, Eigen::Index col) {
  return Vec(m.col(col).data(), m.col(col).data() + m.rows());
}

void check_sane(const MatrixXd& m, std::size_t step, const char* what) {
  if (!m.allFinite() || m.cwiseAbs().maxCoeff() > kDivergenceThreshold) throw DivergenceError(what, step);
}

}  // namespace

std::string_view to_string(LossKind kind) { return kind == LossKind::cm ? "cm" : "ctm"; }
std::string_view to_string(Distance kind) { return kind == Distance::squared_l2 ? "squared_l2" : "pseudo_huber"; }
std::string_view to_string(SolverKind kind) { return kind == SolverKind::heun ? "heun" : "exact"; }

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "cm") return LossKind::cm;
  if (name == "ctm") return LossKind::ctm;
  throw std::invalid_argument("unknown loss kind '" + std::string(name) + "'");
}

Distance distance_from_string(std::string_view name) {
  if (name == "squared_l2" || name == "l2") return Distance::squared_l2;
  if (name == "pseudo_huber") return Distance::pseudo_huber;
  throw std::invalid_argument("unknown distance '" + std::string(name) + "'");
}

SolverKind solver_kind_from_string(std::string_view name) {
  if (name == "heun") return SolverKind::heun;
  if (name == "exact") return SolverKind::exact;
  throw std::invalid_argument("unknown solver '" + std::string(name) + "'");
}

void validate(const TrainConfig& cfg) {
  const auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("train." + field + ": " + why);
  };
  if (cfg.grid.size() < 2) fail("grid", "needs at least one step");
  if (cfg.max_solver_steps == 0 || cfg.max_solver_steps > cfg.grid.n_steps) {
    fail("max_solver_steps", "must lie in [1, grid.n_steps]");
  }
  if (cfg.batch_size == 0) fail("batch_size", "must be >= 1");
  if (!(cfg.ema_mu >= 0.0 && cfg.ema_mu < 1.0)) fail("ema_mu", "must lie in [0, 1)");
  if (!(cfg.dsm_weight >= 0.0) || !std::isfinite(cfg.dsm_weight)) fail("dsm_weight", "must be finite and >= 0");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) fail("lr", "must be finite and positive");
  if (cfg.solver_substeps == 0) fail("solver_substeps", "must be >= 1");
  if (cfg.solver == SolverKind::exact && cfg.oracle_substeps < 100) fail("oracle_substeps", "must be >= 100");
  if (cfg.log_every > 0 && (cfg.eval_samples == 0 || cfg.eval_trajectories == 0 || cfg.eval_data_samples == 0)) {
    fail("eval", "sample counts must be >= 1 when logging");
  }
  if (cfg.log_every > 0 && cfg.grid.n_steps < 3) fail("grid", "evaluation needs n_steps >= 3");
}

double pseudo_huber_c(std::size_t dim) { return 0.00054 * std::sqrt(static_cast<double>(dim)); }

double distance_value(Distance kind, ConstVecRef a, ConstVecRef b) {
  double sq = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) sq += (a[j] - b[j]) * (a[j] - b[j]);
  if (kind == Distance::squared_l2) return sq;
  const double c = pseudo_huber_c(a.size());
  return std::sqrt(sq + c * c) - c;
}

Vec run_solver(const GaussianMixture& gm, const TrainConfig& cfg, ConstVecRef x, std::size_t a, std::size_t b) {
  if (a > b || b >= cfg.grid.size()) throw std::invalid_argument("run_solver: bad grid indices");
  if (a == b) return Vec(x.begin(), x.end());
  if (cfg.solver == SolverKind::exact) {
    return exact_jump_oracle(gm, x, cfg.grid[a], cfg.grid[b], cfg.oracle_substeps * (b - a));
  }
  const std::size_t m = cfg.solver_substeps;
  std::vector<double> times;
  times.reserve((b - a) * m + 1);
  for (std::size_t k = a; k < b; ++k) {
    for (std::size_t j = 0; j < m; ++j) {
      times.push_back(cfg.grid[k] + (cfg.grid[k + 1] - cfg.grid[k]) * static_cast<double>(j) / static_cast<double>(m));
    }
  }
  times.push_back(cfg.grid[b]);
  return solve_heun(gm, x, times).states.back();
}

DistillBatch draw_batch(const GaussianMixture& gm, const TrainConfig& cfg, std::uint64_t step) {
  const std::size_t n = cfg.batch_size;
  const std::size_t big_n = cfg.grid.n_steps;
  DistillBatch batch;
  batch.x0 = sample_data(gm, n, derive_seed(cfg.seed, kDataStream, step));
  batch.xt.resize(n);
  batch.xu.resize(n);
  batch.t_index.resize(n);
  batch.s_index.resize(n);
  batch.u_index.resize(n);
  std::mt19937_64 rng(derive_seed(cfg.seed, kBatchStream, step));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t nt = uniform(0, big_n - 1);
    const std::size_t cap = std::min(big_n, nt + cfg.max_solver_steps);
    std::size_t ns = 0;
    std::size_t nu = 0;
    if (cfg.loss_kind == LossKind::cm) {
      ns = cfg.cm_any_lower ? uniform(nt + 1, cap) : nt + 1;
      nu = ns;
    } else {
      ns = uniform(nt, big_n);
      nu = ns == nt ? nt : uniform(nt + 1, std::min(ns, cap));
    }
    batch.t_index[b] = nt;
    batch.s_index[b] = ns;
    batch.u_index[b] = nu;
    const double t = cfg.grid[nt];
    batch.xt[b] = batch.x0[b];
    for (double& v : batch.xt[b]) v += t * normal(rng);
  }
  for_each_index(n, cfg.exec, [&](std::size_t b) {
    batch.xu[b] = run_solver(gm, cfg, batch.xt[b], batch.t_index[b], batch.u_index[b]);
  });
  return batch;
}

LossValue cm_loss(const EmaPair& pair, const DistillBatch& batch, const TrainConfig& cfg, bool with_grad) {
  const PrecondFamily& fam = cfg.family;
  return chunked_loss(batch.xt.size(), pair.online.num_params(), cfg, with_grad,
                      [&](std::size_t lo, std::size_t hi, Vec* grad) {
                        const std::vector<double> t = times_of(cfg.grid, batch.t_index, lo, hi);
                        const std::vector<double> s = times_of(cfg.grid, batch.s_index, lo, hi);
                        const std::vector<double> eps(hi - lo, cfg.grid.t_min);
                        SkipTape tape;
                        const MatrixXd lhs =
                            consistency_batch(pair.online, fam, columns(batch.xt, lo, hi), t, eps, grad ? &tape : nullptr);
                        const MatrixXd rhs = consistency_batch(pair.target, fam, columns(batch.xu, lo, hi), s, eps);
                        MatrixXd d_lhs;
                        const double value = distance_columns(cfg.distance, lhs, rhs, d_lhs);
                        if (grad) skip_backward(pair.online, tape, d_lhs, grad, nullptr);
                        return value;
                      });
}

LossValue ctm_loss(const EmaPair& pair, const DistillBatch& batch, const TrainConfig& cfg, bool with_grad) {
  const PrecondFamily& fam = cfg.family;
  return chunked_loss(batch.xt.size(), pair.online.num_params(), cfg, with_grad,
                      [&](std::size_t lo, std::size_t hi, Vec* grad) {
                        const std::vector<double> t = times_of(cfg.grid, batch.t_index, lo, hi);
                        const std::vector<double> s = times_of(cfg.grid, batch.s_index, lo, hi);
                        const std::vector<double> u = times_of(cfg.grid, batch.u_index, lo, hi);
                        const std::vector<double> eps(hi - lo, cfg.grid.t_min);
                        SkipTape online_tape;
                        SkipTape target_tape;
                        const MatrixXd jump = consistency_batch(pair.online, fam, columns(batch.xt, lo, hi), t, s,
                                                                grad ? &online_tape : nullptr);
                        const MatrixXd lhs =
                            consistency_batch(pair.target, fam, jump, s, eps, grad ? &target_tape : nullptr);
                        const MatrixXd mid = consistency_batch(pair.target, fam, columns(batch.xu, lo, hi), u, s);
                        const MatrixXd rhs = consistency_batch(pair.target, fam, mid, s, eps);
                        MatrixXd d_lhs;
                        const double value = distance_columns(cfg.distance, lhs, rhs, d_lhs);
                        if (grad) {
                          MatrixXd d_jump;
                          skip_backward(pair.target, target_tape, d_lhs, nullptr, &d_jump);
                          skip_backward(pair.online, online_tape, d_jump, grad, nullptr);
                        }
                        return value;
                      });
}

LossValue dsm_loss(const EmaPair& pair, const DistillBatch& batch, const TrainConfig& cfg, bool with_grad) {
  const double sigma = cfg.family.sigma_data();
  return chunked_loss(batch.xt.size(), pair.online.num_params(), cfg, with_grad,
                      [&](std::size_t lo, std::size_t hi, Vec* grad) {
                        const std::vector<double> t = times_of(cfg.grid, batch.t_index, lo, hi);
                        SkipTape tape;
                        const MatrixXd pred =
                            skip_forward(pair.online, columns(batch.xt, lo, hi), t, t,
                                         std::vector<CoeffPair>(hi - lo, CoeffPair{0.0, 1.0}), Combine::denoiser,
                                         sigma, grad ? &tape : nullptr);
                        MatrixXd d_pred;
                        const double value =
                            distance_columns(Distance::squared_l2, pred, columns(batch.x0, lo, hi), d_pred);
                        if (grad) skip_backward(pair.online, tape, d_pred, grad, nullptr);
                        return value;
                      });
}

TimeGrid index_subgrid(const TimeGrid& grid, std::size_t n) {
  if (n == 0 || n > grid.n_steps) throw std::invalid_argument("index_subgrid: need 1 <= n <= grid.n_steps");
  TimeGrid out;
  out.n_steps = n;
  out.t_min = grid.t_min;
  out.t_max = grid.t_max;
  out.rho = grid.rho;
  for (std::size_t k = 0; k <= n; ++k) {
    const std::size_t idx = (k * grid.n_steps + n / 2) / n;
    out.points.push_back(grid[idx]);
  }
  return out;
}

std::vector<Vec> initial_noise(std::size_t dim, double t_max, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec> out(n, Vec(dim));
  for (Vec& x : out) {
    for (double& v : x) v = t_max * normal(rng);
  }
  return out;
}

SampleSet sample_multistep_from(const StudentNet& net, const PrecondFamily& family, const TimeGrid& grid,
                                const std::vector<Vec>& start, Exec exec) {
  if (grid.size() < 2) throw std::invalid_argument("sample_multistep: grid needs at least one jump");
  const std::size_t n = start.size();
  SampleSet out;
  out.samples.resize(n);
  out.trajectories.resize(n);
  const std::size_t n_chunks = (n + 255) / 256;
  for_each_index(n_chunks, exec, [&](std::size_t c) {
    const std::size_t lo = c * 256;
    const std::size_t hi = std::min(n, lo + 256);
    MatrixXd x = columns(start, lo, hi);
    for (std::size_t b = lo; b < hi; ++b) {
      out.trajectories[b].times = grid.points;
      out.trajectories[b].states.push_back(start[b]);
    }
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
      const std::vector<double> t(hi - lo, grid[k]);
      const std::vector<double> s(hi - lo, grid[k + 1]);
      x = consistency_batch(net, family, x, t, s);
      check_sane(x, k, "sampling diverged");
      for (std::size_t b = lo; b < hi; ++b) out.trajectories[b].states.push_back(to_vec(x, static_cast<Eigen::Index>(b - lo)));
    }
    for (std::size_t b = lo; b < hi; ++b) out.samples[b] = out.trajectories[b].states.back();
  });
  return out;
}

SampleSet sample_multistep(const EmaPair& pair, const PrecondFamily& family, const TimeGrid& grid, std::size_t n,
                           std::uint64_t seed, Exec exec) {
  if (grid.size() < 2) throw std::invalid_argument("sample_multistep: grid needs at least one jump");
  const std::vector<Vec> start = initial_noise(pair.target.spec().dim, grid[0], n, seed);
  return sample_multistep_from(pair.target, family, grid, start, exec);
}

std::vector<Trajectory> teacher_trajectories(const GaussianMixture& gm, const TimeGrid& grid,
                                             const std::vector<Vec>& start, std::size_t n_sub, Exec exec) {
  std::vector<Trajectory> out(start.size());
  for_each_index(start.size(), exec, [&](std::size_t i) {
    Trajectory& tr = out[i];
    tr.times = grid.points;
    tr.states.push_back(start[i]);
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
      tr.states.push_back(exact_jump_oracle(gm, tr.states.back(), grid[k], grid[k + 1], n_sub));
    }
  });
  return out;
}

TrainResult train(const GaussianMixture& gm, const TrainConfig& cfg, std::optional<CheckpointData> resume) {
  validate(cfg);
  if (cfg.net.dim != gm.dim()) throw std::invalid_argument("train.net: dim does not match the mixture");
  TrainResult result = resume ? TrainResult{std::move(resume->pair), std::move(resume->adam), resume->step, {}}
                              : TrainResult{EmaPair(StudentNet(cfg.net, derive_seed(cfg.seed, kInitStream)), cfg.ema_mu),
                                            Adam(0, cfg.lr), 0, {}};
  if (!resume) result.adam = Adam(result.pair.online.num_params(), cfg.lr);
  if (result.pair.online.spec().dim != gm.dim()) throw std::invalid_argument("train: checkpoint dim mismatch");

  // Fixed evaluation inputs, computed once.
  TimeGrid grid2, grid3;
  std::vector<Vec> noise2, noise3, data;
  std::vector<double> data_1d;
  std::vector<Trajectory> teacher3;
  if (cfg.log_every > 0) {
    grid2 = index_subgrid(cfg.grid, 2);
    grid3 = index_subgrid(cfg.grid, 3);
    noise2 = initial_noise(gm.dim(), cfg.grid[0], cfg.eval_samples, derive_seed(cfg.seed, kEvalNoise2));
    noise3 = initial_noise(gm.dim(), cfg.grid[0], cfg.eval_trajectories, derive_seed(cfg.seed, kEvalNoise3));
    teacher3 = teacher_trajectories(gm, grid3, noise3, kDefaultOracleSubsteps, cfg.exec);
    data = sample_data(gm, cfg.eval_data_samples, derive_seed(cfg.seed, kEvalData));
    if (gm.dim() == 1) {
      for (const Vec& v : data) data_1d.push_back(v[0]);
      data.clear();
    } else if (data.size() > cfg.eval_samples) {
      data.resize(cfg.eval_samples);
    }
  }
  const auto evaluate = [&](LogRow& row) {
    const SampleSet two = sample_multistep_from(result.pair.target, cfg.family, grid2, noise2, cfg.exec);
    if (gm.dim() == 1) {
      std::vector<double> xs;
      for (const Vec& v : two.samples) xs.push_back(v[0]);
      row.dist_2step = wasserstein1_1d(xs, data_1d);
    } else {
      row.dist_2step = energy_distance(two.samples, data, cfg.exec);
    }
    const SampleSet three = sample_multistep_from(result.pair.target, cfg.family, grid3, noise3, cfg.exec);
    row.mse_3step = trajectory_mse(three.trajectories, teacher3).aggregate;
  };

  double window_cons = 0.0, window_dsm = 0.0;
  std::size_t window = 0;
  for (std::uint64_t step = result.steps; step < cfg.iterations; ++step) {
    const DistillBatch batch = draw_batch(gm, cfg, step);
    LossValue cons = cfg.loss_kind == LossKind::cm ? cm_loss(result.pair, batch, cfg) : ctm_loss(result.pair, batch, cfg);
    LossValue dsm;
    if (cfg.dsm_weight > 0.0) {
      dsm = dsm_loss(result.pair, batch, cfg);
      for (std::size_t i = 0; i < cons.grad.size(); ++i) cons.grad[i] += cfg.dsm_weight * dsm.grad[i];
    }
    const double total = cons.value + cfg.dsm_weight * dsm.value;
    bool finite = std::isfinite(total);
    for (double g : cons.grad) finite = finite && std::isfinite(g);
    if (!finite) throw DivergenceError("training loss is not finite", step);
    result.adam.step(result.pair.online.params(), cons.grad);
    ema_update(result.pair);
    result.steps = step + 1;

    window_cons += cons.value;
    window_dsm += dsm.value;
    ++window;
    if (cfg.log_every > 0 && (result.steps % cfg.log_every == 0 || result.steps == cfg.iterations)) {
      LogRow row;
      row.step = result.steps;
      row.consistency_loss = window_cons / static_cast<double>(window);
      row.dsm_loss = window_dsm / static_cast<double>(window);
      evaluate(row);
      result.log.push_back(row);
      window_cons = window_dsm = 0.0;
      window = 0;
    }
  }
  return result;
}

void write_log_csv(std::ostream& out, const std::vector<LogRow>& log, std::size_t dim) {
  out << "# weighting=uniform\n";
  out << "step,consistency_loss,dsm_loss," << (dim == 1 ? "w1_2step" : "energy_2step") << ",mse_3step\n";
  for (const LogRow& r : log) {
    out << r.step << ',' << csv::num(r.consistency_loss) << ',' << csv::num(r.dsm_loss) << ','
        << csv::num(r.dist_2step) << ',' << csv::num(r.mse_3step) << '\n';
  }
}

}  // namespace aprecond
