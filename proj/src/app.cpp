#include "aprecond/app.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "aprecond/analytic.hpp"
#include "aprecond/csv.hpp"
#include "aprecond/distill.hpp"
#include "aprecond/metrics.hpp"
#include "aprecond/student.hpp"

namespace aprecond {

namespace {

constexpr std::uint64_t kSampleStream = 0x73616d706c65;
constexpr std::uint64_t kEvalStream = 0x6576616c;
constexpr std::uint64_t kBoundStream = 0x626f756e64;

class Artifact {
 public:
  Artifact(const RunConfig& cfg, const std::string& name) : path_(cfg.output_dir / name), out_(path_) {
    if (!out_) throw std::runtime_error("cannot write " + path_.string());
    out_ << artifact_header(cfg) << '\n';
  }
  std::ostream& stream() { return out_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool is_analytic(FamilyKind kind) {
  return kind == FamilyKind::analytic_forward || kind == FamilyKind::analytic_backward;
}

double sample_distance(const GaussianMixture& gm, const std::vector<Vec>& samples, std::uint64_t seed, Exec exec) {
  if (gm.dim() == 1) {
    std::vector<double> xs, data;
    for (const Vec& v : samples) xs.push_back(v[0]);
    for (const Vec& v : sample_data(gm, 100000, seed)) data.push_back(v[0]);
    return wasserstein1_1d(xs, data);
  }
  return energy_distance(samples, sample_data(gm, samples.size(), seed), exec);
}

void write_samples(std::ostream& out, const std::vector<Vec>& samples) {
  out << "idx";
  for (std::size_t j = 0; j < (samples.empty() ? 0 : samples[0].size()); ++j) out << ",x_" << j;
  out << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out << i;
    for (double v : samples[i]) out << ',' << csv::num(v);
    out << '\n';
  }
}

int cmd_tables(const RunConfig& cfg, const AppOptions& opt, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto tables = load_or_build_tables(cfg, opt.exec);
  Artifact art(cfg, "tables.csv");
  tables->write_csv(art.stream());
  out << "tables: " << tables->size() << " nodes, " << tables->meta().guard_activations.size()
      << " guard activations, " << seconds_since(start) << " s -> " << art.path().string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, const AppOptions& opt, std::ostream& out) {
  auto start = std::chrono::steady_clock::now();
  std::shared_ptr<const PrecondTables> tables;
  if (is_analytic(cfg.family)) tables = load_or_build_tables(cfg, opt.exec);
  const double table_seconds = seconds_since(start);
  TrainConfig tc = cfg.train;
  tc.family = make_family(cfg, cfg.family, tables);
  tc.exec = opt.exec;
  start = std::chrono::steady_clock::now();
  const TrainResult result = train(cfg.mixture, tc);
  const double train_seconds = seconds_since(start);
  save_checkpoint(cfg.checkpoint_path().string(), result.pair, result.adam, result.steps);
  Artifact log(cfg, "train_log.csv");
  write_log_csv(log.stream(), result.log, cfg.mixture.dim());
  out << "train: " << result.steps << " iterations in " << train_seconds << " s";
  if (tables) out << " (tables " << table_seconds << " s)";
  if (!result.log.empty()) {
    out << ", final 2-step distance " << result.log.back().dist_2step << ", 3-step mse " << result.log.back().mse_3step;
  }
  out << '\n';
  return 0;
}

EmaPair load_pair(const RunConfig& cfg) {
  CheckpointData data = load_checkpoint(cfg.checkpoint_path().string());
  if (data.pair.target.spec().dim != cfg.mixture.dim()) throw std::runtime_error("checkpoint dim does not match mixture");
  return std::move(data.pair);
}

int cmd_sample(const RunConfig& cfg, const AppOptions& opt, std::ostream& out) {
  const EmaPair pair = load_pair(cfg);
  std::shared_ptr<const PrecondTables> tables;
  if (is_analytic(cfg.family)) tables = load_or_build_tables(cfg, opt.exec);
  const PrecondFamily family = make_family(cfg, cfg.family, tables);
  const TimeGrid grid = index_subgrid(cfg.grid, cfg.eval.sample_steps);
  const SampleSet set =
      sample_multistep(pair, family, grid, cfg.eval.n_samples, derive_seed(cfg.seed, kSampleStream), opt.exec);
  Artifact samples(cfg, "samples.csv");
  write_samples(samples.stream(), set.samples);
  Artifact traj(cfg, "trajectories.csv");
  write_trajectories_csv(traj.stream(), set.trajectories);
  out << "sample: " << set.samples.size() << " samples with " << cfg.eval.sample_steps << " jumps\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const AppOptions& opt, std::ostream& out) {
  const EmaPair pair = load_pair(cfg);
  std::shared_ptr<const PrecondTables> tables;
  if (is_analytic(cfg.family)) tables = load_or_build_tables(cfg, opt.exec);
  const PrecondFamily family = make_family(cfg, cfg.family, tables);
  Artifact art(cfg, "metrics.csv");
  std::ostream& os = art.stream();
  os << "metric,steps,t,value\n";
  const char* dist_name = cfg.mixture.dim() == 1 ? "w1" : "energy";
  for (std::size_t k = 1; k <= std::min<std::size_t>(3, cfg.grid.n_steps); ++k) {
    const TimeGrid grid = index_subgrid(cfg.grid, k);
    const auto noise = initial_noise(cfg.mixture.dim(), grid[0], cfg.eval.n_samples, derive_seed(cfg.seed, kEvalStream, k));
    const SampleSet set = sample_multistep_from(pair.target, family, grid, noise, opt.exec);
    const double dist = sample_distance(cfg.mixture, set.samples, derive_seed(cfg.seed, kEvalStream, 100 + k), opt.exec);
    const auto teacher = teacher_trajectories(cfg.mixture, grid, noise, cfg.eval.oracle_substeps, opt.exec);
    const TrajectoryMse mse = trajectory_mse(set.trajectories, teacher);
    os << dist_name << ',' << k << ",," << csv::num(dist) << '\n';
    for (std::size_t i = 0; i < mse.times.size(); ++i) {
      os << "traj_mse," << k << ',' << csv::num(mse.times[i]) << ',' << csv::num(mse.per_time[i]) << '\n';
    }
    os << "traj_mse_mean," << k << ",," << csv::num(mse.aggregate) << '\n';
    out << "eval: " << k << "-step " << dist_name << '=' << dist << " traj_mse=" << mse.aggregate << '\n';
  }
  return 0;
}

int cmd_bound_check(const RunConfig& cfg, const AppOptions& opt, std::ostream& out) {
  const auto tables = load_or_build_tables(cfg, opt.exec);
  Artifact art(cfg, "bound_check.csv");
  std::ostream& os = art.stream();
  os << "t,s,gap,bound,prefactor,C,points,violations\n";
  std::size_t pairs = 0, violations = 0;
  const TimeGrid& grid = cfg.grid;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const NoisyBatch points = sample_noisy(cfg.mixture, grid[i], cfg.eval.n_points, derive_seed(cfg.seed, kBoundStream, i));
    for (std::size_t j = i + 1; j < grid.size(); ++j) {
      const double t = grid[i];
      const double s = grid[j];
      if (t / s > cfg.eval.bound_max_ratio) break;
      struct Row {
        double gap;
        GapBound bound;
      };
      const auto rows = map_indexed<Row>(points.x.size(), opt.exec, [&](std::size_t p) {
        return Row{consistency_gap(cfg.mixture, *tables, points.x[p], t, s, cfg.eval.oracle_substeps),
                   gap_bound(cfg.mixture, *tables, points.x[p], t, s, cfg.eval.n_tau, cfg.eval.oracle_substeps)};
      });
      std::size_t worst = 0, bad = 0;
      for (std::size_t p = 0; p < rows.size(); ++p) {
        const double slack = rows[p].bound.bound - rows[p].gap;
        if (slack < rows[worst].bound.bound - rows[worst].gap) worst = p;
        if (!(rows[p].gap <= rows[p].bound.bound + 1e-9)) ++bad;
      }
      os << csv::num(t) << ',' << csv::num(s) << ',' << csv::num(rows[worst].gap) << ','
         << csv::num(rows[worst].bound.bound) << ',' << csv::num(rows[worst].bound.prefactor) << ','
         << csv::num(rows[worst].bound.C) << ',' << rows.size() << ',' << bad << '\n';
      ++pairs;
      violations += bad;
    }
  }
  out << "bound-check: " << pairs << " (t,s) pairs x " << cfg.eval.n_points << " points, " << violations
      << " violations\n";
  return violations == 0 ? 0 : 1;
}

int cmd_coeff_dump(const RunConfig& cfg, const AppOptions& opt, std::ostream& out) {
  std::vector<FamilyKind> kinds;
  if (opt.family) {
    kinds.push_back(family_kind_from_string(*opt.family));
  } else {
    kinds = {FamilyKind::cm, FamilyKind::bcm, FamilyKind::ctm, FamilyKind::analytic_forward,
             FamilyKind::analytic_backward};
  }
  std::shared_ptr<const PrecondTables> tables;
  for (FamilyKind k : kinds) {
    if (is_analytic(k) && !tables) tables = load_or_build_tables(cfg, opt.exec);
  }
  const std::size_t n = cfg.eval.coeff_points;
  std::vector<double> times(n);
  const double lo = std::log(cfg.grid.t_min), hi = std::log(cfg.grid.t_max);
  for (std::size_t i = 0; i < n; ++i) times[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / (n - 1.0));
  times.front() = cfg.grid.t_min;
  times.back() = cfg.grid.t_max;
  for (FamilyKind k : kinds) {
    const PrecondFamily family = make_family(cfg, k, is_analytic(k) ? tables : nullptr);
    Artifact art(cfg, "coeffs_" + std::string(to_string(k)) + ".csv");
    art.stream() << "t,s,f,g\n";
    for (double t : times) {
      for (double s : times) {
        if (s > t) break;
        const CoeffPair c = family.coeffs(t, s);
        art.stream() << csv::num(t) << ',' << csv::num(s) << ',' << csv::num(c.f) << ',' << csv::num(c.g) << '\n';
      }
    }
    out << "coeff-dump: " << to_string(k) << " -> " << art.path().string() << '\n';
  }
  return 0;
}

}  // namespace

std::string artifact_header(const RunConfig& cfg) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "# aprecond %s config_hash=%016" PRIx64 " seed=%" PRIu64, kVersion, cfg.hash,
                cfg.seed);
  return buf;
}

std::shared_ptr<const PrecondTables> load_or_build_tables(const RunConfig& cfg, Exec exec) {
  if (cfg.tables.path) {
    std::ifstream in(*cfg.tables.path);
    if (!in) throw std::runtime_error("cannot open tables " + cfg.tables.path->string());
    std::string first;
    std::getline(in, first);
    if (first.rfind("# aprecond ", 0) != 0) {
      in.clear();
      in.seekg(0);
    }
    return std::make_shared<const PrecondTables>(PrecondTables::read_csv(in));
  }
  const TimeGrid grid = edm_grid(cfg.tables.n_nodes, cfg.grid.t_min, cfg.grid.t_max, cfg.grid.rho);
  return std::make_shared<const PrecondTables>(build_tables(cfg.mixture, grid, cfg.tables.options, exec));
}

PrecondFamily make_family(const RunConfig& cfg, FamilyKind kind, const std::shared_ptr<const PrecondTables>& tables) {
  return PrecondFamily(kind, cfg.sigma_data, is_analytic(kind) ? tables : nullptr);
}

int run(const std::string& subcommand, const std::filesystem::path& config_path,
        const std::vector<std::string>& overrides, const AppOptions& options, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_config(config_path, overrides);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  }
  try {
    std::filesystem::create_directories(cfg.output_dir);
    if (subcommand == "tables") return cmd_tables(cfg, options, out);
    if (subcommand == "train") return cmd_train(cfg, options, out);
    if (subcommand == "sample") return cmd_sample(cfg, options, out);
    if (subcommand == "eval") return cmd_eval(cfg, options, out);
    if (subcommand == "bound-check") return cmd_bound_check(cfg, options, out);
    if (subcommand == "coeff-dump") return cmd_coeff_dump(cfg, options, out);
    err << "unknown subcommand '" << subcommand << "'\n";
    return 2;
  } catch (const DivergenceError& e) {
    err << subcommand << ": diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << subcommand << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace aprecond
