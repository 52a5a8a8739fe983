#pragma once

// Run configuration: a JSON document plus dotted key=value overrides.
//
//   {
//     "seed": 7,                                   required
//     "sigma_data": 0.5,
//     "mixture": "two_mode" | {"weights": [...], "means": [[...], ...], "sigmas": [...]},
//     "grid":   {"n_steps": 18, "t_min": 0.002, "t_max": 80, "rho": 7},
//     "family": "cm" | "bcm" | "ctm" | "analytic_fwd" | "analytic_bwd",
//     "tables": {"path": null, "n_nodes": 256, "n_samples": 4096, "mode": "analytic_trace",
//                "n_probes": 64, "smoothing_window": 0},
//     "train":  {"loss": "ctm", "dsm_weight": 1, "max_solver_steps": 17, "batch_size": 128,
//                "iterations": 20000, "ema_mu": 0.999, "distance": "squared_l2", "lr": 4e-4,
//                "solver": "heun", "solver_substeps": 1, "cm_any_lower": false,
//                "hidden": [64, 64, 64], "n_freq": 8, "base_freq": 0.125, "log_every": 500,
//                "eval_samples": 4096, "eval_trajectories": 256, "eval_data_samples": 100000},
//     "eval":   {"checkpoint": null, "n_samples": 4096, "sample_steps": 2, "n_points": 100,
//                "bound_max_ratio": 5, "n_tau": 64, "oracle_substeps": 1000, "coeff_points": 50},
//     "output_dir": "out"
//   }
//
// Everything except "seed" has the default shown. Relative paths resolve
// against the directory of the config file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aprecond/analytic.hpp"
#include "aprecond/distill.hpp"
#include "aprecond/precond.hpp"
#include "aprecond/schedule.hpp"
#include "aprecond/teacher.hpp"

namespace aprecond {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TableSettings {
  std::optional<std::filesystem::path> path;  // prebuilt tables; built in-process when absent
  std::size_t n_nodes = 256;
  TableOptions options;
};

struct EvalSettings {
  std::optional<std::filesystem::path> checkpoint;  // defaults to <output_dir>/checkpoint.bin
  std::size_t n_samples = 4096;
  std::size_t sample_steps = 2;
  std::size_t n_points = 100;
  double bound_max_ratio = 5.0;
  std::size_t n_tau = 64;
  std::size_t oracle_substeps = 1000;
  std::size_t coeff_points = 50;
};

struct RunConfig {
  std::uint64_t seed = 0;
  double sigma_data = 0.5;
  GaussianMixture mixture = GaussianMixture::two_mode();
  TimeGrid grid;
  FamilyKind family = FamilyKind::analytic_backward;
  TableSettings tables;
  TrainConfig train;  // family is filled in by make_family once tables exist
  EvalSettings eval;
  std::filesystem::path output_dir;
  std::string canonical;  // canonical JSON after overrides
  std::uint64_t hash = 0;

  std::filesystem::path checkpoint_path() const;
};

/// Parses and validates. Errors are ConfigError with "<source>:<line>: <key>: <reason>".
RunConfig parse_config(const std::string& text, const std::string& source,
                       const std::vector<std::string>& overrides = {}, const std::filesystem::path& base_dir = ".");
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace aprecond
