#pragma once

// Subcommand driver shared by the CLI and the tests.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aprecond/config.hpp"
#include "aprecond/parallel.hpp"

namespace aprecond {

inline constexpr const char* kVersion = "0.1.0";

struct AppOptions {
  std::optional<std::string> family;  // coeff-dump: one family instead of all five
  Exec exec = Exec::parallel;
};

/// Runs tables | train | sample | eval | bound-check | coeff-dump.
/// Returns 0 on success, 1 on runtime failure or bound violations, 2 on config
/// errors, 3 on divergence. Diagnostics go to `err`, progress to `out`.
int run(const std::string& subcommand, const std::filesystem::path& config_path,
        const std::vector<std::string>& overrides, const AppOptions& options, std::ostream& out, std::ostream& err);

/// Tables for cfg: read from cfg.tables.path, or estimated on an n_nodes EDM grid.
std::shared_ptr<const PrecondTables> load_or_build_tables(const RunConfig& cfg, Exec exec);

PrecondFamily make_family(const RunConfig& cfg, FamilyKind kind, const std::shared_ptr<const PrecondTables>& tables);

/// "# aprecond <version> config_hash=<hex> seed=<n>"
std::string artifact_header(const RunConfig& cfg);

}  // namespace aprecond
