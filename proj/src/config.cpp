#include "aprecond/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace aprecond {

namespace {

using nlohmann::json;

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream in(path);
  std::string part;
  while (std::getline(in, part, '.')) parts.push_back(part);
  return parts;
}

// Line of the key's first occurrence in the source text, following the path components in order.
std::size_t locate(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  for (const std::string& part : split_path(path)) {
    const std::string quoted = "\"" + part + "\"";
    bool found = false;
    while ((pos = text.find(quoted, pos)) != std::string::npos) {
      std::size_t after = pos + quoted.size();
      while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
      if (after < text.size() && text[after] == ':') {
        found = true;
        break;
      }
      pos = after;
    }
    if (!found) return 0;
  }
  return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) + 1;
}

class Reader {
 public:
  Reader(const json& root, const std::string& text, std::string source, std::set<std::string> overridden)
      : root_(root), text_(text), source_(std::move(source)), overridden_(std::move(overridden)) {}

  [[noreturn]] void fail(const std::string& path, const std::string& why) const {
    std::string where = source_;
    if (overridden_.count(path)) {
      where += " (override)";
    } else if (const std::size_t line = locate(text_, path); line > 0) {
      where += ":" + std::to_string(line);
    }
    throw ConfigError(where + ": " + path + ": " + why);
  }

  const json* find(const std::string& path) {
    known_.insert(path);
    const json* node = &root_;
    for (const std::string& part : split_path(path)) {
      if (!node->is_object()) return nullptr;
      const auto it = node->find(part);
      if (it == node->end()) return nullptr;
      node = &*it;
    }
    return node->is_null() ? nullptr : node;
  }

  double number(const std::string& path, double def) {
    const json* j = find(path);
    if (!j) return def;
    if (!j->is_number()) fail(path, "expected a number");
    return j->get<double>();
  }

  std::uint64_t count(const std::string& path, std::uint64_t def) {
    const json* j = find(path);
    if (!j) return def;
    if (!j->is_number_unsigned()) fail(path, "expected a non-negative integer");
    return j->get<std::uint64_t>();
  }

  bool flag(const std::string& path, bool def) {
    const json* j = find(path);
    if (!j) return def;
    if (!j->is_boolean()) fail(path, "expected true or false");
    return j->get<bool>();
  }

  std::string text(const std::string& path, const std::string& def) {
    const json* j = find(path);
    if (!j) return def;
    if (!j->is_string()) fail(path, "expected a string");
    return j->get<std::string>();
  }

  std::optional<std::string> optional_text(const std::string& path) {
    const json* j = find(path);
    if (!j) return std::nullopt;
    if (!j->is_string()) fail(path, "expected a string or null");
    return j->get<std::string>();
  }

  // Every key in the document must have been read.
  void check_unknown() const { walk(root_, ""); }

 private:
  void walk(const json& node, const std::string& prefix) const {
    if (!node.is_object()) return;
    for (const auto& [key, value] : node.items()) {
      const std::string path = prefix.empty() ? key : prefix + "." + key;
      if (known_.count(path)) continue;
      if (!value.is_object()) fail(path, "unknown key");
      walk(value, path);
    }
  }

  const json& root_;
  const std::string& text_;
  std::string source_;
  std::set<std::string> overridden_;
  std::set<std::string> known_;
};

void apply_override(json& doc, const std::string& item, std::set<std::string>& overridden, const std::string& source) {
  const std::size_t eq = item.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(source + " (override): '" + item + "': expected key=value");
  }
  const std::string key = item.substr(0, eq);
  const std::string raw = item.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &doc;
  const auto parts = split_path(key);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object()) {
      throw ConfigError(source + " (override): " + key + ": parent is not an object");
    }
    node = &(*node)[parts[i]];
  }
  *node = std::move(value);
  overridden.insert(key);
}

template <class T, class F>
T checked(Reader& r, const std::string& path, F&& make) {
  try {
    return make();
  } catch (const std::invalid_argument& e) {
    r.fail(path, e.what());
  } catch (const std::domain_error& e) {
    r.fail(path, e.what());
  }
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return eval.checkpoint ? *eval.checkpoint : output_dir / "checkpoint.bin";
}

RunConfig parse_config(const std::string& text, const std::string& source, const std::vector<std::string>& overrides,
                       const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(source + ":1: top level must be a JSON object");
  std::set<std::string> overridden;
  for (const std::string& item : overrides) apply_override(doc, item, overridden, source);

  Reader r(doc, text, source, overridden);
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  RunConfig cfg;
  if (!r.find("seed")) r.fail("seed", "required (no wall-clock seeding)");
  cfg.seed = r.count("seed", 0);
  cfg.sigma_data = r.number("sigma_data", 0.5);
  if (!(cfg.sigma_data > 0.0)) r.fail("sigma_data", "must be positive");

  if (const json* m = r.find("mixture")) {
    if (m->is_string()) {
      if (m->get<std::string>() != "two_mode") r.fail("mixture", "unknown preset '" + m->get<std::string>() + "'");
      cfg.mixture = GaussianMixture::two_mode();
    } else if (m->is_object()) {
      std::vector<double> weights;
      std::vector<Vec> means;
      std::vector<double> sigmas;
      try {
        weights = r.find("mixture.weights") ? r.find("mixture.weights")->get<std::vector<double>>() : weights;
        sigmas = r.find("mixture.sigmas") ? r.find("mixture.sigmas")->get<std::vector<double>>() : sigmas;
        if (const json* mj = r.find("mixture.means")) {
          for (const json& row : *mj) means.push_back(row.is_array() ? row.get<Vec>() : Vec{row.get<double>()});
        }
      } catch (const json::exception&) {
        r.fail("mixture", "weights, means and sigmas must be numeric arrays");
      }
      cfg.mixture = checked<GaussianMixture>(r, "mixture", [&] { return GaussianMixture(weights, means, sigmas); });
    } else {
      r.fail("mixture", "expected \"two_mode\" or an object");
    }
  }

  const auto n_steps = r.count("grid.n_steps", 18);
  const double t_min = r.number("grid.t_min", 0.002);
  const double t_max = r.number("grid.t_max", 80.0);
  const double rho = r.number("grid.rho", 7.0);
  cfg.grid = checked<TimeGrid>(r, "grid", [&] { return edm_grid(n_steps, t_min, t_max, rho); });

  cfg.family = checked<FamilyKind>(r, "family", [&] { return family_kind_from_string(r.text("family", "analytic_bwd")); });

  if (auto p = r.optional_text("tables.path")) {
    cfg.tables.path = resolve(*p);
    if (!std::filesystem::exists(*cfg.tables.path)) r.fail("tables.path", "file not found: " + cfg.tables.path->string());
  }
  cfg.tables.n_nodes = r.count("tables.n_nodes", 256);
  if (cfg.tables.n_nodes < 7) r.fail("tables.n_nodes", "must be >= 7");
  TableOptions& to = cfg.tables.options;
  to.seed = cfg.seed;
  to.n_samples = r.count("tables.n_samples", to.n_samples);
  if (to.n_samples == 0) r.fail("tables.n_samples", "must be >= 1");
  to.mode = checked<TraceMode>(r, "tables.mode", [&] { return trace_mode_from_string(r.text("tables.mode", "analytic_trace")); });
  to.n_probes = r.count("tables.n_probes", to.n_probes);
  if (to.mode == TraceMode::hutchinson && to.n_probes == 0) r.fail("tables.n_probes", "must be >= 1");
  to.smoothing_window = r.count("tables.smoothing_window", 0);

  TrainConfig& tc = cfg.train;
  tc.family = PrecondFamily::ctm(cfg.sigma_data);
  tc.grid = cfg.grid;
  tc.seed = cfg.seed;
  tc.loss_kind = checked<LossKind>(r, "train.loss", [&] { return loss_kind_from_string(r.text("train.loss", "ctm")); });
  tc.dsm_weight = r.number("train.dsm_weight", tc.dsm_weight);
  tc.max_solver_steps = r.count("train.max_solver_steps", std::min<std::uint64_t>(17, n_steps));
  tc.batch_size = r.count("train.batch_size", tc.batch_size);
  tc.iterations = r.count("train.iterations", tc.iterations);
  tc.ema_mu = r.number("train.ema_mu", tc.ema_mu);
  tc.distance = checked<Distance>(r, "train.distance",
                                  [&] { return distance_from_string(r.text("train.distance", "squared_l2")); });
  tc.lr = r.number("train.lr", tc.lr);
  tc.solver = checked<SolverKind>(r, "train.solver", [&] { return solver_kind_from_string(r.text("train.solver", "heun")); });
  tc.solver_substeps = r.count("train.solver_substeps", tc.solver_substeps);
  tc.oracle_substeps = r.count("train.oracle_substeps", tc.oracle_substeps);
  tc.cm_any_lower = r.flag("train.cm_any_lower", false);
  tc.log_every = r.count("train.log_every", tc.log_every);
  tc.eval_samples = r.count("train.eval_samples", tc.eval_samples);
  tc.eval_trajectories = r.count("train.eval_trajectories", tc.eval_trajectories);
  tc.eval_data_samples = r.count("train.eval_data_samples", tc.eval_data_samples);
  tc.net.dim = cfg.mixture.dim();
  tc.net.sigma_data = cfg.sigma_data;
  if (const json* h = r.find("train.hidden")) {
    if (!h->is_array() || h->empty()) r.fail("train.hidden", "expected a non-empty array of widths");
    tc.net.hidden.clear();
    for (const json& w : *h) {
      if (!w.is_number_unsigned() || w.get<std::size_t>() == 0) r.fail("train.hidden", "widths must be positive integers");
      tc.net.hidden.push_back(w.get<std::size_t>());
    }
  }
  tc.net.n_freq = r.count("train.n_freq", tc.net.n_freq);
  tc.net.base_freq = r.number("train.base_freq", tc.net.base_freq);
  if (!(tc.net.base_freq > 0.0)) r.fail("train.base_freq", "must be positive");
  try {
    validate(tc);
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const std::size_t colon = msg.find(':');
    r.fail(msg.substr(0, colon), msg.substr(colon + 2));
  }

  EvalSettings& ev = cfg.eval;
  if (auto p = r.optional_text("eval.checkpoint")) ev.checkpoint = resolve(*p);
  ev.n_samples = r.count("eval.n_samples", ev.n_samples);
  ev.sample_steps = r.count("eval.sample_steps", ev.sample_steps);
  ev.n_points = r.count("eval.n_points", ev.n_points);
  ev.bound_max_ratio = r.number("eval.bound_max_ratio", ev.bound_max_ratio);
  ev.n_tau = r.count("eval.n_tau", ev.n_tau);
  ev.oracle_substeps = r.count("eval.oracle_substeps", ev.oracle_substeps);
  ev.coeff_points = r.count("eval.coeff_points", ev.coeff_points);
  if (ev.n_samples == 0) r.fail("eval.n_samples", "must be >= 1");
  if (ev.sample_steps == 0 || ev.sample_steps > n_steps) r.fail("eval.sample_steps", "must lie in [1, grid.n_steps]");
  if (ev.n_points == 0) r.fail("eval.n_points", "must be >= 1");
  if (!(ev.bound_max_ratio > 1.0)) r.fail("eval.bound_max_ratio", "must exceed 1");
  if (ev.n_tau < 2) r.fail("eval.n_tau", "must be >= 2");
  if (ev.oracle_substeps < 100) r.fail("eval.oracle_substeps", "must be >= 100");
  if (ev.coeff_points < 2) r.fail("eval.coeff_points", "must be >= 2");

  cfg.output_dir = resolve(r.text("output_dir", "out"));
  r.check_unknown();

  cfg.canonical = doc.dump();
  cfg.hash = fnv1a64(cfg.canonical);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string(), overrides, path.parent_path().empty() ? "." : path.parent_path());
}

}  // namespace aprecond
