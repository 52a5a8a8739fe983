#include "aprecond/tables.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "aprecond/csv.hpp"
#include "aprecond/schedule.hpp"

namespace aprecond {

namespace {

constexpr std::size_t kGaussOrder = 16;

struct GaussLegendre {
  std::array<double, kGaussOrder> nodes{};    // on [0, 1]
  std::array<double, kGaussOrder> weights{};  // sum to 1

  GaussLegendre() {
    const auto n = static_cast<int>(kGaussOrder);
    for (int i = 0; i < n; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0;
        double p1 = x;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      nodes[static_cast<std::size_t>(i)] = 0.5 * (1.0 - x);
      weights[static_cast<std::size_t>(i)] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
  }
};

const GaussLegendre& gauss() {
  static const GaussLegendre rule;
  return rule;
}

}  // namespace

PrecondTables::PrecondTables(std::vector<double> lambdas, std::vector<double> l_values,
                             std::vector<double> s_values, TableMeta meta)
    : lambdas_(std::move(lambdas)), l_(std::move(l_values)), s_(std::move(s_values)), meta_(std::move(meta)) {
  const std::size_t n = lambdas_.size();
  if (n < 2) throw std::invalid_argument("PrecondTables: need at least two nodes");
  if (l_.size() != n || s_.size() != n) throw std::invalid_argument("PrecondTables: l/s length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(lambdas_[i]) || !std::isfinite(l_[i]) || !std::isfinite(s_[i])) {
      throw std::invalid_argument("PrecondTables: non-finite node value at index " + std::to_string(i));
    }
    if (i > 0 && !(lambdas_[i] > lambdas_[i - 1])) {
      throw std::invalid_argument("PrecondTables: lambdas must be strictly increasing");
    }
  }
  log_L_.assign(n, 0.0);
  log_S_.assign(n, 0.0);
  eta_.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double h = lambdas_[i + 1] - lambdas_[i];
    log_L_[i + 1] = log_L_[i] + 0.5 * h * (l_[i] + l_[i + 1]);
    log_S_[i + 1] = log_S_[i] + 0.5 * h * (s_[i] + s_[i + 1]);
  }
  L_.resize(n);
  S_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    L_[i] = std::exp(log_L_[i]);
    S_[i] = std::exp(log_S_[i]);
  }
  for (std::size_t i = 0; i + 1 < n; ++i) eta_[i + 1] = eta_[i] + eta_partial(i, lambdas_[i + 1] - lambdas_[i]);
  t_max_ = std::exp(-lambdas_.front());
  t_min_ = std::exp(-lambdas_.back());
}

// ∫_{u0}^{u1} exp(log L(λ_i + v) + log S(λ_i + v)) dv with the quadratic
// log-integrands of interval i, by composite Gauss-Legendre.
double PrecondTables::eta_range(std::size_t i, double u0, double u1) const {
  if (u1 <= u0) return 0.0;
  const double h = lambdas_[i + 1] - lambdas_[i];
  const double rate = l_[i] + s_[i];
  const double curve = 0.5 * ((l_[i + 1] - l_[i]) + (s_[i + 1] - s_[i])) / h;
  const double base = log_L_[i] + log_S_[i];
  const double span = u1 - u0;
  const double steep = std::max(std::abs(rate + 2.0 * curve * u0), std::abs(rate + 2.0 * curve * u1));
  const std::size_t panels = 1 + static_cast<std::size_t>(steep * span / 0.5);
  const double width = span / static_cast<double>(panels);
  const auto& rule = gauss();
  double acc = 0.0;
  for (std::size_t p = 0; p < panels; ++p) {
    const double lo = u0 + width * static_cast<double>(p);
    double panel = 0.0;
    for (std::size_t q = 0; q < kGaussOrder; ++q) {
      const double v = lo + width * rule.nodes[q];
      panel += rule.weights[q] * std::exp(base + rate * v + curve * v * v);
    }
    acc += panel * width;
  }
  return acc;
}

double PrecondTables::check_lambda(double lambda) const {
  const double tol = 1e-12 * (1.0 + std::abs(lambda));
  if (!(lambda >= lambdas_.front() - tol) || !(lambda <= lambdas_.back() + tol)) {
    throw std::out_of_range("PrecondTables: lambda " + std::to_string(lambda) + " outside [" +
                            std::to_string(lambdas_.front()) + ", " + std::to_string(lambdas_.back()) + "]");
  }
  return std::clamp(lambda, lambdas_.front(), lambdas_.back());
}

double PrecondTables::eta_between(double t, double s) const {
  if (!(t > 0.0) || !(s > 0.0)) throw std::out_of_range("PrecondTables: times must be positive");
  double a = check_lambda(-std::log(t));
  double b = check_lambda(-std::log(s));
  double sign = 1.0;
  if (b < a) {
    std::swap(a, b);
    sign = -1.0;
  }
  if (a == b) return 0.0;
  const std::size_t i = interval_of(a);
  const std::size_t last = interval_of(b);
  if (i == last) return sign * eta_range(i, a - lambdas_[i], b - lambdas_[i]);
  double acc = eta_range(i, a - lambdas_[i], lambdas_[i + 1] - lambdas_[i]);
  acc += eta_[last] - eta_[i + 1];
  acc += eta_range(last, 0.0, b - lambdas_[last]);
  return sign * acc;
}

std::vector<double> PrecondTables::times() const {
  std::vector<double> out(lambdas_.size());
  std::transform(lambdas_.begin(), lambdas_.end(), out.begin(), [](double lam) { return std::exp(-lam); });
  return out;
}

std::size_t PrecondTables::interval_of(double lambda) const {
  const auto it = std::upper_bound(lambdas_.begin(), lambdas_.end(), lambda);
  if (it == lambdas_.begin()) return 0;
  const auto idx = static_cast<std::size_t>(it - lambdas_.begin()) - 1;
  return std::min(idx, lambdas_.size() - 2);
}

TablePoint PrecondTables::at_lambda(double lambda) const {
  lambda = check_lambda(lambda);
  const std::size_t i = interval_of(lambda);
  const double h = lambdas_[i + 1] - lambdas_[i];
  TablePoint p;
  p.dl_dlambda = (l_[i + 1] - l_[i]) / h;
  p.ds_dlambda = (s_[i + 1] - s_[i]) / h;
  const auto node = [&](std::size_t k) {
    p.l = l_[k];
    p.s = s_[k];
    p.log_L = log_L_[k];
    p.log_S = log_S_[k];
    p.L = L_[k];
    p.S = S_[k];
    p.eta = eta_[k];
    return p;
  };
  if (lambda == lambdas_[i]) return node(i);
  if (lambda == lambdas_[i + 1]) return node(i + 1);
  const double u = lambda - lambdas_[i];
  p.l = l_[i] + p.dl_dlambda * u;
  p.s = s_[i] + p.ds_dlambda * u;
  p.log_L = log_L_[i] + l_[i] * u + 0.5 * p.dl_dlambda * u * u;
  p.log_S = log_S_[i] + s_[i] * u + 0.5 * p.ds_dlambda * u * u;
  p.L = std::exp(p.log_L);
  p.S = std::exp(p.log_S);
  p.eta = eta_[i] + eta_partial(i, u);
  return p;
}

TablePoint PrecondTables::at(double t) const {
  if (!(t > 0.0)) throw std::out_of_range("PrecondTables: t must be positive");
  return at_lambda(-std::log(t));
}

namespace {

std::pair<double, double> one_sided(const std::vector<double>& lam, const std::vector<double>& val,
                                    double lambda) {
  const auto slope = [&](std::size_t i) { return (val[i + 1] - val[i]) / (lam[i + 1] - lam[i]); };
  const auto it = std::lower_bound(lam.begin(), lam.end(), lambda);
  const auto n = lam.size();
  if (it != lam.end() && *it == lambda) {
    const auto i = static_cast<std::size_t>(it - lam.begin());
    const double left = i == 0 ? slope(0) : slope(i - 1);
    const double right = i + 1 >= n ? slope(n - 2) : slope(i);
    return {left, right};
  }
  std::size_t i = it == lam.begin() ? 0 : static_cast<std::size_t>(it - lam.begin()) - 1;
  i = std::min(i, n - 2);
  return {slope(i), slope(i)};
}

}  // namespace

std::pair<double, double> PrecondTables::l_slopes(double lambda) const { return one_sided(lambdas_, l_, lambda); }
std::pair<double, double> PrecondTables::s_slopes(double lambda) const { return one_sided(lambdas_, s_, lambda); }

double PrecondTables::max_abs_ls(double t, double s) const {
  const double lo = -std::log(std::max(t, s));
  const double hi = -std::log(std::min(t, s));
  const TablePoint a = at_lambda(lo);
  const TablePoint b = at_lambda(hi);
  double c = std::max({std::abs(a.l), std::abs(a.s), std::abs(b.l), std::abs(b.s)});
  for (std::size_t i = 0; i < lambdas_.size(); ++i) {
    if (lambdas_[i] > lo && lambdas_[i] < hi) c = std::max({c, std::abs(l_[i]), std::abs(s_[i])});
  }
  return c;
}

void PrecondTables::write_csv(std::ostream& out) const {
  out << "# aprecond-tables v1\n";
  out << "# source=" << meta_.source << " n_samples=" << meta_.n_samples << " n_probes=" << meta_.n_probes
      << " seed=" << meta_.seed << " smoothing=" << meta_.smoothing_window << " nodes=" << lambdas_.size() << "\n";
  out << "# guard_activations=";
  for (std::size_t i = 0; i < meta_.guard_activations.size(); ++i) {
    out << (i ? ";" : "") << meta_.guard_activations[i];
  }
  out << "\n";
  out << "t,lambda,l,s,L,S,eta\n";
  for (std::size_t i = 0; i < lambdas_.size(); ++i) {
    out << csv::num(std::exp(-lambdas_[i])) << ',' << csv::num(lambdas_[i]) << ',' << csv::num(l_[i]) << ','
        << csv::num(s_[i]) << ',' << csv::num(L_[i]) << ',' << csv::num(S_[i]) << ',' << csv::num(eta_[i]) << '\n';
  }
}

PrecondTables PrecondTables::read_csv(std::istream& in) {
  TableMeta meta;
  std::vector<double> lam, l, s;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream fields(line.substr(1));
      std::string kv;
      while (fields >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        if (key == "source") meta.source = value;
        else if (key == "n_samples") meta.n_samples = std::stoull(value);
        else if (key == "n_probes") meta.n_probes = std::stoull(value);
        else if (key == "seed") meta.seed = std::stoull(value);
        else if (key == "smoothing") meta.smoothing_window = std::stoull(value);
        else if (key == "guard_activations") {
          std::istringstream ids(value);
          std::string id;
          while (std::getline(ids, id, ';')) {
            if (!id.empty()) meta.guard_activations.push_back(std::stoull(id));
          }
        }
      }
      continue;
    }
    if (!header_seen) {
      if (line.rfind("t,lambda,l,s", 0) != 0) {
        throw std::runtime_error("tables csv line " + std::to_string(line_no) + ": expected column header");
      }
      header_seen = true;
      continue;
    }
    const auto cells = csv::split(line);
    if (cells.size() != 7) {
      throw std::runtime_error("tables csv line " + std::to_string(line_no) + ": expected 7 columns");
    }
    try {
      lam.push_back(std::stod(cells[1]));
      l.push_back(std::stod(cells[2]));
      s.push_back(std::stod(cells[3]));
    } catch (const std::exception&) {
      throw std::runtime_error("tables csv line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return PrecondTables(std::move(lam), std::move(l), std::move(s), std::move(meta));
}

PrecondTables constant_tables(const std::vector<double>& times_desc, double l, double s) {
  std::vector<double> lam;
  lam.reserve(times_desc.size());
  for (double t : times_desc) lam.push_back(lambda_of_t(t));
  return PrecondTables(lam, std::vector<double>(lam.size(), l), std::vector<double>(lam.size(), s));
}

}  // namespace aprecond
