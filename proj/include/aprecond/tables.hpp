#pragma once

// Discretized Analytic-Precond state. Node values of l_t and s_t are stored on
// an increasing λ grid (λ_T first). Between nodes l and s are linear in λ and
// log L, log S are their exact integrals, so d log L/dλ = l and d log S/dλ = s
// hold everywhere, not only at the nodes. η = ∫ L·S dλ is integrated with
// Gauss-Legendre quadrature on every interval and is therefore exact at and
// between nodes up to round-off.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace aprecond {

struct TableMeta {
  std::string source = "injected";  // "injected" or the trace mode used for estimation
  std::size_t n_samples = 0;
  std::size_t n_probes = 0;
  std::uint64_t seed = 0;
  std::size_t smoothing_window = 0;
  std::vector<std::size_t> guard_activations;  // node indices where the s_t denominator guard fired
};

struct TablePoint {
  double l = 0.0;
  double s = 0.0;
  double L = 1.0;
  double S = 1.0;
  double eta = 0.0;
  double log_L = 0.0;
  double log_S = 0.0;
  double dl_dlambda = 0.0;  // slope of the l interpolant on the interval containing λ
  double ds_dlambda = 0.0;
};

class PrecondTables {
 public:
  PrecondTables() = default;

  /// Integrates node values of l and s given on a strictly increasing λ grid.
  /// Throws std::invalid_argument for fewer than 2 nodes or mismatched lengths.
  PrecondTables(std::vector<double> lambdas, std::vector<double> l_values, std::vector<double> s_values,
                TableMeta meta = {});

  std::size_t size() const { return lambdas_.size(); }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }
  double lambda_min() const { return lambdas_.front(); }
  double lambda_max() const { return lambdas_.back(); }

  const std::vector<double>& lambdas() const { return lambdas_; }
  const std::vector<double>& l_values() const { return l_; }
  const std::vector<double>& s_values() const { return s_; }
  const std::vector<double>& L_values() const { return L_; }
  const std::vector<double>& S_values() const { return S_; }
  const std::vector<double>& eta_values() const { return eta_; }
  const TableMeta& meta() const { return meta_; }

  /// Times of the nodes (decreasing, t_max first).
  std::vector<double> times() const;

  /// Interpolated state at time t. Throws std::out_of_range outside [t_min, t_max].
  TablePoint at(double t) const;
  TablePoint at_lambda(double lambda) const;

  /// η(s) − η(t) integrated directly over [λ(t), λ(s)]; avoids cancellation for s near t.
  double eta_between(double t, double s) const;

  /// One-sided slopes of l at λ; they differ only at interior nodes.
  std::pair<double, double> l_slopes(double lambda) const;
  std::pair<double, double> s_slopes(double lambda) const;

  /// max(|l|, |s|) over λ ∈ [λ(t), λ(s)], the bound constant C.
  double max_abs_ls(double t, double s) const;

  void write_csv(std::ostream& out) const;
  /// Reads the format of write_csv; integrals are rebuilt from (λ, l, s).
  static PrecondTables read_csv(std::istream& in);

 private:
  std::size_t interval_of(double lambda) const;
  double eta_partial(std::size_t i, double u) const { return eta_range(i, 0.0, u); }
  double eta_range(std::size_t i, double u0, double u1) const;
  double check_lambda(double lambda) const;

  std::vector<double> lambdas_;
  std::vector<double> l_;
  std::vector<double> s_;
  std::vector<double> log_L_;
  std::vector<double> log_S_;
  std::vector<double> L_;
  std::vector<double> S_;
  std::vector<double> eta_;
  double t_min_ = 0.0;
  double t_max_ = 0.0;
  TableMeta meta_;
};

/// Tables with constant l and s on the given times (decreasing). l ≡ 0, s ≡ −1
/// reproduces the CTM coefficients.
PrecondTables constant_tables(const std::vector<double>& times_desc, double l, double s);

}  // namespace aprecond
