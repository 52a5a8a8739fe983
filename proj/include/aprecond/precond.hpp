#pragma once

// Preconditioning coefficients f(t, s), g(t, s) of the skip-connection
// consistency function f·x + g·(network or denoiser output).

#include <memory>
#include <string>
#include <string_view>

#include "aprecond/common.hpp"
#include "aprecond/tables.hpp"

namespace aprecond {

struct CoeffPair {
  double f = 1.0;
  double g = 0.0;
};

enum class FamilyKind { cm, bcm, ctm, analytic_forward, analytic_backward };

/// CM and BCM combine x with the raw network F_θ; CTM and Analytic with the
/// EDM-parameterized denoiser D_θ.
enum class Combine { raw_network, denoiser };

std::string_view to_string(FamilyKind kind);
/// Accepts cm, bcm, ctm, analytic_fwd, analytic_bwd (and the long spellings).
FamilyKind family_kind_from_string(std::string_view name);

CoeffPair coeffs_cm(double t, double s, double sigma_data);
CoeffPair coeffs_ctm(double t, double s);
CoeffPair coeffs_bcm(double t, double s, double sigma_data);

/// Euler step of the generalized ODE:
///   f = (L_t S_t + (l_t − 1)(η_s − η_t)) / (L_s S_t),  g = (η_s − η_t) / (L_s S_t)
CoeffPair coeffs_analytic_forward(const PrecondTables& tables, double t, double s);

/// Backward rewriting, closed form:
///   f = L_t S_s / (L_s S_s + (1 − l_s)(η_s − η_t)),  g = (η_s − η_t) / (same)
/// Throws SingularCoefficientError when the forward coefficient f̂(s, t) is below 1e-12 in magnitude.
CoeffPair coeffs_analytic_backward(const PrecondTables& tables, double t, double s);

/// Backward coefficients by composition: f = 1/f̂(s, t), g = −ĝ(s, t)/f̂(s, t).
CoeffPair coeffs_analytic_backward_composed(const PrecondTables& tables, double t, double s);

/// Forward coefficients for the reversed jump s → t (destination later than source).
CoeffPair coeffs_analytic_forward_reversed(const PrecondTables& tables, double t, double s);

/// f·x + g·net_out. Throws std::invalid_argument on length mismatch.
Vec consistency_fn(CoeffPair pair, ConstVecRef x, ConstVecRef net_out);

class PrecondFamily {
 public:
  /// Throws std::invalid_argument when analytic kinds lack tables or other kinds carry them.
  PrecondFamily(FamilyKind kind, double sigma_data, std::shared_ptr<const PrecondTables> tables = nullptr);

  static PrecondFamily cm(double sigma_data) { return {FamilyKind::cm, sigma_data}; }
  static PrecondFamily bcm(double sigma_data) { return {FamilyKind::bcm, sigma_data}; }
  static PrecondFamily ctm(double sigma_data) { return {FamilyKind::ctm, sigma_data}; }
  static PrecondFamily analytic_forward(double sigma_data, std::shared_ptr<const PrecondTables> tables) {
    return {FamilyKind::analytic_forward, sigma_data, std::move(tables)};
  }
  static PrecondFamily analytic_backward(double sigma_data, std::shared_ptr<const PrecondTables> tables) {
    return {FamilyKind::analytic_backward, sigma_data, std::move(tables)};
  }

  FamilyKind kind() const { return kind_; }
  Combine combines_with() const;
  double sigma_data() const { return sigma_data_; }
  const std::shared_ptr<const PrecondTables>& tables() const { return tables_; }

  /// Coefficients for the jump t → s; requires 0 < s <= t.
  CoeffPair coeffs(double t, double s) const;

 private:
  FamilyKind kind_;
  double sigma_data_;
  std::shared_ptr<const PrecondTables> tables_;
};

}  // namespace aprecond
