#include "aprecond/precond.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace aprecond {

namespace {

void check_jump(double t, double s, const char* who) {
  if (!(s > 0.0) || !(s <= t)) {
    throw std::invalid_argument(std::string(who) + ": need 0 < s <= t (t=" + std::to_string(t) +
                                ", s=" + std::to_string(s) + ")");
  }
}

// Forward coefficients for a jump from `from` to `to`, in either direction.
CoeffPair forward_raw(const PrecondTables& tables, double from, double to) {
  const TablePoint a = tables.at(from);
  const TablePoint b = tables.at(to);
  const double d_eta = tables.eta_between(from, to);
  const double scale = 1.0 / (b.L * a.S);
  return {std::exp(a.log_L - b.log_L) + (a.l - 1.0) * d_eta * scale, d_eta * scale};
}

constexpr double kSingularGuard = 1e-12;

}  // namespace

std::string_view to_string(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::cm: return "cm";
    case FamilyKind::bcm: return "bcm";
    case FamilyKind::ctm: return "ctm";
    case FamilyKind::analytic_forward: return "analytic_fwd";
    case FamilyKind::analytic_backward: return "analytic_bwd";
  }
  return "unknown";
}

FamilyKind family_kind_from_string(std::string_view name) {
  if (name == "cm") return FamilyKind::cm;
  if (name == "bcm") return FamilyKind::bcm;
  if (name == "ctm") return FamilyKind::ctm;
  if (name == "analytic_fwd" || name == "analytic_forward") return FamilyKind::analytic_forward;
  if (name == "analytic_bwd" || name == "analytic_backward" || name == "analytic") return FamilyKind::analytic_backward;
  throw std::invalid_argument("unknown preconditioning family '" + std::string(name) + "'");
}

CoeffPair coeffs_cm(double t, double s, double sigma_data) {
  check_jump(t, s, "coeffs_cm");
  const double s2 = sigma_data * sigma_data;
  const double gap = t - s;
  return {s2 / (s2 + gap * gap), sigma_data * gap / std::sqrt(s2 + t * t)};
}

CoeffPair coeffs_ctm(double t, double s) {
  check_jump(t, s, "coeffs_ctm");
  const double r = s / t;
  return {r, 1.0 - r};
}

CoeffPair coeffs_bcm(double t, double s, double sigma_data) {
  check_jump(t, s, "coeffs_bcm");
  const double s2 = sigma_data * sigma_data;
  return {(s2 + t * s) / (s2 + t * t), sigma_data * (t - s) / std::sqrt(s2 + t * t)};
}

CoeffPair coeffs_analytic_forward(const PrecondTables& tables, double t, double s) {
  check_jump(t, s, "coeffs_analytic_forward");
  return forward_raw(tables, t, s);
}

CoeffPair coeffs_analytic_forward_reversed(const PrecondTables& tables, double t, double s) {
  check_jump(t, s, "coeffs_analytic_forward_reversed");
  return forward_raw(tables, s, t);
}

CoeffPair coeffs_analytic_backward(const PrecondTables& tables, double t, double s) {
  check_jump(t, s, "coeffs_analytic_backward");
  const TablePoint at_t = tables.at(t);
  const TablePoint at_s = tables.at(s);
  const double d_eta = tables.eta_between(t, s);
  // Numerator and denominator divided by L_s S_s; the denominator is then f̂(s, t)·L_t/L_s.
  const double ratio = std::exp(at_t.log_L - at_s.log_L);
  const double denom = 1.0 + (1.0 - at_s.l) * d_eta / (at_s.L * at_s.S);
  if (std::abs(denom / ratio) < kSingularGuard) {
    throw SingularCoefficientError("coeffs_analytic_backward: singular forward coefficient for t=" +
                                   std::to_string(t) + ", s=" + std::to_string(s));
  }
  return {ratio / denom, d_eta / (at_s.L * at_s.S) / denom};
}

CoeffPair coeffs_analytic_backward_composed(const PrecondTables& tables, double t, double s) {
  check_jump(t, s, "coeffs_analytic_backward_composed");
  const CoeffPair hat = forward_raw(tables, s, t);
  if (std::abs(hat.f) < kSingularGuard) {
    throw SingularCoefficientError("coeffs_analytic_backward_composed: singular forward coefficient");
  }
  return {1.0 / hat.f, -hat.g / hat.f};
}

Vec consistency_fn(CoeffPair pair, ConstVecRef x, ConstVecRef net_out) {
  if (x.size() != net_out.size()) throw std::invalid_argument("consistency_fn: length mismatch");
  Vec out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = pair.f * x[j] + pair.g * net_out[j];
  return out;
}

PrecondFamily::PrecondFamily(FamilyKind kind, double sigma_data, std::shared_ptr<const PrecondTables> tables)
    : kind_(kind), sigma_data_(sigma_data), tables_(std::move(tables)) {
  if (!(sigma_data_ > 0.0)) throw std::invalid_argument("PrecondFamily: sigma_data must be positive");
  const bool analytic = kind_ == FamilyKind::analytic_forward || kind_ == FamilyKind::analytic_backward;
  if (analytic && !tables_) throw std::invalid_argument("PrecondFamily: analytic families require tables");
  if (!analytic && tables_) throw std::invalid_argument("PrecondFamily: only analytic families take tables");
}

Combine PrecondFamily::combines_with() const {
  return (kind_ == FamilyKind::cm || kind_ == FamilyKind::bcm) ? Combine::raw_network : Combine::denoiser;
}

CoeffPair PrecondFamily::coeffs(double t, double s) const {
  switch (kind_) {
    case FamilyKind::cm: return coeffs_cm(t, s, sigma_data_);
    case FamilyKind::bcm: return coeffs_bcm(t, s, sigma_data_);
    case FamilyKind::ctm: return coeffs_ctm(t, s);
    case FamilyKind::analytic_forward: return coeffs_analytic_forward(*tables_, t, s);
    case FamilyKind::analytic_backward: return coeffs_analytic_backward(*tables_, t, s);
  }
  throw std::logic_error("PrecondFamily: unknown kind");
}

}  // namespace aprecond
