#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <memory>
#include <random>

#include "aprecond/precond.hpp"
#include "aprecond/schedule.hpp"
#include "aprecond/teacher.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace aprecond;
using testing::rel_err;
using hp = boost::multiprecision::cpp_bin_float_50;

namespace {

std::shared_ptr<const PrecondTables> wavy(std::size_t n = 400) {
  const TimeGrid g = edm_grid(n - 1, 0.002, 80.0, 7.0);
  std::vector<double> lam, l, s;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = lambda_of_t(g[i]);
    lam.push_back(x);
    l.push_back(0.5 + 0.4 * std::tanh(x));
    s.push_back(-1.0 + 0.3 * std::sin(x));
  }
  return std::make_shared<const PrecondTables>(lam, l, s);
}

std::vector<PrecondFamily> all_families(const std::shared_ptr<const PrecondTables>& tb) {
  return {PrecondFamily::cm(0.5), PrecondFamily::bcm(0.5), PrecondFamily::ctm(0.5),
          PrecondFamily::analytic_forward(0.5, tb), PrecondFamily::analytic_backward(0.5, tb)};
}

}  // namespace

TEST_CASE("boundary condition for every family") {
  const auto tb = wavy();
  const TimeGrid g = edm_grid(49, 0.002, 80.0, 7.0);
  for (const PrecondFamily& fam : all_families(tb)) {
    for (double t : g.points) {
      const CoeffPair c = fam.coeffs(t, t);
      CHECK(std::abs(c.f - 1.0) <= 1e-9);
      CHECK(std::abs(c.g) <= 1e-9);
    }
  }
}

TEST_CASE("CM coefficients against 50-digit evaluation") {
  const CoeffPair c = coeffs_cm(80.0, 0.002, 0.5);
  const hp gap = hp(80) - hp("0.002");
  const hp f = hp("0.25") / (hp("0.25") + gap * gap);
  const hp g = hp("0.5") * gap / sqrt(hp("0.25") + hp(6400));
  CHECK(rel_err(c.f, f.convert_to<double>()) < 1e-14);
  CHECK(rel_err(c.g, g.convert_to<double>()) < 1e-14);
  CHECK(std::abs(c.f) < 1e-3);
}

TEST_CASE("CTM and BCM coefficients") {
  const CoeffPair half = coeffs_ctm(2.0, 1.0);
  CHECK(half.f == 0.5);
  CHECK(half.g == 0.5);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const double t = testing::log_uniform(rng, 0.002, 80.0);
    const double s = testing::log_uniform(rng, 0.002, t);
    const CoeffPair c = coeffs_ctm(t, s);
    CHECK(c.f + c.g == 1.0);
  }
  const CoeffPair b = coeffs_bcm(1.0, 0.5, 0.5);
  CHECK(rel_err(b.f, 0.6) < 1e-15);
  const hp bg = hp("0.5") * hp("0.5") / sqrt(hp("1.25"));
  CHECK(rel_err(b.g, bg.convert_to<double>()) < 1e-15);
  const CoeffPair b0 = coeffs_bcm(40.0, 1e-9, 0.5);
  CHECK(rel_err(b0.f, 0.25 / (0.25 + 1600.0)) < 1e-6);
}

TEST_CASE("coefficient arguments are validated") {
  CHECK_THROWS_AS(coeffs_ctm(1.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(coeffs_cm(1.0, 0.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(coeffs_bcm(1.0, -1.0, 0.5), std::invalid_argument);
  const auto tb = wavy();
  CHECK_THROWS_AS(coeffs_analytic_forward(*tb, 0.5, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(coeffs_analytic_backward(*tb, 100.0, 1.0), std::out_of_range);
  CHECK_THROWS_AS(PrecondFamily(FamilyKind::analytic_forward, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(PrecondFamily(FamilyKind::ctm, 0.5, tb), std::invalid_argument);
  CHECK_THROWS_AS(PrecondFamily(FamilyKind::ctm, 0.0), std::invalid_argument);
}

TEST_CASE("analytic coefficients degenerate to CTM") {
  const TimeGrid g = edm_grid(1999, 0.002, 80.0, 7.0);
  const PrecondTables tb = constant_tables(g.points, 0.0, -1.0);
  std::mt19937_64 rng(10);
  for (int i = 0; i < 300; ++i) {
    const double t = testing::log_uniform(rng, 0.002, 80.0);
    const double s = testing::log_uniform(rng, 0.002, t);
    const CoeffPair ref = coeffs_ctm(t, s);
    for (const CoeffPair c : {coeffs_analytic_forward(tb, t, s), coeffs_analytic_backward(tb, t, s)}) {
      CHECK(rel_err(c.f, ref.f) <= 1e-3);
      CHECK(rel_err(c.g, ref.g) <= 1e-3);
    }
  }
}

TEST_CASE("backward coefficients invert the reversed forward step") {
  const auto tb = wavy();
  std::mt19937_64 rng(12);
  for (int i = 0; i < 300; ++i) {
    const double t = testing::log_uniform(rng, 0.002, 80.0);
    const double s = testing::log_uniform(rng, 0.002, t);
    const CoeffPair hat = coeffs_analytic_forward_reversed(*tb, t, s);
    const CoeffPair bwd = coeffs_analytic_backward(*tb, t, s);
    const CoeffPair comp = coeffs_analytic_backward_composed(*tb, t, s);
    CHECK(std::abs(bwd.f * hat.f - 1.0) <= 1e-12);
    CHECK(std::abs(bwd.g + hat.g * bwd.f) <= 1e-12 * std::max(1.0, std::abs(bwd.g)));
    CHECK(std::abs(bwd.f - comp.f) <= 1e-12 * std::max(1.0, std::abs(comp.f)));
    CHECK(std::abs(bwd.g - comp.g) <= 1e-12 * std::max(1.0, std::abs(comp.g)));
  }
}

TEST_CASE("forward coefficients are one generalized Euler step") {
  // L_s x_s = L_t x_t + (η_s − η_t) g/S_t with g = D − (1 − l_t) x.
  const GaussianMixture gm = GaussianMixture::two_mode();
  const auto tb = wavy();
  for (auto [t, s] : {std::pair{5.0, 1.0}, {0.5, 0.49}, {70.0, 0.01}}) {
    const Vec x{0.8};
    const TablePoint pt = tb->at(t);
    const TablePoint ps = tb->at(s);
    const double d_eta = tb->eta_between(t, s);
    const double rhs = (pt.L * x[0] + d_eta * g_phi(gm, x, t, pt.l)[0] / pt.S) / ps.L;
    const double lhs = consistency_fn(coeffs_analytic_forward(*tb, t, s), x, denoise(gm, x, t))[0];
    CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
  }
}

TEST_CASE("analytic g approaches the step measure as s approaches t") {
  const auto tb = wavy();
  for (double t : {0.01, 1.0, 30.0}) {
    double prev = 1.0;
    for (double delta : {1e-2, 1e-3, 1e-4}) {
      const double s = t * (1 - delta);
      const TablePoint pt = tb->at(t);
      const TablePoint ps = tb->at(s);
      const double measure = tb->eta_between(t, s) / (ps.L * pt.S);
      const double err = std::abs(coeffs_analytic_backward(*tb, t, s).g / measure - 1.0);
      CHECK(err <= 2.0 * delta);
      CHECK(err <= prev);
      prev = err;
    }
  }
}

TEST_CASE("consistency_fn") {
  const Vec x{1.0, -2.0};
  const Vec n{5.0, 7.0};
  CHECK(consistency_fn({1.0, 0.0}, x, n) == x);
  CHECK(consistency_fn({0.0, 1.0}, x, n) == n);
  CHECK_THROWS_AS(consistency_fn({1.0, 0.0}, x, Vec{1.0}), std::invalid_argument);
}

TEST_CASE("family metadata") {
  CHECK(PrecondFamily::cm(0.5).combines_with() == Combine::raw_network);
  CHECK(PrecondFamily::bcm(0.5).combines_with() == Combine::raw_network);
  CHECK(PrecondFamily::ctm(0.5).combines_with() == Combine::denoiser);
  const auto tb = wavy(20);
  CHECK(PrecondFamily::analytic_backward(0.5, tb).combines_with() == Combine::denoiser);
  for (FamilyKind k : {FamilyKind::cm, FamilyKind::bcm, FamilyKind::ctm, FamilyKind::analytic_forward,
                       FamilyKind::analytic_backward}) {
    CHECK(family_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(family_kind_from_string("edm"), std::invalid_argument);
}

TEST_CASE("singular reversed step is reported") {
  // Constant l = 3, s = −2: the reversed forward coefficient vanishes at t/s = 2.
  const TimeGrid g = edm_grid(400, 0.002, 80.0, 7.0);
  const PrecondTables tb = constant_tables(g.points, 3.0, -2.0);
  const double t = 2.0;
  const auto fhat = [&](double s) { return coeffs_analytic_forward_reversed(tb, t, s).f; };
  double lo = 0.8, hi = 1.2;
  REQUIRE(fhat(lo) * fhat(hi) < 0.0);
  for (int i = 0; i < 200 && hi - lo > 1e-16; ++i) {
    const double mid = 0.5 * (lo + hi);
    (fhat(mid) * fhat(lo) > 0.0 ? lo : hi) = mid;
  }
  const double root = std::abs(fhat(lo)) < std::abs(fhat(hi)) ? lo : hi;
  CHECK(root == doctest::Approx(1.0).epsilon(1e-2));
  CHECK_THROWS_AS(coeffs_analytic_backward(tb, t, root), SingularCoefficientError);
  CHECK_THROWS_AS(coeffs_analytic_backward_composed(tb, t, root), SingularCoefficientError);
  CHECK_NOTHROW(coeffs_analytic_backward(tb, t, 0.5));
}
