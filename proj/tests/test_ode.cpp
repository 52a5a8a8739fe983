#include <cmath>
#include <random>
#include <sstream>

#include "aprecond/ode.hpp"
#include "aprecond/precond.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace aprecond;
using testing::rel_err;

namespace {

double closed_form(double x, double t, double s, double sigma) {
  return x * std::sqrt((sigma * sigma + s * s) / (sigma * sigma + t * t));
}

}  // namespace

TEST_CASE("pf_rhs") {
  const double sigma = 0.5;
  const GaussianMixture gm = testing::single_gaussian(sigma);
  CHECK(pf_rhs(gm, Vec{0.0}, 1.0)[0] == 0.0);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 100; ++i) {
    const double t = testing::log_uniform(rng, 0.002, 80.0);
    const double x = n01(rng) * std::sqrt(sigma * sigma + t * t);
    CHECK(std::abs(pf_rhs(gm, Vec{x}, t)[0] - x * t / (sigma * sigma + t * t)) <= 1e-12 * std::max(1.0, std::abs(x)));
  }
  CHECK_THROWS_AS(pf_rhs(gm, Vec{0.0}, 0.0), std::domain_error);
}

TEST_CASE("generalized rhs under CTM-degenerate tables reproduces pf_rhs") {
  // d(L x)/dη = g/S with L = 1, S = t/T: dx/dt = (g/S)·dη/dt.
  const GaussianMixture gm = GaussianMixture::two_mode();
  const TimeGrid g = edm_grid(400, 0.002, 80.0, 7.0);
  const PrecondTables tb = constant_tables(g.points, 0.0, -1.0);
  for (double t : {0.01, 0.3, 2.0, 30.0}) {
    const Vec x{0.9};
    const TablePoint p = tb.at(t);
    const double deta_dt = -p.L * p.S / t;  // dη/dλ · dλ/dt
    const double gen = g_phi(gm, x, t, p.l)[0] / (p.L * p.S) * deta_dt * p.L;
    CHECK(std::abs(gen - pf_rhs(gm, x, t)[0]) <= 1e-10 * std::max(1.0, std::abs(gen)));
  }
}

TEST_CASE("Heun on a single Gaussian") {
  const double sigma = 0.5;
  const GaussianMixture gm = testing::single_gaussian(sigma);
  const TimeGrid g = edm_grid(18, 0.002, 80.0, 7.0);
  // Frozen from an independent float64 Heun in numpy on the same grid.
  struct Ref {
    double x0, at9, end;
  };
  for (const Ref r : {Ref{-100.0, -3.2134077719977787, -0.6555967506706427},
                      Ref{57.0, 1.8316424300387344, 0.3736901478822667}}) {
    const Trajectory tr = solve_heun(gm, Vec{r.x0}, g);
    REQUIRE(tr.states.size() == g.size());
    CHECK(rel_err(tr.states[9][0], r.at9) <= 1e-12);
    CHECK(rel_err(tr.states.back()[0], r.end) <= 1e-12);
    // 18 coarse steps sit within 5% of the exact linear flow everywhere.
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK(rel_err(tr.states[i][0], closed_form(r.x0, 80.0, g[i], sigma)) <= 5e-2);
    }
  }
  // Enough steps bring it to 1e-3.
  const TimeGrid fine = edm_grid(128, 0.002, 80.0, 7.0);
  const Trajectory tr = solve_heun(gm, Vec{3.0}, fine);
  for (std::size_t i = 0; i < fine.size(); ++i) {
    CHECK(rel_err(tr.states[i][0], closed_form(3.0, 80.0, fine[i], sigma)) <= 1e-3);
  }
}

TEST_CASE("Heun refinement and mode landing on the two-mode mixture") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const Vec x{13.0};
  const double a = solve_heun(gm, x, edm_grid(500, 0.002, 80.0, 7.0)).states.back()[0];
  const double b = solve_heun(gm, x, edm_grid(1000, 0.002, 80.0, 7.0)).states.back()[0];
  const double c = solve_heun(gm, x, edm_grid(2000, 0.002, 80.0, 7.0)).states.back()[0];
  CHECK(std::abs(b - c) <= 1e-5);
  CHECK((a - b) / (b - c) == doctest::Approx(4.0).epsilon(0.25));

  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01;
  const TimeGrid g = edm_grid(18, 0.002, 80.0, 7.0);
  int near = 0;
  for (int i = 0; i < 200; ++i) {
    const double end = solve_heun(gm, Vec{80.0 * n01(rng)}, g).states.back()[0];
    if (std::min(std::abs(end + 2.0) / 1.0, std::abs(end - 1.0) / 0.5) < 3.0) ++near;
  }
  CHECK(near >= 190);
}

TEST_CASE("Euler step is the CTM skip combination with the teacher denoiser") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  for (auto [t, s] : {std::pair{2.0, 0.5}, {80.0, 0.002}, {0.3, 0.29}}) {
    const Vec x{0.7};
    const Vec step = euler_step(gm, x, t, s);
    const Vec skip = consistency_fn(coeffs_ctm(t, s), x, denoise(gm, x, t));
    CHECK(step[0] == skip[0]);
  }
  CHECK(euler_step(gm, Vec{0.7}, 1.0, 1.0)[0] == 0.7);
  CHECK(heun_step(gm, Vec{0.7}, 1.0, 1.0)[0] == 0.7);
}

TEST_CASE("Euler is first order") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const Vec x{4.0};
  const double ref = exact_jump_oracle(gm, x, 5.0, 0.05, 4000)[0];
  const double e1 = std::abs(solve_euler(gm, x, edm_grid(64, 0.05, 5.0, 7.0)).states.back()[0] - ref);
  const double e2 = std::abs(solve_euler(gm, x, edm_grid(128, 0.05, 5.0, 7.0)).states.back()[0] - ref);
  CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("Heun is second order over two doublings") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const Vec x{-5.0};
  const double ref = exact_jump_oracle(gm, x, 10.0, 0.01, 8000)[0];
  double prev = 0.0;
  for (std::size_t n : {32u, 64u, 128u}) {
    const double err = std::abs(solve_heun(gm, x, edm_grid(n, 0.01, 10.0, 7.0)).states.back()[0] - ref);
    if (prev > 0.0) CHECK(prev / err == doctest::Approx(4.0).epsilon(0.25));
    prev = err;
  }
}

TEST_CASE("exact jump oracle") {
  const double sigma = 0.5;
  const GaussianMixture single = testing::single_gaussian(sigma);
  CHECK(exact_jump_oracle(single, Vec{1.5}, 2.0, 2.0)[0] == 1.5);
  for (auto [t, s] : {std::pair{80.0, 0.002}, {1.0, 0.1}, {5.0, 4.0}}) {
    const double exact = closed_form(3.0, t, s, sigma);
    CHECK(rel_err(exact_jump_oracle(single, Vec{3.0}, t, s, 1000)[0], exact) <= 2e-5);
    CHECK(std::abs(exact_jump_oracle(single, Vec{3.0}, t, s, 50000)[0] - exact) <= 1e-8);
  }
  // Second order on the mixture: successive refinements shrink the change by ~16.
  const GaussianMixture gm = GaussianMixture::two_mode();
  for (double x : {-30.0, 0.1, 25.0}) {
    const double a = exact_jump_oracle(gm, Vec{x}, 40.0, 0.002, 1000)[0];
    const double b = exact_jump_oracle(gm, Vec{x}, 40.0, 0.002, 4000)[0];
    const double c = exact_jump_oracle(gm, Vec{x}, 40.0, 0.002, 16000)[0];
    CHECK(std::abs(b - c) <= 1e-6);
    CHECK((a - b) / (b - c) == doctest::Approx(16.0).epsilon(0.25));
  }
  CHECK_THROWS_AS(exact_jump_oracle(gm, Vec{0.0}, 1.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(exact_jump_oracle(gm, Vec{0.0}, 1.0, 0.5, 50), std::invalid_argument);
}

TEST_CASE("optimal student denoiser") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const TimeGrid g = edm_grid(400, 0.002, 80.0, 7.0);
  const PrecondTables ctm = constant_tables(g.points, 0.0, -1.0);
  for (auto [t, s] : {std::pair{2.0, 0.5}, {40.0, 1.0}, {0.1, 0.01}}) {
    const Vec x{1.1 * t};
    const double xs = exact_jump_oracle(gm, x, t, s)[0];
    const double expect = (t * xs - s * x[0]) / (t - s);
    CHECK(std::abs(optimal_student_denoiser(gm, ctm, x, t, s)[0] - expect) <= 1e-9 * std::max(1.0, std::abs(expect)));
  }
  for (double t : {0.01, 0.5, 3.0, 60.0}) {
    const Vec x{0.6 * (1 + t)};
    const double d = denoise(gm, x, t)[0];
    CHECK(std::abs(optimal_student_denoiser(gm, ctm, x, t, t * (1 - 1e-4))[0] - d) <= 1e-3 * std::max(1.0, std::abs(d)));
  }

  // Single Gaussian: closed-form trajectory gives x_s, hence D* directly.
  const double sigma = 0.5;
  const GaussianMixture single = testing::single_gaussian(sigma);
  const double t = 3.0, s = 0.4;
  const Vec x{2.0};
  const double xs = closed_form(2.0, t, s, sigma);
  CHECK(std::abs(optimal_student_denoiser(single, ctm, x, t, s, 50000)[0] - (t * xs - s * 2.0) / (t - s)) <= 1e-8);

  CHECK_THROWS_AS(optimal_student_denoiser(gm, ctm, x, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("divergence is reported with the step index") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  try {
    solve_heun(gm, Vec{5e8}, edm_grid(4, 0.002, 80.0, 7.0));
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 0);
  }
  CHECK_THROWS_AS(solve_heun(gm, Vec{0.0}, std::vector<double>{1.0}), std::invalid_argument);
  CHECK_THROWS_AS(solve_heun(gm, Vec{0.0}, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("trajectory csv") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const std::vector<Trajectory> trs{solve_heun(gm, Vec{1.0}, edm_grid(2, 0.002, 80.0, 7.0))};
  std::stringstream out;
  write_trajectories_csv(out, trs);
  std::string line;
  std::getline(out, line);
  CHECK(line == "traj,step,t,x_0");
  std::getline(out, line);
  CHECK(line == "0,0,80,1");
}
