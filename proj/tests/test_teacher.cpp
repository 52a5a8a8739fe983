#include <cmath>
#include <random>

#include "aprecond/schedule.hpp"
#include "aprecond/teacher.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace aprecond;
using testing::rel_err;

namespace {

// Five-point central difference of the independent log-density implementation.
Vec score_fd(const GaussianMixture& gm, const Vec& x, double t) {
  const double h = 1e-3 * std::sqrt(1.0 + t * t);
  Vec out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    auto at = [&](double off) {
      Vec y = x;
      y[j] += off;
      return log_marginal_density(gm, y, t);
    };
    out[j] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  }
  return out;
}

}  // namespace

TEST_CASE("mixture validation") {
  CHECK_THROWS_AS(GaussianMixture({0.5, 0.4}, {{0.0}, {1.0}}, {1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(GaussianMixture({0.5, 0.5}, {{0.0}, {1.0}}, {1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(GaussianMixture({0.5, 0.5}, {{0.0}, {1.0, 2.0}}, {1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(GaussianMixture({}, {}, {}), std::invalid_argument);
  const GaussianMixture gm = GaussianMixture::two_mode();
  CHECK(gm.components() == 2);
  CHECK(gm.dim() == 1);
  CHECK(std::abs(gm.mean()[0]) < 1e-15);
}

TEST_CASE("sampling is seeded and has the right moments") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const auto a = sample_data(gm, 100000, 11);
  const auto b = sample_data(gm, 100000, 11);
  CHECK(a == b);
  double mean = 0.0;
  for (const Vec& x : a) mean += x[0];
  mean /= a.size();
  // Mixture variance: (1/3)(1 + 4) + (2/3)(0.25 + 1) = 2.5.
  CHECK(std::abs(mean) < 5.0 * std::sqrt(2.5 / a.size()));

  const GaussianMixture single = testing::single_gaussian(0.7, 3);
  const auto s = sample_data(single, 100000, 5);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0;
    for (const Vec& x : s) m += x[j];
    CHECK(std::abs(m / s.size()) < 5.0 * 0.7 / std::sqrt(100000.0));
  }
}

TEST_CASE("noisy samples") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const NoisyBatch zero = sample_noisy(gm, 0.0, 100, 3);
  CHECK(zero.x == zero.x0);
  CHECK_THROWS_AS(sample_noisy(gm, -1.0, 10, 3), std::domain_error);

  const GaussianMixture single = testing::single_gaussian(0.5);
  const NoisyBatch nb = sample_noisy(single, 2.0, 200000, 9);
  double m2 = 0.0;
  for (const Vec& x : nb.x) m2 += x[0] * x[0];
  m2 /= nb.x.size();
  const double var = 0.25 + 4.0;
  CHECK(std::abs(m2 - var) < 5.0 * var * std::sqrt(2.0 / nb.x.size()));

  const NoisyBatch big = sample_noisy(gm, 80.0, 20000, 4);
  double v = 0.0;
  for (const Vec& x : big.x) v += x[0] * x[0];
  CHECK(v / big.x.size() == doctest::Approx(6400.0 + 2.5).epsilon(0.05));
}

TEST_CASE("single Gaussian denoiser is linear") {
  const double sigma = 0.5;
  const GaussianMixture gm = testing::single_gaussian(sigma);
  for (double t : {0.002, 0.1, 0.5, 3.0, 80.0}) {
    const double c = sigma * sigma / (sigma * sigma + t * t);
    CHECK(rel_err(denoise(gm, Vec{1.3}, t)[0], c * 1.3) < 1e-14);
    CHECK(rel_err(denoiser_jacobian(gm, Vec{-0.4}, t)(0, 0), c) < 1e-14);
    CHECK(rel_err(denoiser_trace(gm, Vec{2.0}, t), c) < 1e-14);
  }
  const GaussianMixture shifted = testing::single_gaussian(0.8, 1, 1.7);
  CHECK(rel_err(denoise(shifted, Vec{0.2}, 1.5)[0], (0.64 * 0.2 + 2.25 * 1.7) / (0.64 + 2.25)) < 1e-14);
  CHECK(std::abs(denoise(shifted, Vec{0.2}, 1e6)[0] - 1.7) < 1e-9);
}

TEST_CASE("two-mode mixture denoiser against quadrature posterior means") {
  // Oracle: 30-digit quadrature of ∫ x0 p(x0) N(x; x0, t²) dx0 / ∫ p(x0) N(x; x0, t²) dx0.
  const GaussianMixture gm = GaussianMixture::two_mode();
  CHECK(denoise(gm, Vec{0.5}, 1.0)[0] == doctest::Approx(0.76158390515177228).epsilon(1e-13));
  CHECK(denoise(gm, Vec{-1.0}, 0.3)[0] == doctest::Approx(-1.0730522660007754).epsilon(1e-13));
  CHECK(denoise(gm, Vec{2.0}, 5.0)[0] == doctest::Approx(0.23935718617827631).epsilon(1e-13));
}

TEST_CASE("two-mode mixture denoiser against a Monte-Carlo posterior") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const double x = 0.5, t = 1.0;
  const auto x0 = sample_data(gm, 10000000, 2024);
  std::vector<double> w(x0.size());
  double sw = 0.0, swx = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    w[i] = std::exp(-0.5 * (x - x0[i][0]) * (x - x0[i][0]) / (t * t));
    sw += w[i];
    swx += w[i] * x0[i][0];
  }
  const double est = swx / sw;
  // Delta-method standard error of the self-normalized estimator.
  double var_terms = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) var_terms += w[i] * w[i] * (x0[i][0] - est) * (x0[i][0] - est);
  const double se = std::sqrt(var_terms) / sw;
  CHECK(std::abs(denoise(gm, Vec{x}, t)[0] - est) <= 3.0 * se);
}

TEST_CASE("Tweedie identity against an independent score") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> ux(-4.0, 4.0);
  for (const GaussianMixture& gm : {GaussianMixture::two_mode(), testing::mixture_2d()}) {
    for (int i = 0; i < 500; ++i) {
      const double t = testing::log_uniform(rng, 0.002, 80.0);
      Vec x(gm.dim());
      for (double& v : x) v = ux(rng) * std::max(1.0, t);
      const Vec d = denoise(gm, x, t);
      const Vec score = score_fd(gm, x, t);
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double tweedie = x[j] + t * t * score[j];
        CHECK(std::abs(d[j] - tweedie) <= 1e-8 * std::max({1.0, std::abs(d[j]), std::abs(x[j])}));
      }
    }
  }
}

TEST_CASE("Jacobian is symmetric and matches finite differences") {
  const GaussianMixture gm = testing::mixture_2d();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 50; ++i) {
    const double t = testing::log_uniform(rng, 0.01, 20.0);
    const Vec x{n01(rng) * (1 + t), n01(rng) * (1 + t)};
    const Eigen::MatrixXd J = denoiser_jacobian(gm, x, t);
    const Eigen::MatrixXd F = denoiser_jacobian_fd(gm, x, t);
    CHECK(std::abs(J(0, 1) - J(1, 0)) <= 1e-10);
    CHECK((J - F).norm() <= 1e-6 * std::max(1.0, J.norm()));
    const Vec v{0.3, -1.1};
    const Vec jv = denoiser_jvp(gm, x, t, v);
    CHECK(std::abs(jv[0] - (J(0, 0) * v[0] + J(0, 1) * v[1])) < 1e-12 * std::max(1.0, J.norm()));
    CHECK(std::abs(denoiser_trace(gm, x, t) - J.trace()) < 1e-12 * std::max(1.0, J.norm()));
  }
}

TEST_CASE("trace matches finite differences at grid times") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  const TimeGrid g = edm_grid(19, 0.002, 80.0, 7.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec x{0.37 * (1.0 + g[i])};
    const double fd = denoiser_jacobian_fd(gm, x, g[i])(0, 0);
    CHECK(rel_err(denoiser_trace(gm, x, g[i]), fd) <= 1e-6);
  }
}

TEST_CASE("time derivative of the denoiser") {
  const GaussianMixture gm = testing::mixture_2d();
  for (double t : {0.01, 0.3, 1.0, 7.0}) {
    const Vec x{0.4, -0.9};
    const double h = 1e-5 * t;
    const Vec hi = denoise(gm, x, t + h);
    const Vec lo = denoise(gm, x, t - h);
    const Vec dt = denoiser_time_derivative(gm, x, t);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(std::abs(dt[j] - (hi[j] - lo[j]) / (2 * h)) <= 1e-6 * std::max(1.0, std::abs(dt[j])));
    }
  }
}

TEST_CASE("denoiser stays in the hull of the posterior component means") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  for (double t : {0.01, 0.5, 2.0, 40.0}) {
    for (double x : {-10.0, -2.0, 0.0, 0.7, 12.0}) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t k = 0; k < 2; ++k) {
        const double s2 = gm.sigmas()[k] * gm.sigmas()[k];
        const double mu = (s2 * x + t * t * gm.means()[k][0]) / (s2 + t * t);
        lo = std::min(lo, mu);
        hi = std::max(hi, mu);
      }
      const double d = denoise(gm, Vec{x}, t)[0];
      CHECK(d >= lo - 1e-12);
      CHECK(d <= hi + 1e-12);
    }
  }
}

TEST_CASE("g_phi") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  CHECK(g_phi(gm, Vec{0.3}, 0.7, 1.0)[0] == denoise(gm, Vec{0.3}, 0.7)[0]);

  const double sigma = 0.5;
  const GaussianMixture single = testing::single_gaussian(sigma);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 100; ++i) {
    const double t = testing::log_uniform(rng, 0.002, 80.0);
    const double l = t * t / (sigma * sigma + t * t);
    CHECK(std::abs(g_phi(single, Vec{n01(rng) * 3.0}, t, l)[0]) <= 1e-12);
  }

  // l = 0: g = D − x = t² ∇log q.
  for (double t : {0.05, 0.5, 4.0}) {
    const Vec x{0.8};
    CHECK(std::abs(g_phi(gm, x, t, 0.0)[0] - t * t * score_fd(gm, x, t)[0]) <= 1e-8 * std::max(1.0, x[0]));
  }
}

TEST_CASE("denoise rejects bad input") {
  const GaussianMixture gm = GaussianMixture::two_mode();
  CHECK_THROWS_AS(denoise(gm, Vec{0.0}, 0.0), std::domain_error);
  CHECK_THROWS_AS(denoise(gm, Vec{0.0, 1.0}, 1.0), std::invalid_argument);
}
