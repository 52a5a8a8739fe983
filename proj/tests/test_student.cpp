#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "aprecond/schedule.hpp"
#include "aprecond/student.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace aprecond;
using testing::rel_err;

namespace {

NetSpec small_spec(std::size_t dim = 1) {
  NetSpec spec;
  spec.dim = dim;
  spec.hidden = {16, 12};
  spec.n_freq = 3;
  return spec;
}

StudentNet randomized(const NetSpec& spec, std::uint64_t seed, double scale = 0.4) {
  StudentNet net(spec, seed);
  std::mt19937_64 rng(seed + 1000);
  std::normal_distribution<double> n01;
  for (double& p : net.params()) p = scale * n01(rng);
  return net;
}

std::shared_ptr<const PrecondTables> wavy() {
  const TimeGrid g = edm_grid(199, 0.002, 80.0, 7.0);
  std::vector<double> lam, l, s;
  for (double t : g.points) {
    const double x = lambda_of_t(t);
    lam.push_back(x);
    l.push_back(0.5 + 0.4 * std::tanh(x));
    s.push_back(-1.0 + 0.2 * std::sin(x));
  }
  return std::make_shared<const PrecondTables>(lam, l, s);
}

}  // namespace

TEST_CASE("layout and initialization") {
  const NetSpec spec;
  CHECK(spec.input_size() == 33);
  const StudentNet net(spec, 1);
  // 33·64 + 64 + 2·(64·64 + 64) + 64 + 1
  CHECK(net.num_params() == 33 * 64 + 64 + 2 * (64 * 64 + 64) + 64 + 1);
  CHECK(net.layout().back().out == 1);
  const LayerSlice& last = net.layout().back();
  for (std::size_t i = 0; i < last.in * last.out; ++i) CHECK(net.params()[last.weight_offset + i] == 0.0);
  CHECK(forward(net, Vec{0.3}, 2.0, 1.0)[0] == 0.0);
  CHECK(StudentNet(spec, 1).params() == net.params());
  CHECK(StudentNet(spec, 2).params() != net.params());
  CHECK_THROWS_AS(StudentNet(spec, Vec(3, 0.0)), std::invalid_argument);
  NetSpec bad;
  bad.hidden = {4, 0};
  CHECK_THROWS_AS(StudentNet(bad, 1), std::invalid_argument);
}

TEST_CASE("EDM denoiser coefficients") {
  const double sd = 0.5;
  for (double t : {0.002, 0.5, 80.0}) {
    CHECK(rel_err(c_skip(t, sd), sd * sd / (sd * sd + t * t)) < 1e-15);
    CHECK(rel_err(c_out(t, sd), t * sd / std::sqrt(sd * sd + t * t)) < 1e-15);
    CHECK(rel_err(c_in(t, sd), 1.0 / std::sqrt(sd * sd + t * t)) < 1e-15);
    // Unit output variance for unit-variance target under the EDM weighting.
    CHECK(c_skip(t, sd) * c_skip(t, sd) * (sd * sd + t * t) - 2 * c_skip(t, sd) * sd * sd + sd * sd ==
          doctest::Approx(c_out(t, sd) * c_out(t, sd)).epsilon(1e-12));
  }
  const StudentNet net = randomized(small_spec(), 3);
  const double t = 1.7, s = 0.4;
  const Vec x{0.9};
  CHECK(student_denoiser(net, x, t, s, sd)[0] ==
        doctest::Approx(c_skip(t, sd) * 0.9 + c_out(t, sd) * forward(net, x, t, s)[0]).epsilon(1e-15));
}

TEST_CASE("consistency at s = t is the identity for random parameters") {
  const auto tb = wavy();
  const std::vector<PrecondFamily> fams{PrecondFamily::cm(0.5), PrecondFamily::bcm(0.5), PrecondFamily::ctm(0.5),
                                        PrecondFamily::analytic_forward(0.5, tb),
                                        PrecondFamily::analytic_backward(0.5, tb)};
  const StudentNet net = randomized(small_spec(2), 4, 1.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (const PrecondFamily& fam : fams) {
    for (int i = 0; i < 20; ++i) {
      const double t = testing::log_uniform(rng, 0.002, 80.0);
      const Vec x{n01(rng) * t, n01(rng) * t};
      const Vec y = student_consistency(net, fam, x, t, t);
      CHECK(testing::dist(x, y) <= 1e-9 * std::max(1.0, testing::norm(x)));
    }
  }
}

TEST_CASE("batched and single-sample paths agree") {
  const auto tb = wavy();
  const PrecondFamily fam = PrecondFamily::analytic_backward(0.5, tb);
  const StudentNet net = randomized(small_spec(2), 6);
  Eigen::MatrixXd X(2, 5);
  X << 0.1, -2.0, 3.0, 0.0, 7.0, 1.0, 0.5, -0.3, 2.0, -9.0;
  const std::vector<double> t{0.5, 1.0, 10.0, 0.01, 80.0};
  const std::vector<double> s{0.1, 1.0, 2.0, 0.002, 0.3};
  const Eigen::MatrixXd Y = consistency_batch(net, fam, X, t, s);
  for (int b = 0; b < 5; ++b) {
    const Vec y = student_consistency(net, fam, Vec{X(0, b), X(1, b)}, t[b], s[b]);
    CHECK(std::abs(Y(0, b) - y[0]) <= 1e-13 * std::max(1.0, std::abs(y[0])));
    CHECK(std::abs(Y(1, b) - y[1]) <= 1e-13 * std::max(1.0, std::abs(y[1])));
  }
}

TEST_CASE("parameter and input gradients match central differences") {
  const auto tb = wavy();
  for (const PrecondFamily& fam : {PrecondFamily::cm(0.5), PrecondFamily::analytic_backward(0.5, tb)}) {
    for (Activation act : {Activation::silu, Activation::tanh}) {
      NetSpec spec = small_spec(2);
      spec.activation = act;
      StudentNet net = randomized(spec, 7);
      Eigen::MatrixXd X(2, 3);
      X << 0.3, -1.2, 4.0, 0.8, 2.2, -0.5;
      const std::vector<double> t{0.7, 3.0, 20.0};
      const std::vector<double> s{0.2, 3.0, 1.0};
      Eigen::MatrixXd W(2, 3);
      W << 1.0, -0.5, 0.25, 0.3, 2.0, -1.0;
      const auto loss = [&](const StudentNet& n, const Eigen::MatrixXd& in) {
        return (consistency_batch(n, fam, in, t, s).array() * W.array()).sum();
      };
      SkipTape tape;
      consistency_batch(net, fam, X, t, s, &tape);
      Vec grad(net.num_params(), 0.0);
      Eigen::MatrixXd dX;
      skip_backward(net, tape, W, &grad, &dX);

      std::mt19937_64 rng(8);
      std::uniform_int_distribution<std::size_t> pick(0, net.num_params() - 1);
      for (int k = 0; k < 50; ++k) {
        const std::size_t i = pick(rng);
        const double h = 1e-6 * std::max(1.0, std::abs(net.params()[i]));
        const double p0 = net.params()[i];
        net.params()[i] = p0 + h;
        const double up = loss(net, X);
        net.params()[i] = p0 - h;
        const double dn = loss(net, X);
        net.params()[i] = p0;
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(grad[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
      for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 3; ++c) {
          Eigen::MatrixXd up = X, dn = X;
          up(r, c) += 1e-6;
          dn(r, c) -= 1e-6;
          const double fd = (loss(net, up) - loss(net, dn)) / 2e-6;
          CHECK(std::abs(dX(r, c) - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
      }
    }
  }
}

TEST_CASE("input validation") {
  const StudentNet net(small_spec(), 1);
  CHECK_THROWS_AS(forward(net, Vec{NAN}, 1.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(forward(net, Vec{0.0}, 0.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(forward(net, Vec{0.0}, 1.0, -0.5), std::invalid_argument);
  CHECK_THROWS_AS(forward(net, Vec{0.0, 1.0}, 1.0, 0.5), std::invalid_argument);
}

TEST_CASE("EMA update") {
  EmaPair pair(StudentNet(small_spec(), 1), 0.9);
  CHECK(pair.online.params() == pair.target.params());
  const Vec before = pair.target.params();
  for (double& p : pair.online.params()) p += 1.0;
  ema_update(pair);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(pair.target.params()[i] == doctest::Approx(before[i] + 0.1).epsilon(1e-12));
  }
  pair.mu = 0.0;
  ema_update(pair);
  CHECK(pair.target.params() == pair.online.params());
  pair.mu = 1.0;
  CHECK_THROWS_AS(ema_update(pair), std::invalid_argument);
}

TEST_CASE("Adam") {
  Adam adam(2, 0.1);
  Vec p{1.0, -1.0};
  adam.step(p, Vec{3.0, -0.001});
  // First bias-corrected step moves each coordinate by lr·sign(grad).
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-0.9).epsilon(1e-4));
  CHECK(adam.steps() == 1);
  // Minimizes a quadratic.
  Adam opt(1, 0.05);
  Vec q{5.0};
  for (int i = 0; i < 2000; ++i) opt.step(q, Vec{2.0 * (q[0] - 1.5)});
  CHECK(q[0] == doctest::Approx(1.5).epsilon(1e-2));
  CHECK_THROWS_AS(Adam(1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(opt.step(q, Vec{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "aprecond_test_ckpt";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "c.bin").string();
  NetSpec spec = small_spec(2);
  spec.activation = Activation::tanh;
  EmaPair pair(randomized(spec, 9), 0.95);
  for (double& p : pair.online.params()) p *= 1.5;
  Adam adam(pair.online.num_params(), 1e-3);
  Vec g(pair.online.num_params(), 0.1);
  adam.step(pair.online.params(), g);
  save_checkpoint(path, pair, adam, 17);
  const CheckpointData back = load_checkpoint(path);
  CHECK(back.step == 17);
  CHECK(back.pair.mu == 0.95);
  CHECK(back.pair.online.params() == pair.online.params());
  CHECK(back.pair.target.params() == pair.target.params());
  CHECK(back.pair.online.spec().hidden == spec.hidden);
  CHECK(back.pair.online.spec().activation == Activation::tanh);
  CHECK(back.adam.steps() == 1);
  // Same optimizer state: one more step gives identical parameters.
  Vec a = pair.online.params(), b = back.pair.online.params();
  Adam a1 = adam, a2 = back.adam;
  a1.step(a, g);
  a2.step(b, g);
  CHECK(a == b);

  std::ofstream(path, std::ios::binary | std::ios::app) << 'x';
  CHECK_THROWS(load_checkpoint(path));
  std::ofstream(path, std::ios::binary) << "garbage";
  CHECK_THROWS(load_checkpoint(path));
  CHECK_THROWS(load_checkpoint((dir / "missing.bin").string()));
  std::filesystem::remove_all(dir);
}
