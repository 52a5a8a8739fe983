#include "aprecond/teacher.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace aprecond {

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<Vec> means, std::vector<double> sigmas)
    : weights_(std::move(weights)), means_(std::move(means)), sigmas_(std::move(sigmas)) {
  if (weights_.empty()) throw std::invalid_argument("GaussianMixture: need at least one component");
  if (means_.size() != weights_.size() || sigmas_.size() != weights_.size()) {
    throw std::invalid_argument("GaussianMixture: weights, means and sigmas must have equal length");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("GaussianMixture: weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("GaussianMixture: weights must sum to 1 (got " + std::to_string(total) + ")");
  }
  for (double s : sigmas_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("GaussianMixture: sigmas must be positive");
  }
  dim_ = means_.front().size();
  if (dim_ == 0) throw std::invalid_argument("GaussianMixture: dimension must be positive");
  for (const auto& m : means_) {
    if (m.size() != dim_) throw std::invalid_argument("GaussianMixture: all means must have the same dimension");
  }
  log_weights_.reserve(weights_.size());
  for (double w : weights_) log_weights_.push_back(std::log(w));
}

GaussianMixture GaussianMixture::two_mode() {
  return GaussianMixture({1.0 / 3.0, 2.0 / 3.0}, {{-2.0}, {1.0}}, {1.0, 0.5});
}

Vec GaussianMixture::mean() const {
  Vec m(dim_, 0.0);
  for (std::size_t k = 0; k < components(); ++k) {
    for (std::size_t j = 0; j < dim_; ++j) m[j] += weights_[k] * means_[k][j];
  }
  return m;
}

double GaussianMixture::variance() const {
  const Vec mu = mean();
  double var = 0.0;
  for (std::size_t k = 0; k < components(); ++k) {
    double spread = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) spread += (means_[k][j] - mu[j]) * (means_[k][j] - mu[j]);
    var += weights_[k] * (sigmas_[k] * sigmas_[k] + spread / static_cast<double>(dim_));
  }
  return var;
}

// Per-component quantities of the posterior at (x, t):
//   v_k   = σ_k² + t²
//   π_k   ∝ w_k N(x; m_k, v_k I)       (log-sum-exp normalized)
//   μ_k   = (σ_k² x + t² m_k) / v_k    (component posterior mean)
//   a_k   = −(x − m_k) / v_k           (∇_x log N_k)
struct MixturePosterior {
  std::size_t K = 0;
  std::size_t d = 0;
  std::vector<double> resp;
  std::vector<double> var;
  std::vector<double> sq_dist;
  Eigen::MatrixXd mu;  // d×K
  Eigen::MatrixXd a;   // d×K

  MixturePosterior(const GaussianMixture& gm, ConstVecRef x, double t)
      : K(gm.components()), d(gm.dim()), resp(K), var(K), sq_dist(K), mu(d, K), a(d, K) {
    if (!(t > 0.0)) throw std::domain_error("teacher: t must be positive, got " + std::to_string(t));
    if (x.size() != d) throw std::invalid_argument("teacher: x has wrong dimension");
    const double t2 = t * t;
    const auto dd = static_cast<double>(d);
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      const double s2 = gm.sigmas_[k] * gm.sigmas_[k];
      const double v = s2 + t2;
      var[k] = v;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x[j] - gm.means_[k][j];
        dist += diff * diff;
        mu(j, k) = (s2 * x[j] + t2 * gm.means_[k][j]) / v;
        a(j, k) = -diff / v;
      }
      sq_dist[k] = dist;
      resp[k] = gm.log_weights_[k] - 0.5 * dd * std::log(v) - 0.5 * dist / v;
      max_log = std::max(max_log, resp[k]);
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      resp[k] = std::exp(resp[k] - max_log);
      norm += resp[k];
    }
    for (std::size_t k = 0; k < K; ++k) resp[k] /= norm;
  }

  Eigen::VectorXd mean() const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < K; ++k) out += resp[k] * mu.col(static_cast<Eigen::Index>(k));
    return out;
  }

  Eigen::VectorXd mean_a() const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < K; ++k) out += resp[k] * a.col(static_cast<Eigen::Index>(k));
    return out;
  }
};

namespace {

Vec to_vec(const Eigen::VectorXd& v) { return Vec(v.data(), v.data() + v.size()); }

// A copy, not a map: reductions over aligned storage round the same way every call.
Eigen::VectorXd as_eigen(ConstVecRef v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::vector<Vec> sample_data(const GaussianMixture& gm, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(gm.weights().begin(), gm.weights().end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec> out(n, Vec(gm.dim()));
  for (auto& x : out) {
    const std::size_t k = pick(rng);
    for (std::size_t j = 0; j < gm.dim(); ++j) x[j] = gm.means()[k][j] + gm.sigmas()[k] * normal(rng);
  }
  return out;
}

NoisyBatch sample_noisy(const GaussianMixture& gm, double t, std::size_t n, std::uint64_t seed) {
  if (!(t >= 0.0)) throw std::domain_error("sample_noisy: t must be non-negative");
  NoisyBatch batch;
  batch.t = t;
  batch.x0 = sample_data(gm, n, derive_seed(seed, 0x646174));
  batch.x = batch.x0;
  if (t == 0.0) return batch;
  std::mt19937_64 rng(derive_seed(seed, 0x6e6f697365));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& x : batch.x) {
    for (double& v : x) v += t * normal(rng);
  }
  return batch;
}

// Hot path of every solver; avoids the per-call matrices of MixturePosterior.
Vec denoise(const GaussianMixture& gm, ConstVecRef x, double t) {
  if (!(t > 0.0)) throw std::domain_error("denoise: t must be positive, got " + std::to_string(t));
  const std::size_t d = gm.dim();
  const std::size_t K = gm.components();
  if (x.size() != d) throw std::invalid_argument("denoise: x has wrong dimension");
  const double t2 = t * t;
  const auto dd = static_cast<double>(d);

  constexpr std::size_t kInline = 16;
  double inline_buf[kInline];
  std::vector<double> heap_buf;
  double* logp = inline_buf;
  if (K > kInline) {
    heap_buf.resize(K);
    logp = heap_buf.data();
  }
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    const double v = gm.sigmas()[k] * gm.sigmas()[k] + t2;
    double dist = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x[j] - gm.means()[k][j];
      dist += diff * diff;
    }
    logp[k] = gm.log_weights()[k] - 0.5 * dd * std::log(v) - 0.5 * dist / v;
    top = std::max(top, logp[k]);
  }
  double norm = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    logp[k] = std::exp(logp[k] - top);
    norm += logp[k];
  }
  Vec out(d, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double s2 = gm.sigmas()[k] * gm.sigmas()[k];
    const double v = s2 + t2;
    const double w = logp[k] / norm;
    for (std::size_t j = 0; j < d; ++j) out[j] += w * (s2 * x[j] + t2 * gm.means()[k][j]) / v;
  }
  return out;
}

// J = Σ π_k (σ_k²/v_k) I + Σ π_k μ_k (a_k − ā)ᵀ
Eigen::MatrixXd denoiser_jacobian(const GaussianMixture& gm, ConstVecRef x, double t) {
  const MixturePosterior post(gm, x, t);
  const auto d = static_cast<Eigen::Index>(post.d);
  const Eigen::VectorXd a_bar = post.mean_a();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(d, d);
  double diag = 0.0;
  for (std::size_t k = 0; k < post.K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double s2 = gm.sigmas()[k] * gm.sigmas()[k];
    diag += post.resp[k] * s2 / post.var[k];
    jac.noalias() += post.resp[k] * post.mu.col(kk) * (post.a.col(kk) - a_bar).transpose();
  }
  jac.diagonal().array() += diag;
  return jac;
}

double denoiser_trace(const GaussianMixture& gm, ConstVecRef x, double t) {
  const MixturePosterior post(gm, x, t);
  const Eigen::VectorXd a_bar = post.mean_a();
  double tr = 0.0;
  for (std::size_t k = 0; k < post.K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double s2 = gm.sigmas()[k] * gm.sigmas()[k];
    tr += post.resp[k] * (static_cast<double>(post.d) * s2 / post.var[k] +
                          post.mu.col(kk).dot(post.a.col(kk) - a_bar));
  }
  return tr;
}

Vec denoiser_jvp(const GaussianMixture& gm, ConstVecRef x, double t, ConstVecRef v) {
  const MixturePosterior post(gm, x, t);
  if (v.size() != post.d) throw std::invalid_argument("denoiser_jvp: v has wrong dimension");
  const auto ve = as_eigen(v);
  const Eigen::VectorXd a_bar = post.mean_a();
  const double a_bar_v = a_bar.dot(ve);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(post.d));
  for (std::size_t k = 0; k < post.K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double s2 = gm.sigmas()[k] * gm.sigmas()[k];
    out += post.resp[k] * ((s2 / post.var[k]) * ve + (post.a.col(kk).dot(ve) - a_bar_v) * post.mu.col(kk));
  }
  return to_vec(out);
}

// ∂_t μ_k = 2t σ_k² (m_k − x) / v_k²
// ∂_t log N_k = −d t / v_k + t |x − m_k|² / v_k²
Vec denoiser_time_derivative(const GaussianMixture& gm, ConstVecRef x, double t) {
  const MixturePosterior post(gm, x, t);
  const auto d = static_cast<Eigen::Index>(post.d);
  const auto xe = as_eigen(x);
  std::vector<double> b(post.K);
  double b_bar = 0.0;
  for (std::size_t k = 0; k < post.K; ++k) {
    const double v = post.var[k];
    b[k] = -static_cast<double>(post.d) * t / v + t * post.sq_dist[k] / (v * v);
    b_bar += post.resp[k] * b[k];
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
  for (std::size_t k = 0; k < post.K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double v = post.var[k];
    const double s2 = gm.sigmas()[k] * gm.sigmas()[k];
    const auto mk = as_eigen(gm.means()[k]);
    out += post.resp[k] * ((2.0 * t * s2 / (v * v)) * (mk - xe) + (b[k] - b_bar) * post.mu.col(kk));
  }
  return to_vec(out);
}

Eigen::MatrixXd denoiser_jacobian_fd(const GaussianMixture& gm, ConstVecRef x, double t, double step) {
  const std::size_t d = gm.dim();
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  Vec probe(x.begin(), x.end());
  for (std::size_t j = 0; j < d; ++j) {
    const double h = step * std::max(1.0, std::abs(x[j]));
    probe[j] = x[j] + h;
    const Vec up = denoise(gm, probe, t);
    probe[j] = x[j] - h;
    const Vec down = denoise(gm, probe, t);
    probe[j] = x[j];
    for (std::size_t i = 0; i < d; ++i) {
      jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (up[i] - down[i]) / (2.0 * h);
    }
  }
  return jac;
}

Vec g_phi(const GaussianMixture& gm, ConstVecRef x, double t, double l_t) {
  Vec g = denoise(gm, x, t);
  for (std::size_t j = 0; j < g.size(); ++j) g[j] -= (1.0 - l_t) * x[j];
  return g;
}

double log_marginal_density(const GaussianMixture& gm, ConstVecRef x, double t) {
  if (!(t >= 0.0)) throw std::domain_error("log_marginal_density: t must be non-negative");
  const auto d = static_cast<double>(gm.dim());
  std::vector<double> terms(gm.components());
  for (std::size_t k = 0; k < gm.components(); ++k) {
    const double v = gm.sigmas()[k] * gm.sigmas()[k] + t * t;
    double dist = 0.0;
    for (std::size_t j = 0; j < gm.dim(); ++j) dist += (x[j] - gm.means()[k][j]) * (x[j] - gm.means()[k][j]);
    terms[k] = std::log(gm.weights()[k]) - 0.5 * d * std::log(2.0 * std::numbers::pi * v) - 0.5 * dist / v;
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - top);
  return top + std::log(acc);
}

}  // namespace aprecond
