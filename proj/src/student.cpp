#include "aprecond/student.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace aprecond {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void activate(Activation act, const MatrixXd& z, MatrixXd& h) {
  if (act == Activation::tanh) {
    h = z.array().tanh().matrix();
  } else {
    h = z.unaryExpr([](double v) { return v * sigmoid(v); });
  }
}

// dH/dZ ⊙ upstream, in place on `grad`.
void activation_backward(Activation act, const MatrixXd& z, MatrixXd& grad) {
  if (act == Activation::tanh) {
    grad.array() *= 1.0 - z.array().tanh().square();
  } else {
    grad.array() *= z.unaryExpr([](double v) {
                       const double sg = sigmoid(v);
                       return sg * (1.0 + v * (1.0 - sg));
                     }).array();
  }
}

// Owned copies: Eigen's vectorized reductions peel by address, so products on
// maps into the parameter vector would round differently from call to call.
MatrixXd weights(const StudentNet& net, const LayerSlice& layer) {
  return Map<const MatrixXd>(net.params().data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                             static_cast<Eigen::Index>(layer.in));
}

VectorXd bias(const StudentNet& net, const LayerSlice& layer) {
  return Map<const VectorXd>(net.params().data() + layer.bias_offset, static_cast<Eigen::Index>(layer.out));
}

void check_batch(const StudentNet& net, const MatrixXd& X, std::span<const double> t, std::span<const double> s) {
  const auto cols = static_cast<std::size_t>(X.cols());
  if (static_cast<std::size_t>(X.rows()) != net.spec().dim) {
    throw std::invalid_argument("student: input rows do not match net dimension");
  }
  if (t.size() != cols || s.size() != cols) throw std::invalid_argument("student: time vectors do not match batch");
  for (std::size_t b = 0; b < cols; ++b) {
    if (!(t[b] > 0.0) || !(s[b] > 0.0) || !std::isfinite(t[b]) || !std::isfinite(s[b])) {
      throw std::invalid_argument("student: times must be finite and positive");
    }
  }
  if (!X.allFinite()) throw std::invalid_argument("student: non-finite input");
}

}  // namespace

std::vector<LayerSlice> make_layout(const NetSpec& spec) {
  if (spec.dim == 0) throw std::invalid_argument("NetSpec: dim must be >= 1");
  std::vector<LayerSlice> layout;
  std::size_t offset = 0;
  std::size_t in = spec.input_size();
  auto push = [&](std::size_t out) {
    if (out == 0) throw std::invalid_argument("NetSpec: layer widths must be >= 1");
    LayerSlice layer{in, out, offset, offset + in * out};
    offset = layer.bias_offset + out;
    layout.push_back(layer);
    in = out;
  };
  for (std::size_t w : spec.hidden) push(w);
  push(spec.dim);
  return layout;
}

StudentNet::StudentNet(NetSpec spec, std::uint64_t seed) : spec_(std::move(spec)), layout_(make_layout(spec_)) {
  const LayerSlice& last = layout_.back();
  params_.assign(last.bias_offset + last.out, 0.0);
  std::mt19937_64 rng(derive_seed(seed, kInitStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k + 1 < layout_.size(); ++k) {
    const LayerSlice& layer = layout_[k];
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) params_[layer.weight_offset + i] = scale * normal(rng);
  }
}

StudentNet::StudentNet(NetSpec spec, Vec params)
    : spec_(std::move(spec)), layout_(make_layout(spec_)), params_(std::move(params)) {
  const LayerSlice& last = layout_.back();
  if (params_.size() != last.bias_offset + last.out) {
    throw std::invalid_argument("StudentNet: parameter count " + std::to_string(params_.size()) +
                                " does not match layout " + std::to_string(last.bias_offset + last.out));
  }
}

double c_skip(double t, double sigma_data) {
  const double s2 = sigma_data * sigma_data;
  return s2 / (s2 + t * t);
}

double c_out(double t, double sigma_data) { return sigma_data * t / std::sqrt(sigma_data * sigma_data + t * t); }

double c_in(double t, double sigma_data) { return 1.0 / std::sqrt(sigma_data * sigma_data + t * t); }

MatrixXd forward_batch(const StudentNet& net, const MatrixXd& X, std::span<const double> t, std::span<const double> s,
                       NetTape* tape) {
  check_batch(net, X, t, s);
  const NetSpec& spec = net.spec();
  const auto batch = X.cols();
  const auto d = static_cast<Eigen::Index>(spec.dim);
  const auto nf = static_cast<Eigen::Index>(spec.n_freq);

  MatrixXd h(static_cast<Eigen::Index>(spec.input_size()), batch);
  Eigen::RowVectorXd scale(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    scale(b) = c_in(t[b], spec.sigma_data);
    h.col(b).head(d) = scale(b) * X.col(b);
    const double lt = std::log(t[b]);
    const double ls = std::log(s[b]);
    double omega = spec.base_freq;
    for (Eigen::Index k = 0; k < nf; ++k, omega *= 2.0) {
      h(d + k, b) = std::sin(omega * lt);
      h(d + nf + k, b) = std::cos(omega * lt);
      h(d + 2 * nf + k, b) = std::sin(omega * ls);
      h(d + 3 * nf + k, b) = std::cos(omega * ls);
    }
  }
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
    tape->c_in = scale;
  }

  const auto& layout = net.layout();
  for (std::size_t k = 0; k < layout.size(); ++k) {
    MatrixXd z = weights(net, layout[k]) * h;
    z.colwise() += bias(net, layout[k]);
    if (tape) tape->inputs.push_back(std::move(h));
    if (k + 1 == layout.size()) return z;
    activate(spec.activation, z, h);
    if (tape) tape->pre.push_back(std::move(z));
  }
  throw std::logic_error("forward_batch: empty layout");
}

void backward_batch(const StudentNet& net, const NetTape& tape, const MatrixXd& d_out, Vec* param_grad,
                    MatrixXd* dX) {
  const auto& layout = net.layout();
  if (tape.inputs.size() != layout.size()) throw std::invalid_argument("backward_batch: tape does not match net");
  if (param_grad && param_grad->size() != net.num_params()) {
    throw std::invalid_argument("backward_batch: gradient size mismatch");
  }
  MatrixXd delta = d_out;
  for (std::size_t k = layout.size(); k-- > 0;) {
    const LayerSlice& layer = layout[k];
    if (param_grad) {
      Map<MatrixXd> gw(param_grad->data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                       static_cast<Eigen::Index>(layer.in));
      Map<VectorXd> gb(param_grad->data() + layer.bias_offset, static_cast<Eigen::Index>(layer.out));
      const MatrixXd step_w = delta * tape.inputs[k].transpose();
      const VectorXd step_b = delta.rowwise().sum();
      gw += step_w;
      gb += step_b;
    }
    if (k == 0 && !dX) return;
    MatrixXd up = weights(net, layer).transpose() * delta;
    if (k == 0) {
      const auto d = static_cast<Eigen::Index>(net.spec().dim);
      *dX = up.topRows(d).array().rowwise() * tape.c_in.array();
      return;
    }
    activation_backward(net.spec().activation, tape.pre[k - 1], up);
    delta = std::move(up);
  }
}

Vec forward(const StudentNet& net, ConstVecRef x, double t, double s) {
  if (x.size() != net.spec().dim) throw std::invalid_argument("forward: input length mismatch");
  const MatrixXd X = Map<const MatrixXd>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
  const MatrixXd y = forward_batch(net, X, std::span<const double>(&t, 1), std::span<const double>(&s, 1));
  return Vec(y.data(), y.data() + y.size());
}

Vec student_denoiser(const StudentNet& net, ConstVecRef x, double t, double s, double sigma_data) {
  const Vec f = forward(net, x, t, s);
  const double a = c_skip(t, sigma_data);
  const double b = c_out(t, sigma_data);
  Vec out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = a * x[j] + b * f[j];
  return out;
}

Vec student_consistency(const StudentNet& net, const PrecondFamily& family, ConstVecRef x, double t, double s) {
  const CoeffPair pair = family.coeffs(t, s);
  const Vec net_out = family.combines_with() == Combine::denoiser
                          ? student_denoiser(net, x, t, s, family.sigma_data())
                          : forward(net, x, t, s);
  return consistency_fn(pair, x, net_out);
}

MatrixXd skip_forward(const StudentNet& net, const MatrixXd& X, std::span<const double> t, std::span<const double> s,
                      std::vector<CoeffPair> pairs, Combine combine, double sigma_data, SkipTape* tape) {
  const auto batch = X.cols();
  if (pairs.size() != static_cast<std::size_t>(batch)) throw std::invalid_argument("skip_forward: pair count");
  MatrixXd y = forward_batch(net, X, t, s, tape ? &tape->net : nullptr);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const CoeffPair p = pairs[static_cast<std::size_t>(b)];
    if (combine == Combine::denoiser) {
      const double a = c_skip(t[b], sigma_data);
      const double o = c_out(t[b], sigma_data);
      y.col(b) = (p.f + p.g * a) * X.col(b) + (p.g * o) * y.col(b);
    } else {
      y.col(b) = p.f * X.col(b) + p.g * y.col(b);
    }
  }
  if (tape) {
    tape->pairs = std::move(pairs);
    tape->t.assign(t.begin(), t.end());
    tape->combine = combine;
    tape->sigma_data = sigma_data;
  }
  return y;
}

void skip_backward(const StudentNet& net, const SkipTape& tape, const MatrixXd& dY, Vec* param_grad, MatrixXd* dX) {
  const auto batch = dY.cols();
  MatrixXd d_net(dY.rows(), batch);
  Eigen::RowVectorXd direct(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const CoeffPair p = tape.pairs[static_cast<std::size_t>(b)];
    if (tape.combine == Combine::denoiser) {
      d_net.col(b) = (p.g * c_out(tape.t[b], tape.sigma_data)) * dY.col(b);
      direct(b) = p.f + p.g * c_skip(tape.t[b], tape.sigma_data);
    } else {
      d_net.col(b) = p.g * dY.col(b);
      direct(b) = p.f;
    }
  }
  backward_batch(net, tape.net, d_net, param_grad, dX);
  if (dX) dX->array() += dY.array().rowwise() * direct.array();
}

MatrixXd consistency_batch(const StudentNet& net, const PrecondFamily& family, const MatrixXd& X,
                           std::span<const double> t, std::span<const double> s, SkipTape* tape) {
  if (t.size() != s.size()) throw std::invalid_argument("consistency_batch: time vectors differ in length");
  std::vector<CoeffPair> pairs(t.size());
  for (std::size_t b = 0; b < t.size(); ++b) pairs[b] = family.coeffs(t[b], s[b]);
  return skip_forward(net, X, t, s, std::move(pairs), family.combines_with(), family.sigma_data(), tape);
}

void ema_update(EmaPair& pair) {
  if (!(pair.mu >= 0.0 && pair.mu < 1.0)) throw std::invalid_argument("ema_update: mu must lie in [0, 1)");
  Vec& target = pair.target.params();
  const Vec& online = pair.online.params();
  if (target.size() != online.size()) throw std::invalid_argument("ema_update: layout mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = pair.mu * target[i] + (1.0 - pair.mu) * online[i];
}

Adam::Adam(std::size_t n_params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n_params, 0.0), v_(n_params, 0.0) {
  if (!(lr > 0.0)) throw std::invalid_argument("Adam: learning rate must be positive");
}

void Adam::step(Vec& params, const Vec& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("Adam: size mismatch");
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
  }
}

}  // namespace aprecond
