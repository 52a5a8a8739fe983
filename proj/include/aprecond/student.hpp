#pragma once

// Student network F_θ(x, t, s): a fully connected net on [c_in(t)·x, Fourier(log t),
// Fourier(log s)] with a zero-initialized output layer, plus the EDM denoiser
// parameterization and the preconditioned consistency function built on it.
//
// Batched evaluation works on column-major Eigen matrices, one sample per column.
// Forward passes can record a tape; the backward pass accumulates the exact
// parameter gradient and optionally the gradient with respect to the input x.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aprecond/common.hpp"
#include "aprecond/precond.hpp"

namespace aprecond {

enum class Activation { silu, tanh };

struct NetSpec {
  std::size_t dim = 1;
  std::vector<std::size_t> hidden{64, 64, 64};
  std::size_t n_freq = 8;
  double base_freq = 0.125;  // embedding frequencies base_freq·2^k
  double sigma_data = 0.5;   // input scaling c_in(t) = 1/sqrt(σ² + t²)
  Activation activation = Activation::silu;

  std::size_t input_size() const { return dim + 4 * n_freq; }
};

struct LayerSlice {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;  // column-major out×in
  std::size_t bias_offset = 0;
};

class StudentNet {
 public:
  /// Hidden layers get N(0, 1/fan_in) weights from the seed; the output layer is zero.
  StudentNet(NetSpec spec, std::uint64_t seed);
  /// Adopts an existing parameter vector. Throws std::invalid_argument on a size mismatch.
  StudentNet(NetSpec spec, Vec params);

  const NetSpec& spec() const { return spec_; }
  const std::vector<LayerSlice>& layout() const { return layout_; }
  std::size_t num_params() const { return params_.size(); }
  const Vec& params() const { return params_; }
  Vec& params() { return params_; }

 private:
  NetSpec spec_;
  std::vector<LayerSlice> layout_;
  Vec params_;
};

std::vector<LayerSlice> make_layout(const NetSpec& spec);

struct NetTape {
  std::vector<Eigen::MatrixXd> inputs;  // input of every layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activations of hidden layers
  Eigen::RowVectorXd c_in;
};

/// Batched F_θ. X is dim×B; t and s have B entries.
Eigen::MatrixXd forward_batch(const StudentNet& net, const Eigen::MatrixXd& X, std::span<const double> t,
                              std::span<const double> s, NetTape* tape = nullptr);

/// Accumulates dL/dθ into param_grad (size num_params) and, when dX is non-null,
/// writes dL/dX.
void backward_batch(const StudentNet& net, const NetTape& tape, const Eigen::MatrixXd& d_out, Vec* param_grad,
                    Eigen::MatrixXd* dX);

/// Single-sample F_θ(x, t, s). Throws std::invalid_argument on non-finite input or t, s <= 0.
Vec forward(const StudentNet& net, ConstVecRef x, double t, double s);

double c_skip(double t, double sigma_data);
double c_out(double t, double sigma_data);
double c_in(double t, double sigma_data);

/// D_θ(x, t, s) = c_skip(t) x + c_out(t) F_θ(x, t, s).
Vec student_denoiser(const StudentNet& net, ConstVecRef x, double t, double s, double sigma_data);

/// f(t, s) x + g(t, s)·(F_θ or D_θ, by family.combines_with()).
Vec student_consistency(const StudentNet& net, const PrecondFamily& family, ConstVecRef x, double t, double s);

/// Per-column skip combination y = f x + g·N, N = F_θ or c_skip x + c_out F_θ.
struct SkipTape {
  NetTape net;
  std::vector<CoeffPair> pairs;
  std::vector<double> t;
  Combine combine = Combine::denoiser;
  double sigma_data = 0.5;
};

Eigen::MatrixXd skip_forward(const StudentNet& net, const Eigen::MatrixXd& X, std::span<const double> t,
                             std::span<const double> s, std::vector<CoeffPair> pairs, Combine combine,
                             double sigma_data, SkipTape* tape = nullptr);

void skip_backward(const StudentNet& net, const SkipTape& tape, const Eigen::MatrixXd& dY, Vec* param_grad,
                   Eigen::MatrixXd* dX);

/// Batched student_consistency.
Eigen::MatrixXd consistency_batch(const StudentNet& net, const PrecondFamily& family, const Eigen::MatrixXd& X,
                                  std::span<const double> t, std::span<const double> s, SkipTape* tape = nullptr);

/// Online network plus its exponential-moving-average target copy.
struct EmaPair {
  StudentNet online;
  StudentNet target;
  double mu = 0.999;

  EmaPair(StudentNet net, double decay) : online(net), target(std::move(net)), mu(decay) {}
};

/// target ← μ·target + (1 − μ)·online.
void ema_update(EmaPair& pair);

class Adam {
 public:
  explicit Adam(std::size_t n_params = 0, double lr = 4e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step(Vec& params, const Vec& grad);

  double lr() const { return lr_; }
  std::uint64_t steps() const { return steps_; }

 private:
  friend void save_checkpoint(const std::string&, const EmaPair&, const Adam&, std::uint64_t);
  friend struct CheckpointData load_checkpoint(const std::string&);

  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::uint64_t steps_ = 0;
  Vec m_;
  Vec v_;
};

struct CheckpointData {
  EmaPair pair;
  Adam adam;
  std::uint64_t step = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout: magic, version, net spec, parameter count, online and target
/// parameters, μ, step counter, optimizer state. Doubles are stored bitwise.
void save_checkpoint(const std::string& path, const EmaPair& pair, const Adam& adam, std::uint64_t step);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace aprecond
