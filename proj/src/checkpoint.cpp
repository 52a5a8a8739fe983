#include <cstring>
#include <fstream>
#include <stdexcept>

#include "aprecond/student.hpp"

namespace aprecond {

namespace {

constexpr char kMagic[8] = {'A', 'P', 'R', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  }
  template <class T>
  void put(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_vec(const Vec& v) {
    put<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  void finish(const std::string& path) {
    out_.flush();
    if (!out_) throw std::runtime_error("failed writing checkpoint: " + path);
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("cannot open checkpoint: " + path);
  }
  template <class T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw std::runtime_error("truncated checkpoint: " + path_);
    return v;
  }
  Vec get_vec(std::size_t expected) {
    const auto n = get<std::uint64_t>();
    if (n != expected) throw std::runtime_error("checkpoint vector length mismatch: " + path_);
    Vec v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in_) throw std::runtime_error("truncated checkpoint: " + path_);
    return v;
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in checkpoint: " + path_);
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::string& path, const EmaPair& pair, const Adam& adam, std::uint64_t step) {
  const NetSpec& spec = pair.online.spec();
  Writer w(path);
  for (char c : kMagic) w.put(c);
  w.put(kCheckpointVersion);
  w.put<std::uint64_t>(spec.dim);
  w.put<std::uint64_t>(spec.hidden.size());
  for (std::size_t h : spec.hidden) w.put<std::uint64_t>(h);
  w.put<std::uint64_t>(spec.n_freq);
  w.put(spec.base_freq);
  w.put(spec.sigma_data);
  w.put<std::uint32_t>(spec.activation == Activation::tanh ? 1 : 0);
  w.put_vec(pair.online.params());
  w.put_vec(pair.target.params());
  w.put(pair.mu);
  w.put(step);
  w.put(adam.lr_);
  w.put(adam.beta1_);
  w.put(adam.beta2_);
  w.put(adam.eps_);
  w.put(adam.steps_);
  w.put_vec(adam.m_);
  w.put_vec(adam.v_);
  w.finish(path);
}

CheckpointData load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("not a checkpoint file: " + path);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  NetSpec spec;
  spec.dim = r.get<std::uint64_t>();
  spec.hidden.resize(r.get<std::uint64_t>());
  for (std::size_t& h : spec.hidden) h = r.get<std::uint64_t>();
  spec.n_freq = r.get<std::uint64_t>();
  spec.base_freq = r.get<double>();
  spec.sigma_data = r.get<double>();
  spec.activation = r.get<std::uint32_t>() == 1 ? Activation::tanh : Activation::silu;
  const std::vector<LayerSlice> layout = make_layout(spec);
  const std::size_t n = layout.back().bias_offset + layout.back().out;
  StudentNet online(spec, r.get_vec(n));
  StudentNet target(spec, r.get_vec(n));
  const double mu = r.get<double>();
  const auto step = r.get<std::uint64_t>();
  EmaPair pair(online, mu);
  pair.target = std::move(target);
  const double lr = r.get<double>();
  const double b1 = r.get<double>();
  const double b2 = r.get<double>();
  const double eps = r.get<double>();
  Adam adam(n, lr, b1, b2, eps);
  adam.steps_ = r.get<std::uint64_t>();
  adam.m_ = r.get_vec(n);
  adam.v_ = r.get_vec(n);
  r.expect_end();
  return CheckpointData{std::move(pair), std::move(adam), step};
}

}  // namespace aprecond
