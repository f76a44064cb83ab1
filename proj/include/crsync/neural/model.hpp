#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crsync/core.hpp"

namespace crsync {

enum class CellKind : std::uint8_t { rnn = 0, lstm = 1 };

inline std::string_view to_string(CellKind k) { return k == CellKind::rnn ? "rnn" : "lstm"; }

inline CellKind parse_cell_kind(std::string_view s) {
  if (s == "rnn") return CellKind::rnn;
  if (s == "lstm") return CellKind::lstm;
  throw InvalidArgument("unknown model kind '" + std::string(s) + "'");
}

// Gate blocks per LSTM layer, in storage order.
enum LstmGate : std::size_t { kForget = 0, kInput = 1, kCandidate = 2, kOutput = 3 };

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

struct Architecture {
  CellKind kind = CellKind::lstm;
  std::vector<std::size_t> hidden_sizes;
  double dropout_rate = 0.0;
};

inline constexpr std::size_t kDefaultHiddenUnits = 50;
inline constexpr double kDefaultDropout = 0.2;

// Three simple-RNN layers or two LSTM layers, each followed by dropout, then
// a one-unit dense head.
inline Architecture standard_architecture(CellKind kind,
                                          std::size_t units = kDefaultHiddenUnits,
                                          double dropout_rate = kDefaultDropout) {
  const std::size_t layers = kind == CellKind::rnn ? 3 : 2;
  return {kind, std::vector<std::size_t>(layers, units), dropout_rate};
}

// Stacked recurrent forecaster over a scalar input sequence. All parameters
// live in one flat vector; per-layer tensors are column-major views into it.
//
// Layer l (input width in_l, hidden width h_l, g = 1 for rnn, 4 for lstm):
//   W_l: (g*h_l) x in_l, U_l: (g*h_l) x h_l, b_l: g*h_l
// LSTM gate rows are stacked forget, input, candidate, output.
// Dense head: w: 1 x h_last (or 1 x 1 with no recurrent layer), scalar b.
class SequenceModel {
 public:
  SequenceModel() = default;

  explicit SequenceModel(const Architecture& arch) : arch_(arch) {
    if (!(arch_.dropout_rate >= 0.0 && arch_.dropout_rate < 1.0))
      throw InvalidArgument("dropout rate must lie in [0, 1)");
    std::size_t offset = 0;
    std::size_t in = 1;
    for (std::size_t h : arch_.hidden_sizes) {
      if (h == 0) throw InvalidArgument("hidden sizes must be positive");
      const std::size_t rows = gates() * h;
      Slots s{in, h, offset, offset + rows * in, offset + rows * in + rows * h};
      offset = s.b + rows;
      layers_.push_back(s);
      in = h;
    }
    dense_w_ = offset;
    dense_in_ = in;
    dense_b_ = offset + in;
    params_.assign(dense_b_ + 1, 0.0);
  }

  CellKind kind() const { return arch_.kind; }
  const Architecture& architecture() const { return arch_; }
  const std::vector<std::size_t>& hidden_sizes() const { return arch_.hidden_sizes; }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t gates() const { return arch_.kind == CellKind::lstm ? 4 : 1; }
  double dropout_rate() const { return arch_.dropout_rate; }
  void set_dropout_rate(double p) {
    if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
    arch_.dropout_rate = p;
  }

  std::size_t input_size(std::size_t l) const { return layers_[l].in; }
  std::size_t hidden_size(std::size_t l) const { return layers_[l].hidden; }
  std::size_t head_input_size() const { return dense_in_; }

  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  MatrixMap input_weights(std::size_t l) {
    return {params_.data() + layers_[l].w, rows(l), static_cast<Eigen::Index>(layers_[l].in)};
  }
  ConstMatrixMap input_weights(std::size_t l) const {
    return {params_.data() + layers_[l].w, rows(l), static_cast<Eigen::Index>(layers_[l].in)};
  }
  MatrixMap recurrent_weights(std::size_t l) {
    return {params_.data() + layers_[l].u, rows(l), static_cast<Eigen::Index>(layers_[l].hidden)};
  }
  ConstMatrixMap recurrent_weights(std::size_t l) const {
    return {params_.data() + layers_[l].u, rows(l), static_cast<Eigen::Index>(layers_[l].hidden)};
  }
  VectorMap bias(std::size_t l) { return {params_.data() + layers_[l].b, rows(l)}; }
  ConstVectorMap bias(std::size_t l) const { return {params_.data() + layers_[l].b, rows(l)}; }

  MatrixMap dense_weights() { return {params_.data() + dense_w_, 1, static_cast<Eigen::Index>(dense_in_)}; }
  ConstMatrixMap dense_weights() const {
    return {params_.data() + dense_w_, 1, static_cast<Eigen::Index>(dense_in_)};
  }
  double& dense_bias() { return params_[dense_b_]; }
  double dense_bias() const { return params_[dense_b_]; }

  // Same offsets as parameters(); lets a gradient buffer reuse the views.
  struct Offsets {
    std::size_t w, u, b;
  };
  Offsets offsets(std::size_t l) const { return {layers_[l].w, layers_[l].u, layers_[l].b}; }
  std::size_t dense_weight_offset() const { return dense_w_; }
  std::size_t dense_bias_offset() const { return dense_b_; }

  std::uint64_t checksum() const {
    return fnv1a64({reinterpret_cast<const char*>(params_.data()), params_.size() * sizeof(double)});
  }

  friend bool operator==(const SequenceModel& a, const SequenceModel& b) {
    return a.arch_.kind == b.arch_.kind && a.arch_.hidden_sizes == b.arch_.hidden_sizes &&
           a.arch_.dropout_rate == b.arch_.dropout_rate &&
           a.params_.size() == b.params_.size() &&
           std::memcmp(a.params_.data(), b.params_.data(), a.params_.size() * sizeof(double)) == 0;
  }

 private:
  struct Slots {
    std::size_t in, hidden, w, u, b;
  };
  Eigen::Index rows(std::size_t l) const {
    return static_cast<Eigen::Index>(gates() * layers_[l].hidden);
  }

  Architecture arch_;
  std::vector<Slots> layers_;
  std::size_t dense_in_ = 1;
  std::size_t dense_w_ = 0;
  std::size_t dense_b_ = 0;
  std::vector<double> params_;
};

// Glorot-uniform weights from a seeded stream, zero biases, forget-gate
// bias 1 for LSTM layers.
inline SequenceModel init_model(const Architecture& arch, std::uint64_t seed) {
  SequenceModel m(arch);
  Rng rng(seed);
  auto fill = [&](auto&& mat, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index j = 0; j < mat.cols(); ++j)
      for (Eigen::Index i = 0; i < mat.rows(); ++i) mat(i, j) = rng.uniform(-limit, limit);
  };
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    auto w = m.input_weights(l);
    auto u = m.recurrent_weights(l);
    fill(w, static_cast<double>(w.cols()), static_cast<double>(w.rows()));
    fill(u, static_cast<double>(u.cols()), static_cast<double>(u.rows()));
    if (m.kind() == CellKind::lstm) {
      const auto h = static_cast<Eigen::Index>(m.hidden_size(l));
      m.bias(l).segment(kForget * h, h).setOnes();
    }
  }
  auto d = m.dense_weights();
  fill(d, static_cast<double>(d.cols()), 1.0);
  return m;
}

inline SequenceModel init_model(CellKind kind, std::vector<std::size_t> hidden_sizes,
                                 std::uint64_t seed, double dropout_rate = kDefaultDropout) {
  return init_model(Architecture{kind, std::move(hidden_sizes), dropout_rate}, seed);
}

// Binary container, little-endian host layout:
//   magic "CRSYNCMD", u32 version, u8 kind, f64 dropout, u64 layer count,
//   u64 hidden sizes..., u64 parameter count, f64 parameters..., u64 FNV-1a
//   checksum of the parameter bytes.
inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr char kModelMagic[8] = {'C', 'R', 'S', 'Y', 'N', 'C', 'M', 'D'};

inline void save_model(const SequenceModel& m, const std::filesystem::path& path) {
  auto out = open_for_write(path, std::ios::out | std::ios::binary);
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  out.write(kModelMagic, sizeof kModelMagic);
  put(kModelFormatVersion);
  put(static_cast<std::uint8_t>(m.kind()));
  put(m.dropout_rate());
  put(static_cast<std::uint64_t>(m.layer_count()));
  for (std::size_t h : m.hidden_sizes()) put(static_cast<std::uint64_t>(h));
  put(static_cast<std::uint64_t>(m.parameter_count()));
  out.write(reinterpret_cast<const char*>(m.parameters().data()),
            static_cast<std::streamsize>(m.parameter_count() * sizeof(double)));
  put(m.checksum());
  if (!out) throw IoError("write failed: " + path.string());
}

inline SequenceModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto corrupt = [&] { return IoError("corrupt model file: " + path.string()); };
  auto get = [&](auto& v) {
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw corrupt();
  };
  char magic[sizeof kModelMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw corrupt();
  std::uint32_t version = 0;
  get(version);
  if (version != kModelFormatVersion)
    throw IoError("unsupported model format version " + std::to_string(version));
  std::uint8_t kind = 0;
  double dropout = 0.0;
  std::uint64_t layers = 0;
  get(kind);
  get(dropout);
  get(layers);
  if (kind > 1 || layers > 64) throw corrupt();
  Architecture arch{static_cast<CellKind>(kind), {}, dropout};
  for (std::uint64_t l = 0; l < layers; ++l) {
    std::uint64_t h = 0;
    get(h);
    if (h == 0 || h > (1u << 20)) throw corrupt();
    arch.hidden_sizes.push_back(static_cast<std::size_t>(h));
  }
  SequenceModel m;
  try {
    m = SequenceModel(arch);
  } catch (const InvalidArgument&) {
    throw corrupt();
  }
  std::uint64_t count = 0;
  get(count);
  if (count != m.parameter_count()) throw corrupt();
  if (!in.read(reinterpret_cast<char*>(m.parameters().data()),
               static_cast<std::streamsize>(count * sizeof(double))))
    throw corrupt();
  std::uint64_t checksum = 0;
  get(checksum);
  if (checksum != m.checksum()) throw corrupt();
  return m;
}

}  // namespace crsync
