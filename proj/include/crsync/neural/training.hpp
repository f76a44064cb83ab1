#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <span>
#include <vector>

#include "crsync/neural/network.hpp"

namespace crsync {

// Sliding windows of length w with the next value as target, stride one.
struct WindowDataset {
  std::size_t window = 0;
  std::vector<double> inputs;   // size() * window values, one window after another
  std::vector<double> targets;
  // Position of each target in the source series.
  std::vector<std::size_t> target_index;

  std::size_t size() const { return targets.size(); }
  std::span<const double> input(std::size_t i) const { return {inputs.data() + i * window, window}; }
};

// One sample per target index in [max(first_target, w), series.size()).
inline WindowDataset make_windows(std::span<const double> series, std::size_t w,
                                  std::size_t first_target = 0) {
  if (w < 1) throw InvalidArgument("window length must be >= 1");
  if (series.size() <= w) throw DataError("series too short for the requested window");
  WindowDataset d;
  d.window = w;
  for (std::size_t t = std::max(first_target, w); t < series.size(); ++t) {
    d.inputs.insert(d.inputs.end(), series.begin() + static_cast<std::ptrdiff_t>(t - w),
                    series.begin() + static_cast<std::ptrdiff_t>(t));
    d.targets.push_back(series[t]);
    d.target_index.push_back(t);
  }
  return d;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double dropout_rate = kDefaultDropout;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw InvalidArgument("dropout rate must lie in [0, 1)");
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw InvalidArgument("adam betas must lie in [0, 1)");
  }
};

// Adam with bias-corrected moments.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  explicit Adam(std::size_t n, const TrainConfig& c)
      : Adam(n, c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_epsilon) {}

  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw InvalidArgument("adam parameter size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grad[k];
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grad[k] * grad[k];
      const double m_hat = m_[k] / c1;
      const double v_hat = v_[k] / c2;
      params[k] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

struct TrainingTrace {
  std::vector<double> epoch_loss;
  double seconds = 0.0;
  std::uint64_t checksum = 0;
};

class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, TrainingTrace t)
      : DivergenceError(what), trace(std::move(t)) {}
  TrainingTrace trace;
};

inline Matrix gather_batch(const WindowDataset& data, std::span<const std::size_t> rows) {
  Matrix x(static_cast<Eigen::Index>(data.window), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c) {
    const auto in = data.input(rows[c]);
    for (std::size_t t = 0; t < data.window; ++t)
      x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = in[t];
  }
  return x;
}

// Minibatch Adam on the MSE with full BPTT per window. Each epoch reshuffles
// the samples with the seeded stream; the trace records the mean per-sample
// loss seen during the epoch. The model's dropout rate is set from config.
inline TrainingTrace train_mse_adam(SequenceModel& model, const WindowDataset& data,
                                    const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw DataError("empty training set");
  model.set_dropout_rate(config.dropout_rate);
  const auto start = std::chrono::steady_clock::now();
  Rng rng(config.seed);
  Adam adam(model.parameter_count(), config);
  std::vector<double> grad(model.parameter_count());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> targets;
  ForwardCache cache;
  TrainingTrace trace;
  auto finish = [&] {
    trace.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    trace.checksum = model.checksum();
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::span<const std::size_t> rows(order.data() + b,
                                              std::min(config.batch_size, order.size() - b));
      const Matrix x = gather_batch(data, rows);
      targets.clear();
      for (std::size_t r : rows) targets.push_back(data.targets[r]);
      try {
        forward_batch(model, x, true, &rng, &cache);
      } catch (const DivergenceError& e) {
        finish();
        throw TrainingDiverged(e.what(), trace);
      }
      const double loss = backward_mse(model, cache, targets, grad);
      if (!std::isfinite(loss)) {
        finish();
        throw TrainingDiverged("non-finite training loss", trace);
      }
      total += loss * static_cast<double>(rows.size());
      adam.step(model.parameters(), grad);
    }
    trace.epoch_loss.push_back(total / static_cast<double>(data.size()));
  }
  finish();
  return trace;
}

// Teacher-forced one-step-ahead predictions with dropout off.
inline std::vector<double> predict_one_step(const SequenceModel& model, const WindowDataset& data,
                                            std::size_t batch_size = 256) {
  std::vector<double> out;
  out.reserve(data.size());
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    rows.resize(std::min(batch_size, data.size() - b));
    std::iota(rows.begin(), rows.end(), b);
    const auto y = forward_batch(model, gather_batch(data, rows), false, nullptr, nullptr);
    for (Eigen::Index k = 0; k < y.size(); ++k) out.push_back(y(k));
  }
  return out;
}

inline void write_trace_csv(const std::filesystem::path& path, const TrainingTrace& trace) {
  auto out = open_for_write(path);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < trace.epoch_loss.size(); ++e)
    out << e + 1 << ',' << format_double(trace.epoch_loss[e]) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace crsync
