#pragma once

// Batched forward pass, backpropagation through time and finite-difference
// gradient checking for SequenceModel.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "crsync/neural/model.hpp"

namespace crsync {

class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Activations kept for the backward pass. Matrices are (units x batch).
struct LayerCache {
  std::vector<Matrix> inputs;   // what the layer consumed at each step
  std::vector<Matrix> hidden;   // h_t before dropout
  std::vector<Matrix> output;   // h_t after dropout (aliases hidden when off)
  std::vector<Matrix> mask;     // scaled keep-mask; empty when dropout is off
  std::vector<Matrix> gates;    // LSTM: activated f, i, g, o stacked
  std::vector<Matrix> cell;     // LSTM: c_t
  std::vector<Matrix> cell_tanh;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix head_input;  // (head_input_size x batch)
  Eigen::RowVectorXd prediction;
};

namespace detail {

inline Matrix sigmoid(const Matrix& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix m(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform() >= rate ? keep_scale : 0.0;
  return m;
}

}  // namespace detail

// inputs: (steps x batch), one window per column. Inverted dropout is applied
// to every recurrent layer's outputs when `training` is set and the model's
// dropout rate is positive; rng must then be non-null. The dense head reads
// the last layer's final (dropped-out) hidden state.
inline Eigen::RowVectorXd forward_batch(const SequenceModel& model, const Matrix& inputs,
                                        bool training, Rng* rng, ForwardCache* cache) {
  const Eigen::Index steps = inputs.rows();
  const Eigen::Index batch = inputs.cols();
  if (steps < 1 || batch < 1) throw InvalidArgument("empty input window");
  const bool drop = training && model.dropout_rate() > 0.0;
  if (drop && rng == nullptr) throw InvalidArgument("training-mode dropout needs an rng");

  std::vector<Matrix> seq(static_cast<std::size_t>(steps));
  for (Eigen::Index t = 0; t < steps; ++t) seq[static_cast<std::size_t>(t)] = inputs.row(t);

  if (cache) cache->layers.assign(model.layer_count(), {});
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const auto W = model.input_weights(l);
    const auto U = model.recurrent_weights(l);
    const auto b = model.bias(l);
    const auto h = static_cast<Eigen::Index>(model.hidden_size(l));
    Matrix h_prev = Matrix::Zero(h, batch);
    Matrix c_prev = Matrix::Zero(h, batch);
    std::vector<Matrix> next(seq.size());
    LayerCache* lc = cache ? &cache->layers[l] : nullptr;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      Matrix pre = W * seq[t] + U * h_prev;
      pre.colwise() += b;
      Matrix h_t;
      if (model.kind() == CellKind::rnn) {
        h_t = pre.array().tanh().matrix();
      } else {
        Matrix act(pre.rows(), batch);
        act.topRows(2 * h) = detail::sigmoid(pre.topRows(2 * h));
        act.middleRows(kCandidate * h, h) = pre.middleRows(kCandidate * h, h).array().tanh().matrix();
        act.bottomRows(h) = detail::sigmoid(pre.bottomRows(h));
        Matrix c = act.middleRows(kForget * h, h).cwiseProduct(c_prev) +
                   act.middleRows(kInput * h, h).cwiseProduct(act.middleRows(kCandidate * h, h));
        Matrix tc = c.array().tanh().matrix();
        h_t = act.middleRows(kOutput * h, h).cwiseProduct(tc);
        if (lc) {
          lc->gates.push_back(std::move(act));
          lc->cell.push_back(c);
          lc->cell_tanh.push_back(std::move(tc));
        }
        c_prev = std::move(c);
      }
      Matrix out = h_t;
      if (drop) {
        Matrix m = detail::dropout_mask(h, batch, model.dropout_rate(), *rng);
        out = out.cwiseProduct(m);
        if (lc) lc->mask.push_back(std::move(m));
      }
      if (lc) {
        lc->inputs.push_back(seq[t]);
        lc->hidden.push_back(h_t);
        lc->output.push_back(out);
      }
      h_prev = std::move(h_t);
      next[t] = std::move(out);
    }
    seq = std::move(next);
  }

  const Matrix& last = seq.back();
  Eigen::RowVectorXd y = model.dense_weights() * last;
  y.array() += model.dense_bias();
  if (!y.allFinite()) throw DivergenceError("non-finite network output");
  if (cache) {
    cache->head_input = last;
    cache->prediction = y;
  }
  return y;
}

inline double forward(const SequenceModel& model, std::span<const double> window, bool training,
                      Rng* rng = nullptr) {
  if (window.empty()) throw InvalidArgument("empty input window");
  const Matrix x = Eigen::Map<const Matrix>(window.data(), static_cast<Eigen::Index>(window.size()), 1);
  return forward_batch(model, x, training, rng, nullptr)(0);
}

// Gradient of mean((prediction - target)^2) over the cached batch, written
// into `grad` (same layout as model.parameters()). Returns the loss.
inline double backward_mse(const SequenceModel& model, const ForwardCache& cache,
                           std::span<const double> targets, std::span<double> grad) {
  const Eigen::Index batch = cache.prediction.size();
  if (static_cast<Eigen::Index>(targets.size()) != batch)
    throw InvalidArgument("target count does not match batch");
  if (grad.size() != model.parameter_count()) throw InvalidArgument("gradient buffer size mismatch");
  std::fill(grad.begin(), grad.end(), 0.0);

  const Eigen::Map<const Eigen::RowVectorXd> t(targets.data(), batch);
  const Eigen::RowVectorXd err = cache.prediction - t;
  const double loss = err.squaredNorm() / static_cast<double>(batch);
  const Eigen::RowVectorXd dy = err * (2.0 / static_cast<double>(batch));

  const auto head_in = static_cast<Eigen::Index>(model.head_input_size());
  Eigen::Map<Matrix>(grad.data() + model.dense_weight_offset(), 1, head_in) =
      dy * cache.head_input.transpose();
  grad[model.dense_bias_offset()] = dy.sum();

  const std::size_t layers = model.layer_count();
  if (layers == 0) return loss;
  const std::size_t steps = cache.layers.back().output.size();

  // Gradient w.r.t. each step's (post-dropout) output of the current layer.
  std::vector<Matrix> d_out(steps);
  for (std::size_t s = 0; s + 1 < steps; ++s) d_out[s] = Matrix::Zero(head_in, batch);
  d_out[steps - 1] = model.dense_weights().transpose() * dy;

  for (std::size_t l = layers; l-- > 0;) {
    const LayerCache& lc = cache.layers[l];
    const auto off = model.offsets(l);
    const auto h = static_cast<Eigen::Index>(model.hidden_size(l));
    const auto rows = static_cast<Eigen::Index>(model.gates()) * h;
    const auto in = static_cast<Eigen::Index>(model.input_size(l));
    Eigen::Map<Matrix> gW(grad.data() + off.w, rows, in);
    Eigen::Map<Matrix> gU(grad.data() + off.u, rows, h);
    Eigen::Map<Vector> gb(grad.data() + off.b, rows);
    const auto W = model.input_weights(l);
    const auto U = model.recurrent_weights(l);

    std::vector<Matrix> d_in(steps);
    Matrix dh_next = Matrix::Zero(h, batch);
    Matrix dc_next = Matrix::Zero(h, batch);
    for (std::size_t s = steps; s-- > 0;) {
      Matrix dh = lc.mask.empty() ? d_out[s] : Matrix(d_out[s].cwiseProduct(lc.mask[s]));
      dh += dh_next;
      Matrix da(rows, batch);
      if (model.kind() == CellKind::rnn) {
        da = dh.cwiseProduct((1.0 - lc.hidden[s].array().square()).matrix());
      } else {
        const Matrix& act = lc.gates[s];
        const auto f = act.middleRows(kForget * h, h);
        const auto i = act.middleRows(kInput * h, h);
        const auto g = act.middleRows(kCandidate * h, h);
        const auto o = act.middleRows(kOutput * h, h);
        const Matrix& tc = lc.cell_tanh[s];
        Matrix dc = dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix()) + dc_next;
        const Matrix c_prev = s > 0 ? lc.cell[s - 1] : Matrix::Zero(h, batch);
        da.middleRows(kForget * h, h) =
            dc.cwiseProduct(c_prev).cwiseProduct((f.array() * (1.0 - f.array())).matrix());
        da.middleRows(kInput * h, h) =
            dc.cwiseProduct(g).cwiseProduct((i.array() * (1.0 - i.array())).matrix());
        da.middleRows(kCandidate * h, h) =
            dc.cwiseProduct(i).cwiseProduct((1.0 - g.array().square()).matrix());
        da.middleRows(kOutput * h, h) =
            dh.cwiseProduct(tc).cwiseProduct((o.array() * (1.0 - o.array())).matrix());
        dc_next = dc.cwiseProduct(f);
      }
      gW.noalias() += da * lc.inputs[s].transpose();
      if (s > 0) gU.noalias() += da * lc.hidden[s - 1].transpose();
      gb += da.rowwise().sum();
      d_in[s] = W.transpose() * da;
      dh_next = U.transpose() * da;
    }
    d_out = std::move(d_in);
  }
  return loss;
}

// |a - n| / max(|a|, |n|, 1e-12), maximised over entries; 0 for empty input.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw InvalidArgument("gradient sizes differ");
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double a = analytic[k], n = numeric[k];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-12});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

struct GradientCheck {
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_relative_error = 0.0;
};

// Compares backpropagated gradients of the squared error on one sample with
// central differences (step h) for every parameter. Dropout is disabled.
inline GradientCheck gradient_check(const SequenceModel& model, std::span<const double> window,
                                    double target, double h = 1e-5) {
  const Matrix x = Eigen::Map<const Matrix>(window.data(), static_cast<Eigen::Index>(window.size()), 1);
  GradientCheck r;
  ForwardCache cache;
  forward_batch(model, x, false, nullptr, &cache);
  r.analytic.assign(model.parameter_count(), 0.0);
  const double targets[1] = {target};
  backward_mse(model, cache, targets, r.analytic);

  SequenceModel probe = model;
  auto loss = [&] {
    const double y = forward_batch(probe, x, false, nullptr, nullptr)(0);
    return (y - target) * (y - target);
  };
  r.numeric.resize(model.parameter_count());
  auto params = probe.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + h;
    const double up = loss();
    params[k] = saved - h;
    const double down = loss();
    params[k] = saved;
    r.numeric[k] = (up - down) / (2.0 * h);
  }
  r.max_relative_error = max_relative_error(r.analytic, r.numeric);
  return r;
}

}  // namespace crsync
