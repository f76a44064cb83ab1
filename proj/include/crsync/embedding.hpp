#pragma once

// Time-delay embedding, false-nearest-neighbour dimension selection and the
// joint price/volume state layout.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crsync/core.hpp"

namespace crsync {

struct EmbeddingConfig {
  std::size_t delay = 1;
  // Used when forced_dimension is set or by callers that skip FNN.
  std::size_t dimension = 4;
  double fnn_rtol = 10.0;
  double fnn_atol = 2.0;
  double fnn_fraction_cutoff = 0.01;
  std::size_t dimension_max = 10;
  // Bypasses FNN and uses this dimension for every series.
  std::optional<std::size_t> forced_dimension;

  void validate() const {
    if (delay < 1) throw InvalidArgument("embedding delay must be >= 1");
    if (dimension_max < 1) throw InvalidArgument("dimension_max must be >= 1");
    if (dimension < 1 || dimension > dimension_max)
      throw InvalidArgument("embedding dimension out of range");
    if (forced_dimension && *forced_dimension < 1)
      throw InvalidArgument("forced dimension must be >= 1");
    if (!(fnn_fraction_cutoff > 0.0 && fnn_fraction_cutoff < 1.0))
      throw InvalidArgument("fnn cutoff must lie in (0, 1)");
  }
};

// Row-major bundle of fixed-width state vectors.
class StateSeries {
 public:
  StateSeries() = default;
  StateSeries(std::size_t width, std::vector<double> data) : width_(width), data_(std::move(data)) {
    if (width_ == 0 || data_.size() % width_ != 0)
      throw InvalidArgument("state data not a multiple of the state width");
  }

  std::size_t count() const { return width_ == 0 ? 0 : data_.size() / width_; }
  std::size_t width() const { return width_; }
  std::span<const double> state(std::size_t i) const {
    return {data_.data() + i * width_, width_};
  }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t width_ = 0;
  std::vector<double> data_;
};

struct EmbeddedSeries {
  StateSeries states;
  std::size_t dimension = 0;
  std::size_t delay = 1;

  std::size_t count() const { return states.count(); }
  std::span<const double> state(std::size_t i) const { return states.state(i); }
};

struct JointStateSeries {
  StateSeries states;
  // Per-channel embedding dimension; states are 2 * channel_dimension wide.
  std::size_t channel_dimension = 0;
  std::size_t delay = 1;

  std::size_t count() const { return states.count(); }
  std::size_t dimension() const { return states.width(); }
  std::span<const double> state(std::size_t i) const { return states.state(i); }
};

inline std::size_t embedded_count(std::size_t n, std::size_t dimension, std::size_t delay) {
  const std::size_t span = (dimension - 1) * delay;
  return n > span ? n - span : 0;
}

// state i = (s_i, s_{i+delay}, ..., s_{i+(D-1)delay})
inline EmbeddedSeries delay_embed(std::span<const double> series, std::size_t dimension,
                                  std::size_t delay = 1) {
  if (dimension < 1 || delay < 1) throw InvalidArgument("dimension and delay must be >= 1");
  const std::size_t count = embedded_count(series.size(), dimension, delay);
  if (count == 0) throw DataError("series too short to embed");
  std::vector<double> data;
  data.reserve(count * dimension);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t k = 0; k < dimension; ++k) data.push_back(series[i + k * delay]);
  return {StateSeries(dimension, std::move(data)), dimension, delay};
}

// Fraction of false nearest neighbours when going from dimension D to D+1.
//
// Every state that also exists at D+1 is tested. Its nearest neighbour is the
// lowest-index state at minimal Euclidean distance in D dimensions (exhaustive
// search, self excluded). The pair is false when the added coordinate
// separates them by more than fnn_rtol times their D-distance, or when their
// (D+1)-distance exceeds fnn_atol times the series standard deviation.
inline double fnn_fraction(std::span<const double> series, std::size_t dimension,
                           const EmbeddingConfig& config) {
  if (dimension < 1) throw InvalidArgument("dimension must be >= 1");
  const std::size_t tau = config.delay;
  const std::size_t tested = embedded_count(series.size(), dimension + 1, tau);
  if (tested < 2) throw DataError("series too short to embed at dimension + 1");
  const double attractor = population_std(series);
  if (!(attractor > 0.0)) throw DataError("constant series: all pairwise distances are zero");

  std::size_t false_count = 0;
  for (std::size_t i = 0; i < tested; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t nn = i;
    for (std::size_t j = 0; j < tested; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < dimension; ++k) {
        const double diff = series[i + k * tau] - series[j + k * tau];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        nn = j;
      }
    }
    const double dist = std::sqrt(best);
    const double extra = std::abs(series[i + dimension * tau] - series[nn + dimension * tau]);
    const double dist_next = std::sqrt(best + extra * extra);
    if (extra > config.fnn_rtol * dist || dist_next > config.fnn_atol * attractor) ++false_count;
  }
  return static_cast<double>(false_count) / static_cast<double>(tested);
}

struct SeriesDimension {
  std::string label;
  std::size_t dimension = 0;
  // fractions[d - 1] is the FNN fraction at dimension d.
  std::vector<double> fractions;
  // False when dimension_max was hit without reaching the cutoff.
  bool reached_cutoff = true;
};

inline SeriesDimension estimate_dimension(std::span<const double> series,
                                          const EmbeddingConfig& config, std::string label = {}) {
  SeriesDimension r;
  r.label = std::move(label);
  for (std::size_t d = 1; d <= config.dimension_max; ++d) {
    const double f = fnn_fraction(series, d, config);
    r.fractions.push_back(f);
    if (f < config.fnn_fraction_cutoff) {
      r.dimension = d;
      return r;
    }
  }
  r.dimension = config.dimension_max;
  r.reached_cutoff = false;
  return r;
}

struct DimensionSelection {
  std::size_t dimension = 0;
  std::vector<SeriesDimension> per_series;
};

// Common dimension = max over per-series FNN dimensions (or the forced one).
inline DimensionSelection estimate_common_dimension(std::span<const std::vector<double>> series_set,
                                                    const EmbeddingConfig& config,
                                                    std::span<const std::string> labels = {}) {
  if (series_set.empty()) throw InvalidArgument("empty series set");
  config.validate();
  DimensionSelection out;
  if (config.forced_dimension) {
    out.dimension = *config.forced_dimension;
    return out;
  }
  for (std::size_t k = 0; k < series_set.size(); ++k) {
    auto r = estimate_dimension(series_set[k], config,
                                k < labels.size() ? labels[k] : std::to_string(k));
    out.dimension = std::max(out.dimension, r.dimension);
    out.per_series.push_back(std::move(r));
  }
  return out;
}

inline std::size_t select_embedding_dimension(std::span<const std::vector<double>> series_set,
                                              const EmbeddingConfig& config) {
  return estimate_common_dimension(series_set, config).dimension;
}

// X_i = (price state i, volume state i), width 2D.
inline JointStateSeries build_joint_states(const EmbeddedSeries& price,
                                           const EmbeddedSeries& volume) {
  if (price.dimension != volume.dimension || price.delay != volume.delay)
    throw InvalidArgument("price and volume embeddings use different (dimension, delay)");
  if (price.count() != volume.count())
    throw InvalidArgument("price and volume embeddings have different state counts");
  const std::size_t d = price.dimension;
  std::vector<double> data;
  data.reserve(price.count() * 2 * d);
  for (std::size_t i = 0; i < price.count(); ++i) {
    const auto p = price.state(i);
    const auto v = volume.state(i);
    data.insert(data.end(), p.begin(), p.end());
    data.insert(data.end(), v.begin(), v.end());
  }
  return {StateSeries(2 * d, std::move(data)), d, price.delay};
}

inline JointStateSeries embed_joint(std::span<const double> price, std::span<const double> volume,
                                    std::size_t dimension, std::size_t delay = 1) {
  if (price.size() != volume.size()) throw InvalidArgument("price and volume lengths differ");
  return build_joint_states(delay_embed(price, dimension, delay),
                            delay_embed(volume, dimension, delay));
}

}  // namespace crsync
