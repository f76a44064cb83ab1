#pragma once

// Cross-distance and cross-recurrence matrices, recurrence-rate thresholds
// and the diagonal block-average series.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "crsync/core.hpp"
#include "crsync/embedding.hpp"

namespace crsync {

// A rows x cols matrix that stores either every entry or only the band
// |i - j| < bandwidth.
template <typename T>
class BandedMatrix {
 public:
  BandedMatrix() = default;

  BandedMatrix(std::size_t rows, std::size_t cols, std::optional<std::size_t> bandwidth = {})
      : rows_(rows), cols_(cols), bandwidth_(bandwidth) {
    if (bandwidth_ && *bandwidth_ == 0) throw InvalidArgument("bandwidth must be >= 1");
    values_.assign(rows_ * stride(), T{});
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::optional<std::size_t> bandwidth() const { return bandwidth_; }
  bool is_full() const { return !bandwidth_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  bool contains(std::size_t i, std::size_t j) const {
    if (i >= rows_ || j >= cols_) return false;
    if (!bandwidth_) return true;
    const std::size_t gap = i > j ? i - j : j - i;
    return gap < *bandwidth_;
  }

  // Stored columns of row i: [first, last).
  std::size_t row_begin(std::size_t i) const {
    if (!bandwidth_) return 0;
    return i + 1 > *bandwidth_ ? i + 1 - *bandwidth_ : 0;
  }
  std::size_t row_end(std::size_t i) const {
    if (!bandwidth_) return cols_;
    return std::min(cols_, i + *bandwidth_);
  }

  const T& operator()(std::size_t i, std::size_t j) const { return values_[index(i, j)]; }
  T& operator()(std::size_t i, std::size_t j) { return values_[index(i, j)]; }

  const T& at(std::size_t i, std::size_t j) const {
    if (!contains(i, j)) throw InvalidArgument("entry outside stored band");
    return (*this)(i, j);
  }

  std::size_t stored_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows_; ++i) n += row_end(i) > row_begin(i) ? row_end(i) - row_begin(i) : 0;
    return n;
  }

  // f(i, j, value) over stored entries, row-major.
  template <typename F>
  void for_each_stored(F&& f) const {
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = row_begin(i); j < row_end(i); ++j) f(i, j, (*this)(i, j));
  }

  std::vector<T> stored_values() const {
    std::vector<T> out;
    out.reserve(stored_count());
    for_each_stored([&](std::size_t, std::size_t, const T& v) { out.push_back(v); });
    return out;
  }

 private:
  std::size_t stride() const { return bandwidth_ ? 2 * *bandwidth_ - 1 : cols_; }
  std::size_t index(std::size_t i, std::size_t j) const {
    if (!bandwidth_) return i * cols_ + j;
    return i * stride() + (j + *bandwidth_ - 1 - i);
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::optional<std::size_t> bandwidth_;
  std::vector<T> values_;
};

// Euclidean distances ||X_i - Y_j||.
using DistanceBand = BandedMatrix<double>;
// Heaviside(eps - D_ij) with Heaviside(0) = 1.
using RecurrenceMatrix = BandedMatrix<std::uint8_t>;

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

inline DistanceBand cross_distance_matrix(const StateSeries& x, const StateSeries& y,
                                          std::optional<std::size_t> bandwidth = {}) {
  if (x.width() != y.width()) throw InvalidArgument("state dimensions differ");
  DistanceBand d(x.count(), y.count(), bandwidth);
  for (std::size_t i = 0; i < d.rows(); ++i)
    for (std::size_t j = d.row_begin(i); j < d.row_end(i); ++j)
      d(i, j) = euclidean(x.state(i), y.state(j));
  return d;
}

inline DistanceBand cross_distance_matrix(const JointStateSeries& x, const JointStateSeries& y,
                                          std::optional<std::size_t> bandwidth = {}) {
  return cross_distance_matrix(x.states, y.states, bandwidth);
}

inline RecurrenceMatrix recurrence_matrix(const DistanceBand& d, double epsilon) {
  if (!(epsilon >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
  RecurrenceMatrix r(d.rows(), d.cols(), d.bandwidth());
  d.for_each_stored([&](std::size_t i, std::size_t j, double v) {
    r(i, j) = (epsilon - v >= 0.0) ? 1 : 0;
  });
  return r;
}

inline double recurrence_rate(const RecurrenceMatrix& r) {
  const std::size_t total = r.stored_count();
  if (total == 0) throw InvalidArgument("empty recurrence matrix");
  std::size_t ones = 0;
  r.for_each_stored([&](std::size_t, std::size_t, std::uint8_t b) { ones += b; });
  return static_cast<double>(ones) / static_cast<double>(total);
}

struct ThresholdSpec {
  double recurrence_rate = 0.0;
  double epsilon = 0.0;
  // Share of values <= epsilon; at least recurrence_rate.
  double achieved_rate = 0.0;
};

// Lower empirical quantile: the smallest value v with share(values <= v) >= rate.
inline ThresholdSpec epsilon_for_recurrence_rate(std::span<const double> distances, double rate) {
  if (distances.empty()) throw InvalidArgument("empty distance collection");
  if (!(rate > 0.0 && rate < 1.0)) throw InvalidArgument("recurrence rate must lie in (0, 1)");
  std::vector<double> sorted(distances.begin(), distances.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const auto share = [n](std::size_t k) { return static_cast<double>(k) / static_cast<double>(n); };
  // Smallest k with k / n >= rate, evaluated with the same division used to
  // report the achieved rate.
  std::size_t k = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n);
  while (k > 1 && share(k - 1) >= rate) --k;
  while (k < n && share(k) < rate) ++k;
  const double eps = sorted[k - 1];
  const auto upper = std::upper_bound(sorted.begin(), sorted.end(), eps);
  return {rate, eps, share(static_cast<std::size_t>(upper - sorted.begin()))};
}

struct BlockDistanceSeries {
  std::vector<double> values;
  std::size_t block_size = 1;
  // Diagonal index of the bottom-right corner of the block behind values[0];
  // values[k] sits at diagonal index k + source_offset.
  std::size_t source_offset = 0;

  std::size_t size() const { return values.size(); }
};

// Z_t = mean of the n x n diagonal block whose bottom-right corner is (t, t),
// for t = n-1 .. N-1 (zero-based), stride one. Entries are summed row-major.
inline BlockDistanceSeries diagonal_block_series(const DistanceBand& d, std::size_t n) {
  if (d.rows() != d.cols()) throw InvalidArgument("block series needs a square matrix");
  const std::size_t N = d.rows();
  if (n < 1 || n > N) throw InvalidArgument("block size must lie in [1, N]");
  if (d.bandwidth() && *d.bandwidth() < n) throw InvalidArgument("bandwidth smaller than block size");
  BlockDistanceSeries z;
  z.block_size = n;
  z.source_offset = n - 1;
  z.values.reserve(N - n + 1);
  const double cells = static_cast<double>(n) * static_cast<double>(n);
  for (std::size_t t = n - 1; t < N; ++t) {
    const std::size_t first = t + 1 - n;
    double sum = 0.0;
    for (std::size_t i = first; i <= t; ++i)
      for (std::size_t j = first; j <= t; ++j) sum += d(i, j);
    z.values.push_back(sum / cells);
  }
  return z;
}

namespace detail {

template <typename T, typename F>
void write_pgm(const std::filesystem::path& path, const BandedMatrix<T>& m, F&& pixel) {
  if (m.empty()) throw InvalidArgument("cannot export an empty matrix");
  auto out = open_for_write(path, std::ios::out | std::ios::binary);
  out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  std::vector<unsigned char> row(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::fill(row.begin(), row.end(), 0);
    for (std::size_t j = m.row_begin(i); j < m.row_end(i); ++j) row[j] = pixel(m(i, j));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

// Binary P5 graymap: recurrence 1 -> white (255), 0 -> black. Entries outside
// a band are black. Row 0 is the top image row.
inline void export_heatmap(const RecurrenceMatrix& r, const std::filesystem::path& path) {
  detail::write_pgm(path, r, [](std::uint8_t b) -> unsigned char { return b ? 255 : 0; });
}

struct HeatmapScale {
  double min = 0.0;
  double max = 0.0;
};

// Distances min-max scaled to 0..255 (rounded); the scale is written to
// "<path>.scale.txt". A constant matrix maps to 0.
inline HeatmapScale export_heatmap(const DistanceBand& d, const std::filesystem::path& path) {
  if (d.empty()) throw InvalidArgument("cannot export an empty matrix");
  HeatmapScale s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  d.for_each_stored([&](std::size_t, std::size_t, double v) {
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  });
  const double range = s.max - s.min;
  detail::write_pgm(path, d, [&](double v) -> unsigned char {
    if (!(range > 0.0)) return 0;
    return static_cast<unsigned char>(std::lround(255.0 * (v - s.min) / range));
  });
  auto side = open_for_write(path.string() + ".scale.txt");
  side << "min " << format_double(s.min) << "\nmax " << format_double(s.max)
       << "\npixel = round(255 * (distance - min) / (max - min))\n";
  return s;
}

// i,j,value rows for every stored entry.
inline void write_distance_csv(const std::filesystem::path& path, const DistanceBand& d) {
  auto out = open_for_write(path);
  out << "i,j,value\n";
  d.for_each_stored([&](std::size_t i, std::size_t j, double v) {
    out << i << ',' << j << ',' << format_double(v) << '\n';
  });
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace crsync
