#pragma once

// Reference implementations used only by tests. They are written from the
// definitions, as plain loops over dense storage, and share no code with the
// library beyond the data types they return.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using Dense = std::vector<std::vector<double>>;

inline Dense random_dense(std::size_t n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 10.0);
  Dense m(n, std::vector<double>(n));
  for (auto& row : m)
    for (auto& v : row) v = u(gen);
  return m;
}

// Mean of each n x n block whose bottom-right corner sits on the diagonal,
// summed row by row, left to right.
inline std::vector<double> block_means(const Dense& m, std::size_t n) {
  std::vector<double> z;
  for (std::size_t end = n; end <= m.size(); ++end) {
    const std::size_t top = end - n;
    double acc = 0.0;
    for (std::size_t r = top; r < end; ++r)
      for (std::size_t c = top; c < end; ++c) acc += m[r][c];
    z.push_back(acc / (static_cast<double>(n) * static_cast<double>(n)));
  }
  return z;
}

// Pairwise Euclidean distances between rows of two state tables.
inline Dense distances(const Dense& x, const Dense& y) {
  Dense d(x.size(), std::vector<double>(y.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x[i].size(); ++k) s += (x[i][k] - y[j][k]) * (x[i][k] - y[j][k]);
      d[i][j] = std::sqrt(s);
    }
  return d;
}

// False-nearest-neighbour fraction: build the whole squared-distance table of
// D-dimensional lag vectors (restricted to those that also exist at D+1),
// pick each row's first minimum off the diagonal, then apply the two tests.
inline double fnn_fraction(const std::vector<double>& s, std::size_t D, std::size_t tau, double rtol,
                           double atol) {
  const std::size_t m = s.size() - D * tau;
  Dense sq(m, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        const double diff = s[i + k * tau] - s[j + k * tau];
        acc += diff * diff;
      }
      sq[i][j] = acc;
    }
  double mu = 0.0;
  for (double v : s) mu += v;
  mu /= static_cast<double>(s.size());
  double var = 0.0;
  for (double v : s) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / static_cast<double>(s.size()));

  std::size_t bad = 0;
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t nn = (i == 0) ? 1 : 0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i && sq[i][j] < sq[i][nn]) nn = j;
    const double gap = std::abs(s[i + D * tau] - s[nn + D * tau]);
    const bool ratio_test = gap > rtol * std::sqrt(sq[i][nn]);
    const bool size_test = std::sqrt(sq[i][nn] + gap * gap) > atol * sd;
    if (ratio_test || size_test) ++bad;
  }
  return static_cast<double>(bad) / static_cast<double>(m);
}

// Smallest k (1-based) with k/n >= rate, by exact integer comparison
// k * den >= num * n for rate = num / den given as a rational.
inline std::size_t quantile_rank(std::size_t n, std::size_t num, std::size_t den) {
  for (std::size_t k = 1; k <= n; ++k)
    if (k * den >= num * n) return k;
  return n;
}

}  // namespace oracle
