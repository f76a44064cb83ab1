#pragma once

// Forecast and classification metrics, cross-pair aggregation and
// coefficient-of-variation ranking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crsync/core.hpp"
#include "crsync/recurrence.hpp"

namespace crsync {

struct RegressionReport {
  double r_squared = 0.0;
  double mape = 0.0;  // fraction, not percent
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
  // Terms left out of MAPE because |actual| < kMapeZeroGuard.
  std::size_t mape_excluded = 0;
};

inline constexpr double kMapeZeroGuard = 1e-12;

inline RegressionReport regression_report(std::span<const double> actual,
                                          std::span<const double> predicted) {
  if (actual.size() != predicted.size()) throw InvalidArgument("length mismatch");
  if (actual.empty()) throw InvalidArgument("empty input");
  const double n = static_cast<double>(actual.size());
  const double y_bar = mean(actual);
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0, ape_sum = 0.0;
  std::size_t ape_terms = 0;
  RegressionReport r;
  r.count = actual.size();
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double e = actual[i] - predicted[i];
    ss_res += e * e;
    ss_tot += (actual[i] - y_bar) * (actual[i] - y_bar);
    abs_sum += std::abs(e);
    if (std::abs(actual[i]) < kMapeZeroGuard) {
      ++r.mape_excluded;
    } else {
      ape_sum += std::abs(e / actual[i]);
      ++ape_terms;
    }
  }
  if (!(ss_tot > 0.0)) throw DataError("zero-variance actuals: R^2 undefined");
  r.r_squared = 1.0 - ss_res / ss_tot;
  r.mape = ape_terms ? ape_sum / static_cast<double>(ape_terms) : std::nan("");
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(ss_res / n);
  return r;
}

enum class MapeCategory { highly_accurate, good, reasonable, inaccurate };

inline std::string_view to_string(MapeCategory c) {
  switch (c) {
    case MapeCategory::highly_accurate: return "highly_accurate";
    case MapeCategory::good: return "good";
    case MapeCategory::reasonable: return "reasonable";
    case MapeCategory::inaccurate: return "inaccurate";
  }
  return "?";
}

// Lewis scale, half-open: [0,.1) [.1,.2) [.2,.5) [.5,inf).
inline MapeCategory mape_category(double mape) {
  if (!(mape >= 0.0)) throw InvalidArgument("MAPE must be non-negative");
  if (mape < 0.1) return MapeCategory::highly_accurate;
  if (mape < 0.2) return MapeCategory::good;
  if (mape < 0.5) return MapeCategory::reasonable;
  return MapeCategory::inaccurate;
}

// 1 (synchronous) where z <= epsilon, else 0.
inline std::vector<std::uint8_t> threshold_labels(std::span<const double> z, const ThresholdSpec& spec) {
  if (!(spec.epsilon >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
  std::vector<std::uint8_t> out;
  out.reserve(z.size());
  for (double v : z) out.push_back(spec.epsilon - v >= 0.0 ? 1 : 0);
  return out;
}

struct ClassificationReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double class1_fraction = 0.0;
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

// Precision, recall and F1 are 0 when their denominator is 0.
inline ClassificationReport classification_report(std::span<const std::uint8_t> truth,
                                                  std::span<const std::uint8_t> predicted) {
  if (truth.size() != predicted.size()) throw InvalidArgument("length mismatch");
  if (truth.empty()) throw InvalidArgument("empty input");
  ClassificationReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] > 1 || predicted[i] > 1) throw InvalidArgument("labels must be 0 or 1");
    if (truth[i] && predicted[i]) ++r.tp;
    else if (!truth[i] && !predicted[i]) ++r.tn;
    else if (predicted[i]) ++r.fp;
    else ++r.fn;
  }
  const double n = static_cast<double>(truth.size());
  r.accuracy = static_cast<double>(r.tp + r.tn) / n;
  r.precision = r.tp + r.fp ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  r.class1_fraction = static_cast<double>(r.tp + r.fn) / n;
  return r;
}

struct AggregateStats {
  double mean = 0.0;
  double std = 0.0;  // sample (N-1); 0 for a single value
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
};

inline AggregateStats aggregate_stats(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("cannot aggregate an empty set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  AggregateStats s;
  s.mean = mean(v);
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  s.min = v.front();
  s.max = v.back();
  const std::size_t mid = v.size() / 2;
  s.median = v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  return s;
}

inline double coefficient_of_variation(double mean, double std) {
  if (mean == 0.0) throw InvalidArgument("coefficient of variation undefined for zero mean");
  return std / mean;
}

// Positions 1..n in ascending order; tied values share the mean of their
// positions. NaN sorts last.
inline std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    return std::isnan(values[i]) ? std::numeric_limits<double>::infinity() : values[i];
  };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  std::vector<double> ranks(n);
  for (std::size_t s = 0; s < n;) {
    std::size_t e = s + 1;
    while (e < n && key(idx[e]) == key(idx[s])) ++e;
    const double r = 0.5 * static_cast<double>(s + 1 + e);  // mean of positions s+1..e
    for (std::size_t k = s; k < e; ++k) ranks[idx[k]] = r;
    s = e;
  }
  return ranks;
}

struct CvRow {
  std::string label;
  std::vector<double> cv;
};

struct CvTable {
  std::vector<std::string> metrics;
  std::vector<CvRow> rows;
};

struct RankedRow {
  std::string label;
  std::vector<double> cv;
  std::vector<double> ranks;
  double average_rank = 0.0;
};

struct CvRanking {
  std::vector<std::string> metrics;
  // Ascending by average rank, then label.
  std::vector<RankedRow> rows;
};

// Per metric, lower CV ranks higher (rank 1); the overall score is the mean
// of a row's metric ranks.
inline CvRanking rank_configurations_by_cv(const CvTable& table) {
  if (table.metrics.empty()) throw InvalidArgument("no metrics in CV table");
  for (const auto& r : table.rows)
    if (r.cv.size() != table.metrics.size()) throw InvalidArgument("ragged CV table");
  CvRanking out;
  out.metrics = table.metrics;
  for (const auto& r : table.rows) out.rows.push_back({r.label, r.cv, {}, 0.0});
  std::vector<double> column(table.rows.size());
  for (std::size_t m = 0; m < table.metrics.size(); ++m) {
    for (std::size_t i = 0; i < table.rows.size(); ++i) column[i] = table.rows[i].cv[m];
    const auto ranks = fractional_ranks(column);
    for (std::size_t i = 0; i < ranks.size(); ++i) out.rows[i].ranks.push_back(ranks[i]);
  }
  for (auto& r : out.rows)
    r.average_rank = std::accumulate(r.ranks.begin(), r.ranks.end(), 0.0) /
                     static_cast<double>(r.ranks.size());
  std::sort(out.rows.begin(), out.rows.end(), [](const RankedRow& a, const RankedRow& b) {
    if (a.average_rank != b.average_rank) return a.average_rank < b.average_rank;
    return a.label < b.label;
  });
  return out;
}

}  // namespace crsync
