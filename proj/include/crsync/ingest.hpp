#pragma once

// Loading, alignment, temporal split and train-parameter normalization of
// daily price/volume series.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "crsync/core.hpp"

namespace crsync {

using Date = std::chrono::sys_days;

inline std::optional<Date> parse_iso_date(std::string_view s) {
  s = trim(s);
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto ok = [](auto r, const char* end) { return r.ec == std::errc{} && r.ptr == end; };
  const char* p = s.data();
  if (!ok(std::from_chars(p, p + 4, y), p + 4)) return std::nullopt;
  if (!ok(std::from_chars(p + 5, p + 7, m), p + 7)) return std::nullopt;
  if (!ok(std::from_chars(p + 8, p + 10, d), p + 10)) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

// One symbol's daily adjusted close and volume. Missing cells are NaN until
// the series passes through align_series_set.
struct PriceVolumeSeries {
  std::string symbol;
  std::vector<Date> dates;
  std::vector<double> price;
  std::vector<double> volume;

  std::size_t size() const { return dates.size(); }

  std::size_t missing_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(); ++i) n += row_missing(i) ? 1 : 0;
    return n;
  }

  bool row_missing(std::size_t i) const { return is_missing(price[i]) || is_missing(volume[i]); }

  // Throws DataError when the structural invariants do not hold.
  void validate() const {
    if (price.size() != dates.size() || volume.size() != dates.size())
      throw DataError(symbol + ": channel lengths differ");
    for (std::size_t i = 1; i < dates.size(); ++i)
      if (dates[i] <= dates[i - 1]) throw DataError(symbol + ": dates not strictly increasing");
  }
};

namespace detail {

inline std::optional<double> parse_cell(std::string_view cell) {
  cell = trim(cell);
  if (cell.empty() || cell == "null" || cell == "NaN" || cell == "nan") return std::nullopt;
  double v = 0.0;
  const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (r.ec != std::errc{} || r.ptr != cell.data() + cell.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

}  // namespace detail

// Reads a Yahoo-Finance style export (Date,Open,High,Low,Close,Adj Close,Volume).
// Price is "Adj Close" when present, else "Close". Unparseable numeric cells
// become NaN; rows are returned in date order. The symbol defaults to the
// file stem.
inline PriceVolumeSeries load_price_volume_csv(const std::filesystem::path& path,
                                               std::string symbol = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);

  const auto header = split(line, ',');
  auto find_col = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    return std::nullopt;
  };
  const auto date_col = find_col("Date");
  auto price_col = find_col("Adj Close");
  if (!price_col) price_col = find_col("Close");
  const auto volume_col = find_col("Volume");
  if (!date_col) throw DataError(path.string() + ": missing column Date");
  if (!price_col) throw DataError(path.string() + ": missing column Adj Close/Close");
  if (!volume_col) throw DataError(path.string() + ": missing column Volume");

  struct Row {
    Date date;
    double price;
    double volume;
  };
  std::map<Date, Row> rows;  // sorted, first occurrence of a date wins
  std::size_t parseable = 0;
  const std::size_t needed = std::max({*date_col, *price_col, *volume_col});
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() <= needed) continue;
    const auto date = parse_iso_date(cells[*date_col]);
    if (!date) continue;
    const auto p = detail::parse_cell(cells[*price_col]);
    const auto v = detail::parse_cell(cells[*volume_col]);
    if (p || v) ++parseable;
    rows.try_emplace(*date, Row{*date, p.value_or(kMissing), v.value_or(kMissing)});
  }
  if (parseable == 0) throw DataError(path.string() + ": no parseable rows");

  PriceVolumeSeries s;
  s.symbol = symbol.empty() ? path.stem().string() : std::move(symbol);
  s.dates.reserve(rows.size());
  for (const auto& [d, r] : rows) {
    s.dates.push_back(d);
    s.price.push_back(r.price);
    s.volume.push_back(r.volume);
  }
  return s;
}

struct DroppedSeries {
  std::string symbol;
  std::size_t longest_gap = 0;
};

struct AlignmentResult {
  std::vector<PriceVolumeSeries> series;
  std::vector<DroppedSeries> dropped;
};

inline std::size_t longest_missing_run(const PriceVolumeSeries& s) {
  std::size_t best = 0, run = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    run = s.row_missing(i) ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

// Cleans a set of series onto one shared date index.
//  - a series whose longest run of missing rows exceeds max_gap is dropped
//    and reported;
//  - shorter gaps are forward-filled per channel; leading missing rows have
//    no prior observation and are discarded;
//  - survivors are restricted to the intersection of their dates.
inline AlignmentResult align_series_set(std::span<const PriceVolumeSeries> series_list,
                                        std::size_t max_gap) {
  if (series_list.size() < 2) throw InvalidArgument("align_series_set needs at least two series");
  AlignmentResult result;
  std::vector<PriceVolumeSeries> filled;
  for (const auto& s : series_list) {
    s.validate();
    const std::size_t gap = longest_missing_run(s);
    if (gap > max_gap) {
      result.dropped.push_back({s.symbol, gap});
      continue;
    }
    PriceVolumeSeries f;
    f.symbol = s.symbol;
    double last_p = kMissing, last_v = kMissing;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!is_missing(s.price[i])) last_p = s.price[i];
      if (!is_missing(s.volume[i])) last_v = s.volume[i];
      if (is_missing(last_p) || is_missing(last_v)) continue;
      f.dates.push_back(s.dates[i]);
      f.price.push_back(last_p);
      f.volume.push_back(last_v);
    }
    filled.push_back(std::move(f));
  }
  if (filled.size() < 2)
    throw DataError("fewer than two series survive alignment (" +
                    std::to_string(result.dropped.size()) + " dropped)");

  std::set<Date> common(filled.front().dates.begin(), filled.front().dates.end());
  for (std::size_t k = 1; k < filled.size(); ++k) {
    std::set<Date> next;
    const std::set<Date> mine(filled[k].dates.begin(), filled[k].dates.end());
    std::set_intersection(common.begin(), common.end(), mine.begin(), mine.end(),
                          std::inserter(next, next.end()));
    common = std::move(next);
  }
  for (auto& f : filled) {
    PriceVolumeSeries r;
    r.symbol = f.symbol;
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (!common.contains(f.dates[i])) continue;
      r.dates.push_back(f.dates[i]);
      r.price.push_back(f.price[i]);
      r.volume.push_back(f.volume[i]);
    }
    result.series.push_back(std::move(r));
  }
  return result;
}

struct NormalizationParams {
  double mean = 0.0;
  double std = 1.0;

  double apply(double v) const { return (v - mean) / std; }
  double invert(double z) const { return z * std + mean; }
};

struct SplitSeries {
  std::vector<double> train;
  std::vector<double> test;
  // Set once normalize_with_train_params has run.
  std::optional<NormalizationParams> params;
  std::size_t split_index = 0;

  std::vector<double> concatenated() const {
    std::vector<double> all(train);
    all.insert(all.end(), test.begin(), test.end());
    return all;
  }
};

inline constexpr double kDefaultSplitRatio = 0.7;

// floor(ratio * N) leading values go to train, the rest to test; order kept.
inline std::size_t split_point(std::size_t n, double ratio) {
  // The small offset keeps products like 0.7 * 10 from landing just under 7.
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

inline SplitSeries split_train_test(std::span<const double> values,
                                    double ratio = kDefaultSplitRatio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("split ratio must lie in (0, 1)");
  if (values.size() < 10) throw DataError("series too short to split (need >= 10 values)");
  const std::size_t k = split_point(values.size(), ratio);
  if (k == 0 || k >= values.size()) throw DataError("degenerate train/test split");
  SplitSeries s;
  s.train.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k));
  s.test.assign(values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  s.split_index = k;
  return s;
}

inline constexpr double kMinStd = 1e-12;

// z-scores train and test with the train mean and population std.
inline SplitSeries normalize_with_train_params(const SplitSeries& split) {
  if (split.params) throw InvalidArgument("series already normalized");
  if (split.train.empty()) throw DataError("empty train channel");
  NormalizationParams p{mean(split.train), population_std(split.train)};
  if (!(p.std > kMinStd)) throw DataError("zero variance in train channel");
  SplitSeries out;
  out.split_index = split.split_index;
  out.params = p;
  out.train.reserve(split.train.size());
  out.test.reserve(split.test.size());
  for (double v : split.train) out.train.push_back(p.apply(v));
  for (double v : split.test) out.test.push_back(p.apply(v));
  return out;
}

inline std::vector<double> denormalize(std::span<const double> z, const NormalizationParams& p) {
  std::vector<double> out;
  out.reserve(z.size());
  for (double v : z) out.push_back(p.invert(v));
  return out;
}

inline void write_cleaned_csv(const std::filesystem::path& path, const PriceVolumeSeries& s) {
  auto out = open_for_write(path);
  out << "Date,Price,Volume\n";
  for (std::size_t i = 0; i < s.size(); ++i)
    out << format_date(s.dates[i]) << ',' << format_double(s.price[i]) << ','
        << format_double(s.volume[i]) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// Reads back a file written by write_cleaned_csv.
inline PriceVolumeSeries load_cleaned_csv(const std::filesystem::path& path,
                                          std::string symbol = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (trim(line) != "Date,Price,Volume") throw DataError(path.string() + ": not a cleaned series");
  PriceVolumeSeries s;
  s.symbol = symbol.empty() ? path.stem().string() : std::move(symbol);
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 3) throw DataError(path.string() + ": malformed row");
    const auto d = parse_iso_date(cells[0]);
    if (!d) throw DataError(path.string() + ": bad date " + cells[0]);
    s.dates.push_back(*d);
    s.price.push_back(parse_double(trim(cells[1])));
    s.volume.push_back(parse_double(trim(cells[2])));
  }
  s.validate();
  return s;
}

inline void write_drop_report(const std::filesystem::path& path, const AlignmentResult& r,
                              std::size_t max_gap) {
  auto out = open_for_write(path);
  out << "# series removed for gaps longer than " << max_gap << " consecutive rows\n";
  out << "# symbol longest_gap\n";
  for (const auto& d : r.dropped) out << d.symbol << ' ' << d.longest_gap << '\n';
  out << "# kept " << r.series.size() << " series";
  if (!r.series.empty()) out << " on " << r.series.front().size() << " common dates";
  out << '\n';
}

}  // namespace crsync
