#pragma once

// Synthetic markets: symbols driven by one shared oscillation, each with its
// own scale and independent noise.

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "crsync/core.hpp"
#include "crsync/ingest.hpp"

namespace crsync {

struct SyntheticMarket {
  std::size_t symbols = 2;
  std::size_t days = 1500;
  // Driver: sin(2 pi t / period) + 0.5 sin(2 pi t / slow_period + 1).
  double period = 60.0;
  double slow_period = 330.0;
  // Driver swing as a fraction of the base price / volume.
  double price_swing = 0.2;
  double volume_swing = 0.3;
  // Independent multiplicative noise, standard deviation as a fraction.
  double noise = 0.05;
  std::uint64_t seed = 1;
};

// Weekday dates from 2003-01-01.
inline std::vector<Date> business_days(std::size_t count) {
  using namespace std::chrono;
  std::vector<Date> out;
  Date d{year{2003} / January / 1};
  while (out.size() < count) {
    const weekday wd{d};
    if (wd != Saturday && wd != Sunday) out.push_back(d);
    d += days{1};
  }
  return out;
}

inline std::vector<PriceVolumeSeries> make_synthetic_market(const SyntheticMarket& spec) {
  constexpr double kTwoPi = 6.283185307179586;
  Rng rng(spec.seed);
  const auto dates = business_days(spec.days);
  std::vector<double> driver(spec.days);
  for (std::size_t t = 0; t < spec.days; ++t) {
    const double x = static_cast<double>(t);
    driver[t] = std::sin(kTwoPi * x / spec.period) + 0.5 * std::sin(kTwoPi * x / spec.slow_period + 1.0);
  }
  std::vector<PriceVolumeSeries> out;
  for (std::size_t k = 0; k < spec.symbols; ++k) {
    PriceVolumeSeries s;
    char name[16];
    std::snprintf(name, sizeof name, "SYN%02zu", k);
    s.symbol = name;
    s.dates = dates;
    const double base_price = 50.0 + 25.0 * static_cast<double>(k);
    const double base_volume = 1e6 * (1.0 + 0.5 * static_cast<double>(k));
    for (std::size_t t = 0; t < spec.days; ++t) {
      const double p = base_price * (1.0 + spec.price_swing * driver[t]);
      const double v = base_volume * (1.0 + spec.volume_swing * driver[t]);
      s.price.push_back(p * (1.0 + spec.noise * rng.normal()));
      s.volume.push_back(v * (1.0 + spec.noise * rng.normal()));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace crsync
