#pragma once

// Experiment orchestration: pairs of symbols, the per-pair
// embed -> distance band -> block series -> forecast -> classify chain,
// the grid runner and the aggregate tables.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crsync/core.hpp"
#include "crsync/embedding.hpp"
#include "crsync/eval.hpp"
#include "crsync/ingest.hpp"
#include "crsync/neural/training.hpp"
#include "crsync/recurrence.hpp"

namespace crsync {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  fs::path data_dir = "data";
  std::vector<std::string> symbols;  // empty: every *.csv in data_dir
  std::vector<std::size_t> block_sizes{1, 10, 20, 30};
  std::vector<std::size_t> time_steps{20, 50};
  std::vector<CellKind> model_kinds{CellKind::rnn, CellKind::lstm};
  std::vector<double> recurrence_rates{0.20, 0.25, 0.30, 0.35, 0.40, 0.45};
  double split_ratio = kDefaultSplitRatio;
  std::size_t max_gap = 5;
  EmbeddingConfig embedding;
  TrainConfig train;
  std::size_t hidden_units = kDefaultHiddenUnits;
  std::uint64_t master_seed = 42;
  fs::path output_dir = "results";
  std::size_t threads = 1;
  bool save_models = false;

  void validate() const {
    if (block_sizes.empty()) throw InvalidArgument("block_sizes is empty");
    if (time_steps.empty()) throw InvalidArgument("time_steps is empty");
    if (model_kinds.empty()) throw InvalidArgument("model_kinds is empty");
    if (recurrence_rates.empty()) throw InvalidArgument("recurrence_rates is empty");
    for (auto b : block_sizes)
      if (b < 1) throw InvalidArgument("block sizes must be >= 1");
    for (auto w : time_steps)
      if (w < 1) throw InvalidArgument("time steps must be >= 1");
    for (double r : recurrence_rates)
      if (!(r > 0.0 && r < 1.0)) throw InvalidArgument("recurrence rates must lie in (0, 1)");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw InvalidArgument("split_ratio must lie in (0, 1)");
    if (!symbols.empty() && symbols.size() < 2) throw InvalidArgument("need at least two symbols");
    if (hidden_units < 1) throw InvalidArgument("hidden_units must be >= 1");
    if (threads < 1) throw InvalidArgument("threads must be >= 1");
    embedding.validate();
    train.validate();
  }

  // Assigns one key=value setting; the keys are the field names, with
  // "embedding." and "train." prefixes for the nested configs.
  void set(const std::string& key, const std::string& value);

  // Flat key=value snapshot, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
};

namespace detail {

template <typename T, typename F>
std::vector<T> parse_list(const std::string& value, F&& each) {
  std::vector<T> out;
  for (const auto& item : split(value, ',')) {
    const auto t = trim(item);
    if (!t.empty()) out.push_back(each(std::string(t)));
  }
  return out;
}

inline std::size_t parse_size(const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw InvalidArgument("not an integer: '" + s + "'");
  }
  if (used != s.size() || v < 0) throw InvalidArgument("not a non-negative integer: '" + s + "'");
  return static_cast<std::size_t>(v);
}

inline std::uint64_t parse_u64(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    throw InvalidArgument("not an unsigned integer: '" + s + "'");
  }
  if (used != s.size() || s.front() == '-') throw InvalidArgument("not an unsigned integer: '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s) {
  try {
    return parse_double(s);
  } catch (const DataError& e) {
    throw InvalidArgument(e.what());
  }
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InvalidArgument("not a boolean: '" + s + "'");
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F&& each) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += each(v[i]);
  }
  return out;
}

}  // namespace detail

inline void ExperimentConfig::set(const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string value(trim(raw));
  if (key == "data_dir") data_dir = value;
  else if (key == "symbols") symbols = parse_list<std::string>(value, [](std::string s) { return s; });
  else if (key == "block_sizes") block_sizes = parse_list<std::size_t>(value, parse_size);
  else if (key == "time_steps") time_steps = parse_list<std::size_t>(value, parse_size);
  else if (key == "model_kinds") model_kinds = parse_list<CellKind>(value, [](const std::string& s) { return parse_cell_kind(s); });
  else if (key == "recurrence_rates") recurrence_rates = parse_list<double>(value, parse_real);
  else if (key == "split_ratio") split_ratio = parse_real(value);
  else if (key == "max_gap") max_gap = parse_size(value);
  else if (key == "hidden_units") hidden_units = parse_size(value);
  else if (key == "master_seed") master_seed = parse_u64(value);
  else if (key == "output_dir") output_dir = value;
  else if (key == "threads") threads = parse_size(value);
  else if (key == "save_models") save_models = parse_bool(value);
  else if (key == "embedding.delay") embedding.delay = parse_size(value);
  else if (key == "embedding.dimension") embedding.dimension = parse_size(value);
  else if (key == "embedding.dimension_max") embedding.dimension_max = parse_size(value);
  else if (key == "embedding.fnn_rtol") embedding.fnn_rtol = parse_real(value);
  else if (key == "embedding.fnn_atol") embedding.fnn_atol = parse_real(value);
  else if (key == "embedding.fnn_fraction_cutoff") embedding.fnn_fraction_cutoff = parse_real(value);
  else if (key == "embedding.forced_dimension") {
    if (value.empty() || value == "none") embedding.forced_dimension.reset();
    else embedding.forced_dimension = parse_size(value);
  }
  else if (key == "train.learning_rate") train.learning_rate = parse_real(value);
  else if (key == "train.adam_beta1") train.adam_beta1 = parse_real(value);
  else if (key == "train.adam_beta2") train.adam_beta2 = parse_real(value);
  else if (key == "train.adam_epsilon") train.adam_epsilon = parse_real(value);
  else if (key == "train.epochs") train.epochs = parse_size(value);
  else if (key == "train.batch_size") train.batch_size = parse_size(value);
  else if (key == "train.dropout_rate") train.dropout_rate = parse_real(value);
  else throw InvalidArgument("unknown config key '" + key + "'");
}

inline std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  using detail::join;
  auto num = [](auto v) { return format_double(static_cast<double>(v)); };
  auto size = [](std::size_t v) { return std::to_string(v); };
  return {
      {"data_dir", data_dir.string()},
      {"symbols", join(symbols, [](const std::string& s) { return s; })},
      {"block_sizes", join(block_sizes, size)},
      {"time_steps", join(time_steps, size)},
      {"model_kinds", join(model_kinds, [](CellKind k) { return std::string(to_string(k)); })},
      {"recurrence_rates", join(recurrence_rates, num)},
      {"split_ratio", num(split_ratio)},
      {"max_gap", size(max_gap)},
      {"hidden_units", size(hidden_units)},
      {"master_seed", std::to_string(master_seed)},
      {"output_dir", output_dir.string()},
      {"threads", size(threads)},
      {"save_models", save_models ? "true" : "false"},
      {"embedding.delay", size(embedding.delay)},
      {"embedding.dimension", size(embedding.dimension)},
      {"embedding.dimension_max", size(embedding.dimension_max)},
      {"embedding.fnn_rtol", num(embedding.fnn_rtol)},
      {"embedding.fnn_atol", num(embedding.fnn_atol)},
      {"embedding.fnn_fraction_cutoff", num(embedding.fnn_fraction_cutoff)},
      {"embedding.forced_dimension",
       embedding.forced_dimension ? size(*embedding.forced_dimension) : std::string("none")},
      {"train.learning_rate", num(train.learning_rate)},
      {"train.adam_beta1", num(train.adam_beta1)},
      {"train.adam_beta2", num(train.adam_beta2)},
      {"train.adam_epsilon", num(train.adam_epsilon)},
      {"train.epochs", size(train.epochs)},
      {"train.batch_size", size(train.batch_size)},
      {"train.dropout_rate", num(train.dropout_rate)},
  };
}

// Applies key=value lines ('#' starts a comment) on top of `base`.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key=value");
    base.set(std::string(trim(t.substr(0, eq))), std::string(t.substr(eq + 1)));
  }
  return base;
}

inline ExperimentConfig load_config_file(const fs::path& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_config(in, std::move(base));
}

inline void write_config_file(const fs::path& path, const ExperimentConfig& c) {
  auto out = open_for_write(path);
  for (const auto& [k, v] : c.entries()) out << k << '=' << v << '\n';
}

// ---------------------------------------------------------------------------
// Pairs and seeds
// ---------------------------------------------------------------------------

struct PairId {
  std::string first;
  std::string second;

  std::string name() const { return first + "_" + second; }
  friend auto operator<=>(const PairId&, const PairId&) = default;
};

inline PairId make_pair_id(std::string a, std::string b) {
  if (a == b) throw InvalidArgument("a pair needs two distinct symbols");
  if (b < a) std::swap(a, b);
  return {std::move(a), std::move(b)};
}

// All unordered pairs of the (sorted) symbols, lexicographic order.
inline std::vector<PairId> enumerate_pairs(std::vector<std::string> symbols) {
  std::sort(symbols.begin(), symbols.end());
  if (std::adjacent_find(symbols.begin(), symbols.end()) != symbols.end())
    throw InvalidArgument("duplicate symbols");
  if (symbols.size() < 2) throw InvalidArgument("need at least two symbols");
  std::vector<PairId> out;
  for (std::size_t i = 0; i < symbols.size(); ++i)
    for (std::size_t j = i + 1; j < symbols.size(); ++j) out.push_back({symbols[i], symbols[j]});
  return out;
}

// Resolves "A_B" (either order) against known symbols, which may themselves
// contain underscores.
inline PairId parse_pair(std::string_view name, const std::vector<std::string>& symbols) {
  const std::set<std::string> known(symbols.begin(), symbols.end());
  for (std::size_t pos = name.find('_'); pos != std::string_view::npos; pos = name.find('_', pos + 1)) {
    std::string a(name.substr(0, pos)), b(name.substr(pos + 1));
    if (known.contains(a) && known.contains(b) && a != b) return make_pair_id(a, b);
  }
  throw InvalidArgument("unknown pair '" + std::string(name) + "'");
}

inline std::uint64_t pair_seed(std::uint64_t master_seed, const PairId& pair) {
  return splitmix64(master_seed ^ fnv1a64(pair.name()));
}

struct CellSpec {
  std::size_t block = 20;
  std::size_t window = 20;
  CellKind kind = CellKind::lstm;

  std::string label() const {
    return "b" + std::to_string(block) + "_w" + std::to_string(window) + "_" + std::string(to_string(kind));
  }
  friend auto operator<=>(const CellSpec&, const CellSpec&) = default;
};

inline std::uint64_t cell_seed(std::uint64_t pair_seed_value, const CellSpec& cell) {
  return splitmix64(pair_seed_value ^ fnv1a64(cell.label()));
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

struct PreparedSymbol {
  std::string symbol;
  std::vector<Date> dates;
  SplitSeries price;   // train-normalized
  SplitSeries volume;  // train-normalized
  std::vector<double> price_full;
  std::vector<double> volume_full;
};

struct Dataset {
  std::vector<PreparedSymbol> symbols;
  std::vector<DroppedSeries> dropped;
  DimensionSelection embedding;
  std::size_t split_index = 0;

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& s : symbols) out.push_back(s.symbol);
    return out;
  }

  const PreparedSymbol& get(const std::string& name) const {
    for (const auto& s : symbols)
      if (s.symbol == name) return s;
    throw InvalidArgument("unknown symbol '" + name + "'");
  }
};

// Accepts both the raw export layout and the cleaned Date,Price,Volume layout.
inline PriceVolumeSeries load_series_file(const fs::path& path, const std::string& symbol) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  if (trim(header) == "Date,Price,Volume") return load_cleaned_csv(path, symbol);
  return load_price_volume_csv(path, symbol);
}

inline std::vector<PriceVolumeSeries> load_symbol_files(const ExperimentConfig& config) {
  std::vector<std::string> symbols = config.symbols;
  if (symbols.empty()) {
    if (!fs::is_directory(config.data_dir))
      throw IoError("data directory not found: " + config.data_dir.string());
    for (const auto& e : fs::directory_iterator(config.data_dir))
      if (e.is_regular_file() && e.path().extension() == ".csv") symbols.push_back(e.path().stem().string());
    std::sort(symbols.begin(), symbols.end());
  }
  std::vector<PriceVolumeSeries> out;
  for (const auto& s : symbols) out.push_back(load_series_file(config.data_dir / (s + ".csv"), s));
  return out;
}

// Aligns, splits and normalizes every channel, then picks the common
// embedding dimension from the train portions of all channels.
inline Dataset prepare_dataset(std::span<const PriceVolumeSeries> raw, const ExperimentConfig& config) {
  config.validate();
  auto aligned = align_series_set(raw, config.max_gap);
  Dataset ds;
  ds.dropped = aligned.dropped;
  std::vector<std::vector<double>> train_channels;
  std::vector<std::string> labels;
  for (auto& s : aligned.series) {
    PreparedSymbol p;
    p.symbol = s.symbol;
    p.dates = s.dates;
    p.price = normalize_with_train_params(split_train_test(s.price, config.split_ratio));
    p.volume = normalize_with_train_params(split_train_test(s.volume, config.split_ratio));
    p.price_full = p.price.concatenated();
    p.volume_full = p.volume.concatenated();
    ds.split_index = p.price.split_index;
    train_channels.push_back(p.price.train);
    labels.push_back(p.symbol + ":price");
    train_channels.push_back(p.volume.train);
    labels.push_back(p.symbol + ":volume");
    ds.symbols.push_back(std::move(p));
  }
  std::sort(ds.symbols.begin(), ds.symbols.end(),
            [](const PreparedSymbol& a, const PreparedSymbol& b) { return a.symbol < b.symbol; });
  ds.embedding = estimate_common_dimension(train_channels, config.embedding, labels);
  return ds;
}

inline Dataset load_dataset(const ExperimentConfig& config) {
  const auto raw = load_symbol_files(config);
  return prepare_dataset(raw, config);
}

// ---------------------------------------------------------------------------
// One grid cell
// ---------------------------------------------------------------------------

struct PairBlockSeries {
  BlockDistanceSeries z;
  // z.values[0, train_count) only touch days before the split index.
  std::size_t train_count = 0;
};

// Z over the full train-normalized span. A value is "train" when every day
// of every state in its block precedes the split; values straddling the
// split go to the test side.
inline PairBlockSeries pair_block_series(const PreparedSymbol& a, const PreparedSymbol& b,
                                         std::size_t block, std::size_t dimension, std::size_t delay,
                                         std::size_t split_index) {
  const auto x = embed_joint(a.price_full, a.volume_full, dimension, delay);
  const auto y = embed_joint(b.price_full, b.volume_full, dimension, delay);
  if (x.count() != y.count()) throw DataError("pair series have different lengths");
  const auto d = cross_distance_matrix(x, y, block);
  PairBlockSeries out;
  out.z = diagonal_block_series(d, block);
  // Last day touched by values[k] is k + (block - 1) + (dimension - 1) * delay.
  const std::size_t reach = (block - 1) + (dimension - 1) * delay;
  out.train_count = split_index > reach ? std::min(split_index - reach, out.z.size()) : 0;
  return out;
}

struct RateResult {
  ThresholdSpec threshold;
  ClassificationReport report;
};

struct CellResult {
  PairId pair;
  CellSpec cell;
  std::uint64_t pair_seed = 0;
  std::uint64_t seed = 0;
  std::size_t dimension = 0;
  std::size_t z_length = 0;
  std::size_t z_train = 0;
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  std::size_t z_offset = 0;
  RegressionReport regression;
  std::vector<RateResult> rates;
  std::vector<std::size_t> test_index;  // position in Z of each prediction
  std::vector<double> actual;
  std::vector<double> predicted;
  TrainingTrace trace;
  SequenceModel model;
};

inline CellResult run_pair_experiment(const Dataset& ds, const PairId& pair, const CellSpec& cell,
                                      const ExperimentConfig& config) {
  CellResult r;
  r.pair = pair;
  r.cell = cell;
  r.pair_seed = pair_seed(config.master_seed, pair);
  r.seed = cell_seed(r.pair_seed, cell);
  r.dimension = ds.embedding.dimension;

  const auto series = pair_block_series(ds.get(pair.first), ds.get(pair.second), cell.block,
                                        r.dimension, config.embedding.delay, ds.split_index);
  const auto& z = series.z.values;
  r.z_length = z.size();
  r.z_train = series.train_count;
  r.z_offset = series.z.source_offset;
  if (r.z_train <= cell.window) throw DataError("train block series shorter than the window");
  if (r.z_train >= r.z_length) throw DataError("no block-series values on the test side");

  const std::span<const double> z_train(z.data(), r.z_train);
  const auto train_set = make_windows(z_train, cell.window);
  const auto test_set = make_windows(z, cell.window, r.z_train);
  r.train_samples = train_set.size();
  r.test_samples = test_set.size();

  TrainConfig tc = config.train;
  tc.seed = r.seed;
  const auto arch = standard_architecture(cell.kind, config.hidden_units, tc.dropout_rate);
  r.model = init_model(arch, splitmix64(r.seed));
  r.trace = train_mse_adam(r.model, train_set, tc);

  r.predicted = predict_one_step(r.model, test_set);
  r.actual = test_set.targets;
  r.test_index = test_set.target_index;
  r.regression = regression_report(r.actual, r.predicted);

  for (double rate : config.recurrence_rates) {
    RateResult rr;
    rr.threshold = epsilon_for_recurrence_rate(z_train, rate);
    const auto truth = threshold_labels(r.actual, rr.threshold);
    const auto guess = threshold_labels(r.predicted, rr.threshold);
    rr.report = classification_report(truth, guess);
    r.rates.push_back(rr);
  }
  return r;
}

inline fs::path cell_directory(const fs::path& out_dir, const PairId& pair, const CellSpec& cell) {
  return out_dir / "pairs" / pair.name() / cell.label();
}

inline std::vector<fs::path> write_cell_outputs(const CellResult& r, const fs::path& out_dir,
                                                bool save_model_file = false) {
  const fs::path dir = cell_directory(out_dir, r.pair, r.cell);
  std::vector<fs::path> files;
  const std::string key = r.pair.name() + ',' + std::to_string(r.cell.block) + ',' +
                          std::to_string(r.cell.window) + ',' + std::string(to_string(r.cell.kind));
  {
    files.push_back(dir / "regression.csv");
    auto out = open_for_write(files.back());
    out << "pair,block,time_steps,model,dimension,z_length,z_train,train_samples,test_samples,"
           "r_squared,mape,mae,rmse,mape_excluded,mape_category\n";
    const auto& g = r.regression;
    out << key << ',' << r.dimension << ',' << r.z_length << ',' << r.z_train << ','
        << r.train_samples << ',' << r.test_samples << ',' << format_double(g.r_squared) << ','
        << format_double(g.mape) << ',' << format_double(g.mae) << ',' << format_double(g.rmse) << ','
        << g.mape_excluded << ',' << (std::isnan(g.mape) ? "undefined" : to_string(mape_category(g.mape)))
        << '\n';
  }
  {
    files.push_back(dir / "classification.csv");
    auto out = open_for_write(files.back());
    out << "pair,block,time_steps,model,recurrence_rate,epsilon,achieved_rate,accuracy,precision,"
           "recall,f1,class1_fraction,tp,tn,fp,fn\n";
    for (const auto& rr : r.rates) {
      const auto& c = rr.report;
      out << key << ',' << format_double(rr.threshold.recurrence_rate) << ','
          << format_double(rr.threshold.epsilon) << ',' << format_double(rr.threshold.achieved_rate)
          << ',' << format_double(c.accuracy) << ',' << format_double(c.precision) << ','
          << format_double(c.recall) << ',' << format_double(c.f1) << ','
          << format_double(c.class1_fraction) << ',' << c.tp << ',' << c.tn << ',' << c.fp << ','
          << c.fn << '\n';
    }
  }
  {
    files.push_back(dir / "series.csv");
    auto out = open_for_write(files.back());
    out << "date_index,actual,predicted\n";
    for (std::size_t k = 0; k < r.actual.size(); ++k)
      out << r.test_index[k] + r.z_offset << ',' << format_double(r.actual[k]) << ','
          << format_double(r.predicted[k]) << '\n';
  }
  files.push_back(dir / "trace.csv");
  write_trace_csv(files.back(), r.trace);
  if (save_model_file) {
    files.push_back(dir / "model.bin");
    save_model(r.model, files.back());
  }
  return files;
}

// ---------------------------------------------------------------------------
// Aggregate tables
// ---------------------------------------------------------------------------

namespace detail {

// Minimal reader for the CSVs written above (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("missing column " + std::string(name));
  }
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty");
  t.header = split(trim(line), ',');
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    t.rows.push_back(split(trim(line), ','));
    if (t.rows.back().size() != t.header.size()) throw DataError(path.string() + ": ragged row");
  }
  return t;
}

struct ConfigKey {
  std::size_t block;
  std::size_t window;
  CellKind kind;

  // rnn before lstm, blocks ascending, longer windows first.
  friend bool operator<(const ConfigKey& a, const ConfigKey& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    if (a.block != b.block) return a.block < b.block;
    return a.window > b.window;
  }
  std::string csv() const {
    return std::to_string(block) + ',' + std::to_string(window) + ',' + std::string(to_string(kind));
  }
  std::string label() const { return CellSpec{block, window, kind}.label(); }
};

inline double safe_cv(const AggregateStats& s) {
  return s.mean == 0.0 ? std::nan("") : coefficient_of_variation(s.mean, s.std);
}

}  // namespace detail

struct AggregateTables {
  std::vector<fs::path> files;
  // Top row of the CV ranking; the per-rate tables describe this configuration.
  std::optional<CellSpec> selected;
};

// Rebuilds every aggregate table from the per-cell CSVs under
// out_dir/pairs, so the tables carry no state beyond those files.
inline AggregateTables write_aggregate_tables(const fs::path& out_dir) {
  using namespace detail;
  struct RegRow {
    double r2, mape, mae, rmse;
  };
  struct ClsRow {
    double accuracy, precision, recall, f1, class1;
  };
  std::map<ConfigKey, std::vector<RegRow>> reg;
  std::map<ConfigKey, std::map<double, std::vector<ClsRow>>> cls;

  std::vector<fs::path> cell_dirs;
  if (fs::is_directory(out_dir / "pairs"))
    for (const auto& pair : fs::directory_iterator(out_dir / "pairs"))
      if (pair.is_directory())
        for (const auto& cell : fs::directory_iterator(pair.path()))
          if (cell.is_directory() && fs::exists(cell.path() / "regression.csv")) cell_dirs.push_back(cell.path());
  std::sort(cell_dirs.begin(), cell_dirs.end());

  for (const auto& dir : cell_dirs) {
    const auto rt = read_csv(dir / "regression.csv");
    for (const auto& row : rt.rows) {
      const ConfigKey key{parse_size(row[rt.column("block")]), parse_size(row[rt.column("time_steps")]),
                          parse_cell_kind(row[rt.column("model")])};
      reg[key].push_back({parse_double(row[rt.column("r_squared")]), parse_double(row[rt.column("mape")]),
                          parse_double(row[rt.column("mae")]), parse_double(row[rt.column("rmse")])});
    }
    const auto ct = read_csv(dir / "classification.csv");
    for (const auto& row : ct.rows) {
      const ConfigKey key{parse_size(row[ct.column("block")]), parse_size(row[ct.column("time_steps")]),
                          parse_cell_kind(row[ct.column("model")])};
      cls[key][parse_double(row[ct.column("recurrence_rate")])].push_back(
          {parse_double(row[ct.column("accuracy")]), parse_double(row[ct.column("precision")]),
           parse_double(row[ct.column("recall")]), parse_double(row[ct.column("f1")]),
           parse_double(row[ct.column("class1_fraction")])});
    }
  }

  AggregateTables result;
  if (reg.empty()) return result;
  auto stats_of = [](const std::vector<RegRow>& rows, double RegRow::*field) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.*field);
    return aggregate_stats(v);
  };
  auto open = [&](const char* name) {
    result.files.push_back(out_dir / name);
    return open_for_write(result.files.back());
  };

  {
    auto means = open("table2_means.csv");
    auto stds = open("table3_stds.csv");
    auto cvs = open("table4_cv.csv");
    auto cats = open("table5_mape_categories.csv");
    means << "block,time_steps,model,pairs,r_squared,mape,rmse,mae\n";
    stds << "block,time_steps,model,pairs,r_squared,mape,rmse,mae\n";
    cvs << "block,time_steps,model,r_squared_cv,mape_cv,mae_cv,rmse_cv\n";
    cats << "block,time_steps,model,highly_accurate,good,reasonable,inaccurate\n";
    for (const auto& [key, rows] : reg) {
      const auto r2 = stats_of(rows, &RegRow::r2), mape = stats_of(rows, &RegRow::mape);
      const auto mae = stats_of(rows, &RegRow::mae), rmse = stats_of(rows, &RegRow::rmse);
      means << key.csv() << ',' << rows.size() << ',' << format_double(r2.mean) << ','
            << format_double(mape.mean) << ',' << format_double(rmse.mean) << ','
            << format_double(mae.mean) << '\n';
      stds << key.csv() << ',' << rows.size() << ',' << format_double(r2.std) << ','
           << format_double(mape.std) << ',' << format_double(rmse.std) << ',' << format_double(mae.std)
           << '\n';
      cvs << key.csv() << ',' << format_double(safe_cv(r2)) << ',' << format_double(safe_cv(mape)) << ','
          << format_double(safe_cv(mae)) << ',' << format_double(safe_cv(rmse)) << '\n';
      std::size_t counts[4] = {0, 0, 0, 0};
      for (const auto& r : rows)
        if (!std::isnan(r.mape)) ++counts[static_cast<int>(mape_category(r.mape))];
      cats << key.csv() << ',' << counts[0] << ',' << counts[1] << ',' << counts[2] << ',' << counts[3]
           << '\n';
    }
  }

  {
    CvTable table{{"r_squared", "mape", "mae", "rmse"}, {}};
    std::map<std::string, ConfigKey> by_label;
    for (const auto& [key, rows] : reg) {
      table.rows.push_back({key.label(),
                            {safe_cv(stats_of(rows, &RegRow::r2)), safe_cv(stats_of(rows, &RegRow::mape)),
                             safe_cv(stats_of(rows, &RegRow::mae)), safe_cv(stats_of(rows, &RegRow::rmse))}});
      by_label.emplace(key.label(), key);
    }
    const auto ranking = rank_configurations_by_cv(table);
    auto out = open("table6_cv_ranking.csv");
    out << "block,time_steps,model,r_squared_cv,mape_cv,mae_cv,rmse_cv,average_rank\n";
    for (const auto& row : ranking.rows) {
      out << by_label.at(row.label).csv();
      for (double v : row.cv) out << ',' << format_double(v);
      out << ',' << format_double(row.average_rank) << '\n';
    }
    const auto& top = by_label.at(ranking.rows.front().label);
    result.selected = CellSpec{top.block, top.window, top.kind};
  }

  const ConfigKey sel{result.selected->block, result.selected->window, result.selected->kind};
  if (const auto it = cls.find(sel); it != cls.end()) {
    auto t7 = open("table7_classification.csv");
    t7 << "block,time_steps,model,recurrence_rate,metric,mean,std,min,max,median\n";
    CvTable rate_table{{"accuracy", "precision", "recall", "f1", "class1_fraction"}, {}};
    std::map<std::string, double> rate_of;
    for (const auto& [rate, rows] : it->second) {
      const std::pair<const char*, double ClsRow::*> metrics[] = {
          {"accuracy", &ClsRow::accuracy}, {"precision", &ClsRow::precision}, {"recall", &ClsRow::recall},
          {"f1", &ClsRow::f1}, {"class1_fraction", &ClsRow::class1}};
      CvRow cv_row{format_double(rate), {}};
      for (const auto& [name, field] : metrics) {
        std::vector<double> v;
        for (const auto& r : rows) v.push_back(r.*field);
        const auto s = aggregate_stats(v);
        t7 << sel.csv() << ',' << format_double(rate) << ',' << name << ',' << format_double(s.mean) << ','
           << format_double(s.std) << ',' << format_double(s.min) << ',' << format_double(s.max) << ','
           << format_double(s.median) << '\n';
        cv_row.cv.push_back(safe_cv(s));
      }
      rate_of.emplace(cv_row.label, rate);
      rate_table.rows.push_back(std::move(cv_row));
    }
    const auto ranking = rank_configurations_by_cv(rate_table);
    auto t8 = open("table8_rate_ranking.csv");
    t8 << "recurrence_rate,accuracy_cv,precision_cv,recall_cv,f1_cv,class1_fraction_cv,average_rank\n";
    for (const auto& row : ranking.rows) {
      t8 << format_double(rate_of.at(row.label));
      for (double v : row.cv) t8 << ',' << format_double(v);
      t8 << ',' << format_double(row.average_rank) << '\n';
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

struct CellStatus {
  PairId pair;
  CellSpec cell;
  std::uint64_t pair_seed = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double seconds = 0.0;
  std::vector<fs::path> files;
};

struct RunManifest {
  std::vector<std::pair<std::string, std::string>> config;
  std::string started;
  std::string finished;
  std::size_t dimension = 0;
  std::vector<DroppedSeries> dropped;
  std::vector<CellStatus> cells;
  AggregateTables tables;

  bool all_ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const CellStatus& c) { return c.ok; });
  }
  std::size_t failed() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellStatus& c) { return !c.ok; }));
  }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json to_json(const RunManifest& m, const fs::path& out_dir) {
  using nlohmann::json;
  json j;
  j["software"] = "crsync " + std::string(kVersion);
  j["started"] = m.started;
  j["finished"] = m.finished;
  json cfg = json::object();
  for (const auto& [k, v] : m.config) cfg[k] = v;
  j["config"] = cfg;
  j["embedding_dimension"] = m.dimension;
  j["seed_derivation"] =
      "pair_seed = splitmix64(master_seed ^ fnv1a64(pair_name)); "
      "cell_seed = splitmix64(pair_seed ^ fnv1a64(cell_label)); init_seed = splitmix64(cell_seed)";
  json dropped = json::array();
  for (const auto& d : m.dropped) dropped.push_back({{"symbol", d.symbol}, {"longest_gap", d.longest_gap}});
  j["dropped_symbols"] = dropped;
  json cells = json::array();
  for (const auto& c : m.cells) {
    json files = json::array();
    for (const auto& f : c.files) files.push_back(fs::relative(f, out_dir).generic_string());
    cells.push_back({{"pair", c.pair.name()},
                     {"block", c.cell.block},
                     {"time_steps", c.cell.window},
                     {"model", std::string(to_string(c.cell.kind))},
                     {"pair_seed", c.pair_seed},
                     {"seed", c.seed},
                     {"status", c.ok ? "ok" : "failed"},
                     {"error", c.error},
                     {"seconds", c.seconds},
                     {"files", files}});
  }
  j["cells"] = cells;
  json tables = json::array();
  for (const auto& f : m.tables.files) tables.push_back(fs::relative(f, out_dir).generic_string());
  j["tables"] = tables;
  if (m.tables.selected) j["selected_configuration"] = m.tables.selected->label();
  j["failed_cells"] = m.failed();
  return j;
}

// The cartesian product pairs x blocks x windows x kinds, with seeds filled in.
inline std::vector<CellStatus> grid_cells(const std::vector<PairId>& pairs, const ExperimentConfig& config) {
  std::vector<CellStatus> cells;
  for (const auto& p : pairs)
    for (std::size_t b : config.block_sizes)
      for (std::size_t w : config.time_steps)
        for (CellKind k : config.model_kinds) {
          CellStatus s;
          s.pair = p;
          s.cell = {b, w, k};
          s.pair_seed = pair_seed(config.master_seed, p);
          s.seed = cell_seed(s.pair_seed, s.cell);
          cells.push_back(std::move(s));
        }
  return cells;
}

// Runs pairs x blocks x windows x kinds (optionally only for `only` pairs)
// on a bounded worker pool, then rebuilds the aggregate tables and writes
// manifest.json last.
inline RunManifest run_grid(const Dataset& ds, const ExperimentConfig& config,
                            const std::vector<PairId>& only = {}) {
  config.validate();
  RunManifest manifest;
  manifest.started = utc_timestamp();
  manifest.config = config.entries();
  manifest.dimension = ds.embedding.dimension;
  manifest.dropped = ds.dropped;

  manifest.cells = grid_cells(only.empty() ? enumerate_pairs(ds.names()) : only, config);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < manifest.cells.size(); i = next++) {
      CellStatus& s = manifest.cells[i];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const auto r = run_pair_experiment(ds, s.pair, s.cell, config);
        s.files = write_cell_outputs(r, config.output_dir, config.save_models);
        s.ok = true;
      } catch (const std::exception& e) {
        s.ok = false;
        s.error = e.what();
        std::error_code ec;
        fs::remove_all(cell_directory(config.output_dir, s.pair, s.cell), ec);
      }
      s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  const std::size_t n_threads = std::min(config.threads, std::max<std::size_t>(1, manifest.cells.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  manifest.tables = write_aggregate_tables(config.output_dir);
  manifest.finished = utc_timestamp();
  auto out = open_for_write(config.output_dir / "manifest.json");
  out << to_json(manifest, config.output_dir).dump(2) << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// Plot data and diagnostics
// ---------------------------------------------------------------------------

// Writes <pair>_<cell>_distance.csv (date_index,actual,predicted over the
// test span) and <pair>_prices.csv (date, both normalized price channels
// over the full span) under out_dir/plots.
inline std::vector<fs::path> export_comparison_series(const Dataset& ds, const PairId& pair,
                                                      const CellSpec& cell, const fs::path& out_dir) {
  const auto& a = ds.get(pair.first);
  const auto& b = ds.get(pair.second);
  const fs::path series = cell_directory(out_dir, pair, cell) / "series.csv";
  if (!fs::exists(series)) throw DataError("missing results for " + pair.name() + " " + cell.label());
  const auto t = detail::read_csv(series);
  std::vector<fs::path> files;
  files.push_back(out_dir / "plots" / (pair.name() + "_" + cell.label() + "_distance.csv"));
  {
    auto out = open_for_write(files.back());
    out << "date_index,actual,predicted\n";
    for (const auto& row : t.rows)
      out << row[t.column("date_index")] << ',' << row[t.column("actual")] << ','
          << row[t.column("predicted")] << '\n';
  }
  files.push_back(out_dir / "plots" / (pair.name() + "_prices.csv"));
  {
    auto out = open_for_write(files.back());
    out << "date,normalized_price_" << pair.first << ",normalized_price_" << pair.second << '\n';
    for (std::size_t i = 0; i < a.dates.size(); ++i)
      out << format_date(a.dates[i]) << ',' << format_double(a.price_full[i]) << ','
          << format_double(b.price_full[i]) << '\n';
  }
  return files;
}

// Full cross-distance and cross-recurrence heatmaps over the first
// `max_states` joint states; epsilon is the lower quantile of the shown
// distances at `rate`.
inline std::vector<fs::path> export_pair_heatmaps(const Dataset& ds, const PairId& pair,
                                                  const ExperimentConfig& config, const fs::path& out_dir,
                                                  double rate = 0.3, std::size_t max_states = 2000) {
  const auto& a = ds.get(pair.first);
  const auto& b = ds.get(pair.second);
  const std::size_t dim = ds.embedding.dimension;
  const std::size_t n = std::min(a.price_full.size(), max_states + (dim - 1) * config.embedding.delay);
  auto head = [n](const std::vector<double>& v) { return std::span<const double>(v.data(), n); };
  const auto x = embed_joint(head(a.price_full), head(a.volume_full), dim, config.embedding.delay);
  const auto y = embed_joint(head(b.price_full), head(b.volume_full), dim, config.embedding.delay);
  const auto d = cross_distance_matrix(x, y);
  const auto eps = epsilon_for_recurrence_rate(d.stored_values(), rate);
  std::vector<fs::path> files{out_dir / "plots" / (pair.name() + "_distance.pgm"),
                              out_dir / "plots" / (pair.name() + "_crp.pgm")};
  export_heatmap(d, files[0]);
  files.push_back(files[0].string() + ".scale.txt");
  export_heatmap(recurrence_matrix(d, eps.epsilon), files[1]);
  return files;
}

// symbol,channel,dimension,reached_cutoff,fnn_d1..fnn_dK over train channels.
inline void write_embedding_report(const fs::path& path, const DimensionSelection& sel,
                                   std::size_t dimension_max) {
  auto out = open_for_write(path);
  out << "symbol,channel,dimension,reached_cutoff";
  for (std::size_t d = 1; d <= dimension_max; ++d) out << ",fnn_d" << d;
  out << '\n';
  for (const auto& s : sel.per_series) {
    const auto colon = s.label.rfind(':');
    out << s.label.substr(0, colon) << ',' << (colon == std::string::npos ? "" : s.label.substr(colon + 1))
        << ',' << s.dimension << ',' << (s.reached_cutoff ? "true" : "false");
    for (std::size_t d = 0; d < dimension_max; ++d)
      out << ',' << (d < s.fractions.size() ? format_double(s.fractions[d]) : std::string());
    out << '\n';
  }
}

}  // namespace crsync
