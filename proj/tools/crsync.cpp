// crsync: command-line front end for the pair-synchronization pipeline.
//
// Settings are resolved as built-in defaults, then --config <file>, then
// individual flags; later sources win.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "crsync/crsync.hpp"

namespace {

using crsync::ExperimentConfig;

struct CommonFlags {
  std::string config_file;
  std::string data_dir;
  std::vector<std::string> symbols;
  std::string blocks, windows, models, rates;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> hidden_units;
  std::optional<std::size_t> force_dimension;
  bool save_models = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("--data-dir", data_dir, "directory of <SYMBOL>.csv files");
    cmd->add_option("--symbols", symbols, "symbols to use (default: every CSV in data-dir)")->delimiter(',');
    cmd->add_option("--blocks", blocks, "comma-separated block sizes");
    cmd->add_option("--windows", windows, "comma-separated window lengths (time steps)");
    cmd->add_option("--models", models, "comma-separated model kinds (rnn,lstm)");
    cmd->add_option("--rates", rates, "comma-separated recurrence rates");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--threads", threads, "worker threads for the grid");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--hidden-units", hidden_units, "units per recurrent layer");
    cmd->add_option("--force-dimension", force_dimension, "skip FNN and use this embedding dimension");
    cmd->add_flag("--save-models", save_models, "also write model.bin per cell");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config_file.empty()) c = crsync::load_config_file(config_file, c);
    if (!data_dir.empty()) c.data_dir = data_dir;
    if (!symbols.empty()) c.symbols = symbols;
    if (!blocks.empty()) c.set("block_sizes", blocks);
    if (!windows.empty()) c.set("time_steps", windows);
    if (!models.empty()) c.set("model_kinds", models);
    if (!rates.empty()) c.set("recurrence_rates", rates);
    if (seed) c.master_seed = *seed;
    if (!out.empty()) c.output_dir = out;
    if (threads) c.threads = *threads;
    if (epochs) c.train.epochs = *epochs;
    if (hidden_units) c.hidden_units = *hidden_units;
    if (force_dimension) c.embedding.forced_dimension = *force_dimension;
    if (save_models) c.save_models = true;
    c.validate();
    return c;
  }
};

int cmd_ingest(const ExperimentConfig& c) {
  const auto raw = crsync::load_symbol_files(c);
  const auto aligned = crsync::align_series_set(raw, c.max_gap);
  const auto dir = c.output_dir / "cleaned";
  for (const auto& s : aligned.series) crsync::write_cleaned_csv(dir / (s.symbol + ".csv"), s);
  crsync::write_drop_report(c.output_dir / "drop_report.txt", aligned, c.max_gap);
  std::printf("kept %zu series (%zu rows each), dropped %zu; cleaned files in %s\n", aligned.series.size(),
              aligned.series.front().size(), aligned.dropped.size(), dir.string().c_str());
  return 0;
}

int cmd_embed_report(const ExperimentConfig& c) {
  const auto ds = crsync::load_dataset(c);
  const auto path = c.output_dir / "embedding_report.csv";
  crsync::write_embedding_report(path, ds.embedding, c.embedding.dimension_max);
  std::printf("common embedding dimension: %zu (%s)\n", ds.embedding.dimension, path.string().c_str());
  return 0;
}

int report_manifest(const crsync::RunManifest& m, const ExperimentConfig& c) {
  for (const auto& cell : m.cells)
    if (!cell.ok)
      std::fprintf(stderr, "failed: %s %s: %s\n", cell.pair.name().c_str(), cell.cell.label().c_str(),
                   cell.error.c_str());
  std::printf("%zu cells, %zu failed; manifest at %s\n", m.cells.size(), m.failed(),
              (c.output_dir / "manifest.json").string().c_str());
  if (m.tables.selected) std::printf("top configuration by CV rank: %s\n", m.tables.selected->label().c_str());
  return m.all_ok() ? 0 : 1;
}

int cmd_run_pair(const ExperimentConfig& c, const std::string& pair_name) {
  const auto ds = crsync::load_dataset(c);
  const auto pair = crsync::parse_pair(pair_name, ds.names());
  const auto m = crsync::run_grid(ds, c, {pair});
  for (const auto& cell : m.cells)
    if (cell.ok) {
      const auto t = crsync::detail::read_csv(crsync::cell_directory(c.output_dir, pair, cell.cell) / "regression.csv");
      const auto& row = t.rows.front();
      std::printf("%s %s  R2=%s MAPE=%s\n", pair.name().c_str(), cell.cell.label().c_str(),
                  row[t.column("r_squared")].c_str(), row[t.column("mape")].c_str());
    }
  return report_manifest(m, c);
}

int cmd_export_plots(const ExperimentConfig& c, const std::string& pair_name, bool heatmaps, double rate,
                     std::size_t heatmap_states) {
  const auto ds = crsync::load_dataset(c);
  const auto pair = crsync::parse_pair(pair_name, ds.names());
  std::vector<std::filesystem::path> files;
  for (std::size_t b : c.block_sizes)
    for (std::size_t w : c.time_steps)
      for (auto k : c.model_kinds) {
        const auto f = crsync::export_comparison_series(ds, pair, {b, w, k}, c.output_dir);
        files.insert(files.end(), f.begin(), f.end());
      }
  if (heatmaps) {
    const auto f = crsync::export_pair_heatmaps(ds, pair, c, c.output_dir, rate, heatmap_states);
    files.insert(files.end(), f.begin(), f.end());
  }
  for (const auto& f : files) std::printf("%s\n", f.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-recurrence synchronization forecasting for stock pairs"};
  app.set_version_flag("--version", std::string(crsync::kVersion));
  app.require_subcommand(1);

  CommonFlags flags;
  std::string pair_name;
  bool heatmaps = false;
  double heatmap_rate = 0.3;
  std::size_t heatmap_states = 2000;

  auto* ingest = app.add_subcommand("ingest", "align raw CSVs, write cleaned series and drop_report.txt");
  auto* embed = app.add_subcommand("embed-report", "FNN fractions per channel and the common dimension");
  auto* run_pair = app.add_subcommand("run-pair", "run every grid cell for one pair");
  auto* run_grid = app.add_subcommand("run-grid", "run the full grid and write the aggregate tables");
  auto* plots = app.add_subcommand("export-plots", "write plot data for a finished pair");
  for (auto* cmd : {ingest, embed, run_pair, run_grid, plots}) flags.attach(cmd);
  run_pair->add_option("--pair", pair_name, "pair name, e.g. HDFCBANK_UPL")->required();
  plots->add_option("--pair", pair_name, "pair name, e.g. HDFCBANK_UPL")->required();
  plots->add_flag("--heatmaps", heatmaps, "also write distance and recurrence heatmaps (PGM)");
  plots->add_option("--heatmap-rate", heatmap_rate, "recurrence rate for the recurrence heatmap");
  plots->add_option("--heatmap-states", heatmap_states, "leading joint states shown in heatmaps");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = flags.resolve();
    if (*ingest) return cmd_ingest(config);
    if (*embed) return cmd_embed_report(config);
    if (*run_pair) return cmd_run_pair(config, pair_name);
    if (*run_grid) {
      const auto ds = crsync::load_dataset(config);
      return report_manifest(crsync::run_grid(ds, config), config);
    }
    if (*plots) return cmd_export_plots(config, pair_name, heatmaps, heatmap_rate, heatmap_states);
  } catch (const crsync::InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
