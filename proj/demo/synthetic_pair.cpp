// Runs one grid cell on a two-symbol synthetic market and prints the
// forecast and classification metrics.
//
//   crsync_demo [epochs] [output_dir]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "crsync/crsync.hpp"

int main(int argc, char** argv) {
  crsync::ExperimentConfig config;
  config.block_sizes = {20};
  config.time_steps = {20};
  config.model_kinds = {crsync::CellKind::lstm};
  config.recurrence_rates = {0.3};
  config.embedding.forced_dimension = 4;
  if (argc > 1) config.train.epochs = std::strtoul(argv[1], nullptr, 10);
  config.output_dir = argc > 2 ? argv[2] : "demo_output";

  const auto market = crsync::make_synthetic_market({});
  const auto ds = crsync::prepare_dataset(market, config);
  const auto pair = crsync::make_pair_id(ds.symbols[0].symbol, ds.symbols[1].symbol);
  const crsync::CellSpec cell{20, 20, crsync::CellKind::lstm};

  const auto r = crsync::run_pair_experiment(ds, pair, cell, config);
  crsync::write_cell_outputs(r, config.output_dir);

  std::printf("pair %s, cell %s, D=%zu\n", pair.name().c_str(), cell.label().c_str(), r.dimension);
  std::printf("Z length %zu (train %zu), %zu train windows, %zu test predictions\n", r.z_length, r.z_train,
              r.train_samples, r.test_samples);
  std::printf("training: %zu epochs in %.1f s, loss %.5f -> %.5f\n", r.trace.epoch_loss.size(),
              r.trace.seconds, r.trace.epoch_loss.front(), r.trace.epoch_loss.back());
  const auto& g = r.regression;
  std::printf("R2 %.4f  MAPE %.4f (%s)  MAE %.4f  RMSE %.4f\n", g.r_squared, g.mape,
              std::string(crsync::to_string(crsync::mape_category(g.mape))).c_str(), g.mae, g.rmse);
  for (const auto& rr : r.rates)
    std::printf("rate %.2f: eps %.4f  accuracy %.4f  precision %.4f  recall %.4f  F1 %.4f\n",
                rr.threshold.recurrence_rate, rr.threshold.epsilon, rr.report.accuracy, rr.report.precision,
                rr.report.recall, rr.report.f1);
  std::printf("outputs under %s\n", crsync::cell_directory(config.output_dir, pair, cell).string().c_str());
  return 0;
}
