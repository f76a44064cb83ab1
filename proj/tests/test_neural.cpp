#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "crsync/neural/training.hpp"

using namespace crsync;
namespace fs = std::filesystem;

namespace {

std::vector<double> sine_series(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t t = 0; t < n; ++t) v[t] = std::sin(0.2 * static_cast<double>(t));
  return v;
}

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "crsync_neural_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Windows, CountsAndAlignment) {
  std::vector<double> hundred(100);
  for (std::size_t i = 0; i < 100; ++i) hundred[i] = static_cast<double>(i);
  const auto d = make_windows(hundred, 20);
  EXPECT_EQ(d.size(), 80u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d.input(i).back(), hundred[d.target_index[i] - 1]);
    EXPECT_EQ(d.targets[i], hundred[d.target_index[i]]);
  }
  const auto small = make_windows(std::vector<double>{1, 2, 3, 4}, 2);
  EXPECT_EQ(small.inputs, (std::vector<double>{1, 2, 2, 3}));
  EXPECT_EQ(small.targets, (std::vector<double>{3, 4}));
  EXPECT_THROW(make_windows(std::vector<double>(20), 20), DataError);
  EXPECT_EQ(make_windows(hundred, 20, 90).size(), 10u);
}

TEST(Init, Topology) {
  const auto rnn = init_model(standard_architecture(CellKind::rnn), 1);
  EXPECT_EQ(rnn.layer_count(), 3u);
  EXPECT_EQ(rnn.head_input_size(), 50u);
  const auto lstm = init_model(standard_architecture(CellKind::lstm), 1);
  EXPECT_EQ(lstm.layer_count(), 2u);
  EXPECT_EQ(lstm.input_weights(0).rows(), 200);
  EXPECT_EQ(lstm.input_weights(0).cols(), 1);
  EXPECT_EQ(lstm.recurrent_weights(1).cols(), 50);
  // Parameter count: sum over layers of g*h*(in + h + 1), plus h + 1 for the head.
  EXPECT_EQ(lstm.parameter_count(), 4u * 50 * (1 + 50 + 1) + 4u * 50 * (50 + 50 + 1) + 51u);
  EXPECT_EQ(rnn.parameter_count(), 50u * 52 + 2u * 50 * 101 + 51u);
}

TEST(Init, SeededAndBiases) {
  const auto a = init_model(CellKind::lstm, {4, 3}, 99);
  const auto b = init_model(CellKind::lstm, {4, 3}, 99);
  const auto c = init_model(CellKind::lstm, {4, 3}, 100);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    const auto h = static_cast<Eigen::Index>(a.hidden_size(l));
    const auto bias = a.bias(l);
    for (Eigen::Index k = 0; k < bias.size(); ++k) EXPECT_EQ(bias(k), (k / h == kForget) ? 1.0 : 0.0);
  }
  EXPECT_EQ(a.dense_bias(), 0.0);
  const auto r = init_model(CellKind::rnn, {4}, 3);
  EXPECT_TRUE(r.bias(0).isZero());
  EXPECT_FALSE(r.input_weights(0).isZero());
  EXPECT_THROW(init_model(CellKind::rnn, {4, 0}, 1), InvalidArgument);
}

TEST(Forward, ZeroLstmOutputsZero) {
  SequenceModel m(Architecture{CellKind::lstm, {3, 2}, 0.0});
  const std::vector<double> w{0.3, -2.0, 5.0};
  EXPECT_EQ(forward(m, w, false), 0.0);
}

TEST(Forward, SingleUnitRnnIsTanh) {
  SequenceModel m(Architecture{CellKind::rnn, {1}, 0.0});
  m.input_weights(0)(0, 0) = 1.0;
  m.dense_weights()(0, 0) = 1.0;
  const std::vector<double> w{0.5};
  EXPECT_NEAR(forward(m, w, false), 0.46211715726000974, 1e-15);
}

TEST(Forward, InferenceIsDeterministicAndDropoutFreeWhenRateZero) {
  auto m = init_model(CellKind::lstm, {5, 5}, 4, 0.3);
  const auto w = sine_series(12);
  const double a = forward(m, w, false), b = forward(m, w, false);
  EXPECT_EQ(a, b);
  EXPECT_THROW(forward(m, w, true, nullptr), InvalidArgument);
  m.set_dropout_rate(0.0);
  Rng r(1);
  EXPECT_EQ(forward(m, w, true, &r), forward(m, w, false));
}

TEST(Forward, DropoutExpectationMatchesInference) {
  const auto m = init_model(CellKind::lstm, {8, 8}, 21, 0.2);
  const auto w = sine_series(10);
  const double inference = forward(m, w, false);
  Rng r(5);
  double sum = 0.0;
  const int passes = 20000;
  for (int k = 0; k < passes; ++k) sum += forward(m, w, true, &r);
  const double avg = sum / passes;
  EXPECT_LT(std::abs(avg - inference) / std::abs(inference), 0.02) << avg << " vs " << inference;
}

TEST(Forward, NonFiniteOutputSignalsDivergence) {
  auto m = init_model(CellKind::rnn, {2}, 1, 0.0);
  m.dense_bias() = std::nan("");
  EXPECT_THROW(forward(m, std::vector<double>{1.0}, false), DivergenceError);
}

TEST(GradientCheck, DenseOnly) {
  auto m = init_model(CellKind::rnn, {}, 8, 0.0);
  m.dense_bias() = 0.3;
  const auto g = gradient_check(m, std::vector<double>{0.7, -1.3}, 2.0);
  EXPECT_EQ(g.analytic.size(), 2u);
  EXPECT_LT(g.max_relative_error, 1e-8);
}

TEST(GradientCheck, SmallRnnAndLstm) {
  const std::vector<double> window{0.5, -0.2, 0.9, 0.1, -0.7};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto rnn = init_model(CellKind::rnn, {4, 4, 4}, seed, 0.0);
    EXPECT_LT(gradient_check(rnn, window, 0.3).max_relative_error, 1e-4);
    auto lstm = init_model(CellKind::lstm, {4, 4}, seed, 0.0);
    Rng r(seed);
    for (auto& p : lstm.parameters()) p += 0.1 * r.normal();  // move off the zero biases
    EXPECT_LT(gradient_check(lstm, window, -0.4).max_relative_error, 1e-4);
  }
}

TEST(GradientCheck, EmptyParameterSetIsZero) {
  EXPECT_EQ(max_relative_error(std::vector<double>{}, std::vector<double>{}), 0.0);
  EXPECT_EQ(max_relative_error(std::vector<double>{0.0}, std::vector<double>{0.0}), 0.0);
  EXPECT_NEAR(max_relative_error(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 1.0}), 0.5, 1e-15);
}

TEST(GradientCheck, BatchGradientIsMeanOfSampleGradients) {
  const auto m = init_model(CellKind::lstm, {3, 3}, 7, 0.0);
  Matrix x(4, 2);
  x << 0.1, -0.3, 0.4, 0.2, -0.5, 0.9, 0.3, 0.0;
  const std::vector<double> t{0.5, -0.1};
  ForwardCache cache;
  forward_batch(m, x, false, nullptr, &cache);
  std::vector<double> batch(m.parameter_count()), g0(m.parameter_count()), g1(m.parameter_count());
  backward_mse(m, cache, t, batch);
  forward_batch(m, x.col(0), false, nullptr, &cache);
  backward_mse(m, cache, std::vector<double>{t[0]}, g0);
  forward_batch(m, x.col(1), false, nullptr, &cache);
  backward_mse(m, cache, std::vector<double>{t[1]}, g1);
  for (std::size_t k = 0; k < batch.size(); ++k) EXPECT_NEAR(batch[k], 0.5 * (g0[k] + g1[k]), 1e-14);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {3.0, -0.02}) {
    Adam adam(1, 0.01);
    std::vector<double> p{0.0};
    const std::vector<double> grad{g};
    adam.step(p, grad);
    EXPECT_NEAR(p[0], -0.01 * std::copysign(1.0, g), 1e-8);
    EXPECT_EQ(adam.steps(), 1u);
  }
  Adam adam(2, 0.01);
  std::vector<double> p(3);
  EXPECT_THROW(adam.step(p, std::vector<double>(3)), InvalidArgument);
}

TEST(Training, DenseOnlyLearnsLinearMap) {
  auto m = init_model(CellKind::rnn, {}, 2, 0.0);
  WindowDataset d;
  d.window = 1;
  Rng r(3);
  for (int i = 0; i < 64; ++i) {
    const double x = r.uniform(-1.0, 1.0);
    d.inputs.push_back(x);
    d.targets.push_back(2.0 * x);
    d.target_index.push_back(static_cast<std::size_t>(i));
  }
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 200;
  cfg.dropout_rate = 0.0;
  cfg.batch_size = 16;
  const auto trace = train_mse_adam(m, d, cfg);
  EXPECT_EQ(trace.epoch_loss.size(), 200u);
  EXPECT_LT(trace.epoch_loss.back(), 1e-4);
  EXPECT_NEAR(m.dense_weights()(0, 0), 2.0, 1e-2);
}

TEST(Training, EpochBookkeepingAndReproducibility) {
  const auto data = make_windows(sine_series(80), 6);
  TrainConfig cfg;
  cfg.epochs = 0;
  auto m = init_model(CellKind::lstm, {4, 4}, 1);
  EXPECT_THROW(train_mse_adam(m, data, cfg), InvalidArgument);
  cfg.epochs = 1;
  cfg.seed = 77;
  auto a = init_model(CellKind::lstm, {4, 4}, 1);
  auto b = init_model(CellKind::lstm, {4, 4}, 1);
  const auto ta = train_mse_adam(a, data, cfg);
  const auto tb = train_mse_adam(b, data, cfg);
  EXPECT_EQ(ta.epoch_loss.size(), 1u);
  EXPECT_EQ(ta.epoch_loss, tb.epoch_loss);
  EXPECT_EQ(ta.checksum, tb.checksum);
  EXPECT_TRUE(a == b);
}

TEST(Training, LossFallsOnSinusoid) {
  const auto data = make_windows(sine_series(300), 10);
  auto m = init_model(CellKind::lstm, {8, 8}, 5);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.learning_rate = 0.01;
  const auto t = train_mse_adam(m, data, cfg);
  for (double l : t.epoch_loss) {
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
  }
  EXPECT_LT(t.epoch_loss.back(), t.epoch_loss.front());
}

TEST(Training, DivergenceCarriesTrace) {
  auto data = make_windows(sine_series(40), 4);
  data.targets[5] = std::nan("");
  auto m = init_model(CellKind::rnn, {3, 3, 3}, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  try {
    train_mse_adam(m, data, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_TRUE(e.trace.epoch_loss.empty());
  }
}

TEST(Predict, ConstantModelAndDeterminism) {
  SequenceModel m(Architecture{CellKind::lstm, {3, 3}, 0.2});
  m.dense_bias() = 1.25;
  const auto data = make_windows(sine_series(50), 5);
  const auto p = predict_one_step(m, data, 7);
  ASSERT_EQ(p.size(), data.size());
  for (double v : p) EXPECT_EQ(v, 1.25);
  const auto trained = init_model(CellKind::rnn, {4, 4, 4}, 3, 0.2);
  const auto full = predict_one_step(trained, data);
  EXPECT_EQ(full, predict_one_step(trained, data));
  const auto small = predict_one_step(trained, data, 3);
  ASSERT_EQ(small.size(), full.size());
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_NEAR(small[i], full[i], 1e-12);
}

TEST(Persistence, RoundTripIsBitExact) {
  const auto m = init_model(CellKind::lstm, {6, 5}, 12, 0.2);
  const auto p = temp_path("model.bin");
  save_model(m, p);
  const auto back = load_model(p);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back.kind(), CellKind::lstm);
  EXPECT_EQ(back.hidden_sizes(), (std::vector<std::size_t>{6, 5}));
  EXPECT_EQ(back.dropout_rate(), 0.2);
  const auto w = sine_series(9);
  EXPECT_EQ(forward(back, w, false), forward(m, w, false));
}

TEST(Persistence, UnknownVersionAndTruncation) {
  const auto m = init_model(CellKind::rnn, {3, 3, 3}, 2);
  const auto p = temp_path("model2.bin");
  save_model(m, p);
  std::string bytes;
  {
    std::ifstream in(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::string bumped = bytes;
  bumped[8] = 9;  // version field follows the 8-byte magic
  std::ofstream(temp_path("v9.bin"), std::ios::binary) << bumped;
  try {
    load_model(temp_path("v9.bin"));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  std::ofstream(temp_path("short.bin"), std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  try {
    load_model(temp_path("short.bin"));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt"), std::string::npos);
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  std::ofstream(temp_path("flip.bin"), std::ios::binary) << flipped;
  EXPECT_THROW(load_model(temp_path("flip.bin")), IoError);
}
