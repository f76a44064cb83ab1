#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "crsync/core.hpp"
#include "crsync/eval.hpp"

using namespace crsync;

TEST(Regression, PerfectPrediction) {
  const std::vector<double> y{1, 2, 3};
  const auto r = regression_report(y, y);
  EXPECT_EQ(r.r_squared, 1.0);
  EXPECT_EQ(r.mape, 0.0);
  EXPECT_EQ(r.mae, 0.0);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.count, 3u);
}

TEST(Regression, HandWorkedExample) {
  const auto r = regression_report(std::vector<double>{1, 2, 3}, std::vector<double>{2, 2, 2});
  EXPECT_NEAR(r.r_squared, 0.0, 1e-12);
  EXPECT_NEAR(r.mae, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.rmse, std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(r.mape, (1.0 + 0.0 + 1.0 / 3.0) / 3.0, 1e-12);
  EXPECT_NEAR(regression_report(std::vector<double>{1, 2}, std::vector<double>{1.1, 1.8}).mape, 0.1, 1e-12);
}

TEST(Regression, ZeroActualsExcludedFromMape) {
  const auto r = regression_report(std::vector<double>{0.0, 2.0, 4.0}, std::vector<double>{1.0, 1.0, 4.0});
  EXPECT_EQ(r.mape_excluded, 1u);
  EXPECT_NEAR(r.mape, 0.25, 1e-15);
}

TEST(Regression, Errors) {
  EXPECT_THROW(regression_report(std::vector<double>{1, 2}, std::vector<double>{1}), InvalidArgument);
  EXPECT_THROW(regression_report(std::vector<double>{}, std::vector<double>{}), InvalidArgument);
  EXPECT_THROW(regression_report(std::vector<double>{2, 2}, std::vector<double>{1, 3}), DataError);
}

TEST(Regression, FuzzedProperties) {
  Rng r(31);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + r.below(50);
    std::vector<double> y(n), p(n), mean_pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = 5.0 * r.normal();
      p[i] = y[i] + r.normal();
    }
    const auto rep = regression_report(y, p);
    EXPECT_LE(rep.mae, rep.rmse * (1.0 + 1e-15));
    EXPECT_LE(rep.r_squared, 1.0);
    EXPECT_GE(rep.mape, 0.0);
    // Mean predictor has R^2 exactly 0.
    std::fill(mean_pred.begin(), mean_pred.end(), mean(y));
    EXPECT_NEAR(regression_report(y, mean_pred).r_squared, 0.0, 1e-12);
    // Affine rescaling of both sides leaves R^2 unchanged.
    const double a = 0.1 + 10.0 * r.uniform(), b = 10.0 * r.normal();
    std::vector<double> ys(n), ps(n);
    for (std::size_t i = 0; i < n; ++i) {
      ys[i] = a * y[i] + b;
      ps[i] = a * p[i] + b;
    }
    EXPECT_NEAR(regression_report(ys, ps).r_squared, rep.r_squared, 1e-9);
  }
}

TEST(MapeCategory, HalfOpenCutoffs) {
  EXPECT_EQ(mape_category(0.0), MapeCategory::highly_accurate);
  EXPECT_EQ(mape_category(0.05), MapeCategory::highly_accurate);
  EXPECT_EQ(mape_category(0.1), MapeCategory::good);
  EXPECT_EQ(mape_category(0.2), MapeCategory::reasonable);
  EXPECT_EQ(mape_category(0.4999), MapeCategory::reasonable);
  EXPECT_EQ(mape_category(0.5), MapeCategory::inaccurate);
  EXPECT_THROW(mape_category(-0.01), InvalidArgument);
}

TEST(ThresholdLabels, Examples) {
  const ThresholdSpec eps2{0.3, 2.0, 0.5};
  EXPECT_EQ(threshold_labels(std::vector<double>{1, 2, 3, 4}, eps2), (std::vector<std::uint8_t>{1, 1, 0, 0}));
  EXPECT_EQ(threshold_labels(std::vector<double>{2.0}, eps2), (std::vector<std::uint8_t>{1}));
  const auto none = threshold_labels(std::vector<double>{3, 4}, eps2);
  EXPECT_EQ(classification_report(none, none).class1_fraction, 0.0);
  EXPECT_THROW(threshold_labels(std::vector<double>{1}, ThresholdSpec{0.3, -1.0, 0.0}), InvalidArgument);
}

TEST(ThresholdLabels, MonotoneInEpsilon) {
  Rng r(4);
  std::vector<double> z(200);
  for (auto& v : z) v = r.uniform() * 3.0;
  auto prev = threshold_labels(z, {0.2, 0.0, 0.0});
  for (double e = 0.1; e < 3.5; e += 0.1) {
    const auto cur = threshold_labels(z, {0.2, e, 0.0});
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_GE(cur[i], prev[i]);
    prev = cur;
  }
}

TEST(Classification, HandConfusionMatrix) {
  // TP=1, TN=2, FP=1, FN=0
  const std::vector<std::uint8_t> truth{1, 0, 0, 0}, pred{1, 0, 0, 1};
  const auto c = classification_report(truth, pred);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.tn, 2u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 0u);
  EXPECT_NEAR(c.accuracy, 0.75, 1e-12);
  EXPECT_NEAR(c.precision, 0.5, 1e-12);
  EXPECT_NEAR(c.recall, 1.0, 1e-12);
  EXPECT_NEAR(c.f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(c.class1_fraction, 0.25, 1e-12);
}

TEST(Classification, PerfectAndDegenerate) {
  const std::vector<std::uint8_t> both{1, 0, 1, 0};
  const auto p = classification_report(both, both);
  EXPECT_EQ(p.accuracy, 1.0);
  EXPECT_EQ(p.precision, 1.0);
  EXPECT_EQ(p.recall, 1.0);
  EXPECT_EQ(p.f1, 1.0);
  const std::vector<std::uint8_t> zeros{0, 0, 0};
  const auto z = classification_report(zeros, zeros);
  EXPECT_EQ(z.precision, 0.0);
  EXPECT_EQ(z.recall, 0.0);
  EXPECT_EQ(z.f1, 0.0);
  EXPECT_EQ(z.accuracy, 1.0);
  EXPECT_THROW(classification_report(zeros, both), InvalidArgument);
  EXPECT_THROW(classification_report(std::vector<std::uint8_t>{2}, std::vector<std::uint8_t>{1}),
               InvalidArgument);
}

TEST(Classification, FuzzedIdentities) {
  Rng r(8);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::uint8_t> t(1 + r.below(40)), p(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<std::uint8_t>(r.below(2));
      p[i] = static_cast<std::uint8_t>(r.below(2));
    }
    const auto c = classification_report(t, p);
    EXPECT_EQ(c.accuracy, static_cast<double>(c.tp + c.tn) / static_cast<double>(t.size()));
    for (double v : {c.accuracy, c.precision, c.recall, c.f1, c.class1_fraction}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    if (c.precision > 0.0 && c.recall > 0.0) {
      EXPECT_GE(c.f1, std::min(c.precision, c.recall) - 1e-15);
      EXPECT_LE(c.f1, std::max(c.precision, c.recall) + 1e-15);
    }
  }
}

TEST(Aggregate, HandExamples) {
  const auto s = aggregate_stats(std::vector<double>{3, 1, 2});
  EXPECT_EQ(s.mean, 2.0);
  EXPECT_EQ(s.std, 1.0);
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 3.0);
  EXPECT_EQ(s.median, 2.0);
  const auto one = aggregate_stats(std::vector<double>{4.5});
  EXPECT_EQ(one.mean, 4.5);
  EXPECT_EQ(one.std, 0.0);
  EXPECT_EQ(one.median, 4.5);
  EXPECT_EQ(aggregate_stats(std::vector<double>{4, 1, 3, 2}).median, 2.5);
  EXPECT_THROW(aggregate_stats(std::vector<double>{}), InvalidArgument);
}

TEST(Aggregate, MedianBetweenExtremes) {
  Rng r(2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + r.below(30));
    for (auto& x : v) x = r.normal();
    const auto s = aggregate_stats(v);
    EXPECT_LE(s.min, s.median);
    EXPECT_LE(s.median, s.max);
  }
}

TEST(CoefficientOfVariation, Examples) {
  EXPECT_EQ(coefficient_of_variation(2.0, 1.0), 0.5);
  EXPECT_EQ(coefficient_of_variation(3.0, 0.0), 0.0);
  EXPECT_NEAR(coefficient_of_variation(0.98, 0.02), 0.0204, 1e-4);
  EXPECT_THROW(coefficient_of_variation(0.0, 1.0), InvalidArgument);
}

TEST(FractionalRanks, TiesShareAveragePosition) {
  EXPECT_EQ(fractional_ranks(std::vector<double>{0.3, 0.1, 0.3, 0.2}), (std::vector<double>{3.5, 1, 3.5, 2}));
  EXPECT_EQ(fractional_ranks(std::vector<double>{5, 5, 5}), (std::vector<double>{2, 2, 2}));
  EXPECT_EQ(fractional_ranks(std::vector<double>{std::nan(""), 1.0}), (std::vector<double>{2, 1}));
}

TEST(CvRanking, SingletonAndIdenticalRows) {
  const auto one = rank_configurations_by_cv({{"a", "b"}, {{"only", {0.1, 0.2}}}});
  ASSERT_EQ(one.rows.size(), 1u);
  EXPECT_EQ(one.rows[0].average_rank, 1.0);
  const auto twin = rank_configurations_by_cv({{"a"}, {{"x", {0.5}}, {"y", {0.5}}, {"z", {0.1}}}});
  EXPECT_EQ(twin.rows[0].label, "z");
  EXPECT_EQ(twin.rows[1].average_rank, twin.rows[2].average_rank);
  EXPECT_EQ(twin.rows[1].average_rank, 2.5);
  EXPECT_THROW(rank_configurations_by_cv({{"a", "b"}, {{"x", {0.1}}}}), InvalidArgument);
}

TEST(CvRanking, PermutationInvariant) {
  Rng r(10);
  CvTable t{{"m1", "m2", "m3"}, {}};
  for (int i = 0; i < 12; ++i)
    t.rows.push_back({"cfg" + std::to_string(i),
                      {static_cast<double>(r.below(5)) / 10.0, r.uniform(), static_cast<double>(r.below(3))}});
  const auto base = rank_configurations_by_cv(t);
  for (int k = 0; k < 20; ++k) {
    shuffle(t.rows, r);
    const auto again = rank_configurations_by_cv(t);
    ASSERT_EQ(again.rows.size(), base.rows.size());
    for (std::size_t i = 0; i < base.rows.size(); ++i) {
      EXPECT_EQ(again.rows[i].label, base.rows[i].label);
      EXPECT_EQ(again.rows[i].ranks, base.rows[i].ranks);
      EXPECT_EQ(again.rows[i].average_rank, base.rows[i].average_rank);
    }
  }
}

TEST(CvRanking, ReferenceCvTableWithAverageTies) {
  // CV columns (R^2, MAPE, MAE, RMSE) as printed to two decimals. Under the
  // average-rank tie rule the lstm b20/w20 row still sorts first, at 2.125.
  const CvTable t{{"r_squared", "mape", "mae", "rmse"},
                  {{"b20_w20_lstm", {0.02, 0.48, 0.58, 0.5}},  {"b1_w20_lstm", {0.13, 0.61, 0.54, 0.46}},
                   {"b10_w50_lstm", {0.03, 0.57, 0.64, 0.54}}, {"b30_w20_lstm", {0.02, 0.51, 0.69, 0.62}},
                   {"b10_w20_rnn", {0.03, 0.65, 0.67, 0.55}},  {"b20_w20_rnn", {0.03, 0.58, 0.72, 0.63}},
                   {"b1_w50_lstm", {0.17, 0.65, 0.62, 0.48}},  {"b1_w20_rnn", {0.16, 0.75, 0.62, 0.49}},
                   {"b10_w20_lstm", {0.05, 0.61, 0.68, 0.55}}, {"b30_w50_rnn", {0.03, 0.59, 0.73, 0.66}},
                   {"b10_w50_rnn", {0.04, 0.63, 0.68, 0.57}},  {"b20_w50_rnn", {0.03, 0.66, 0.72, 0.63}},
                   {"b30_w20_rnn", {0.03, 0.59, 0.79, 0.72}},  {"b1_w50_rnn", {0.19, 0.76, 0.71, 0.53}},
                   {"b20_w50_lstm", {0.04, 0.71, 0.88, 0.78}}, {"b30_w50_lstm", {0.04, 0.79, 1.15, 1.02}}}};
  const auto r = rank_configurations_by_cv(t);
  EXPECT_EQ(r.rows.front().label, "b20_w20_lstm");
  EXPECT_EQ(r.rows.front().average_rank, 2.125);
  EXPECT_EQ(r.rows.front().ranks, (std::vector<double>{1.5, 1, 2, 4}));
  EXPECT_EQ(r.rows.back().label, "b30_w50_lstm");
}
