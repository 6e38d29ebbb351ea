#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "seqvad/regressor.hpp"
#include "test_util.hpp"

using namespace seqvad;
using testutil::error_kind;

namespace {

KnnRegressor constant_regressor(std::size_t dim, double output_bias) {
  auto layers = KnnRegressor::initialize(dim, std::vector<std::size_t>{4, 3}, 1).layers();
  for (auto& l : layers) std::fill(l.weights.begin(), l.weights.end(), 0.0);
  layers.back().bias[0] = output_bias;
  return KnnRegressor(std::move(layers));
}

TrainingSet random_inputs(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> flat(rows * dim);
  for (auto& v : flat) v = u(rng);
  return TrainingSet(std::move(flat), dim, 1);
}

/// Smooth target: distance to a fixed centre plus a small ripple.
std::vector<double> smooth_targets(const TrainingSet& x) {
  std::vector<double> t;
  for (std::size_t j = 0; j < x.size(); ++j) {
    double s = 0.0;
    for (double v : x.row(j)) s += (v - 0.4) * (v - 0.4);
    t.push_back(std::sqrt(s) + 0.05 * std::sin(7.0 * x.row(j)[0]));
  }
  return t;
}

}  // namespace

TEST(Regressor, ZeroWeightsReturnOutputBias) {
  const auto r = constant_regressor(3, 0.3);
  const double x[] = {0.9, -4.0, 12.0};
  EXPECT_DOUBLE_EQ(r.predict(x), 0.3);
}

TEST(Regressor, NegativeOutputClampsToZero) {
  const auto r = constant_regressor(3, -1.0);
  const double x[] = {0.1, 0.2, 0.3};
  EXPECT_EQ(r.forward(x), -1.0);
  EXPECT_EQ(r.predict(x), 0.0);
}

TEST(Regressor, DimensionMismatch) {
  const auto r = constant_regressor(3, 0.0);
  const double x[] = {0.1, 0.2};
  EXPECT_EQ(error_kind([&] { r.predict(x); }), ErrorKind::dimension_mismatch);
}

TEST(Regressor, DefaultArchitectureIsThreeByTwenty) {
  const auto r = KnnRegressor::initialize(18, RegressorTrainConfig{}.hidden, 0);
  EXPECT_EQ(r.layer_sizes(), (std::vector<std::size_t>{18, 20, 20, 20, 1}));
  EXPECT_EQ(r.parameter_count(), 18u * 20 + 20 + 20 * 20 + 20 + 20 * 20 + 20 + 20 + 1);
}

TEST(Regressor, MalformedLayersAreRejected) {
  EXPECT_EQ(error_kind([] { KnnRegressor(std::vector<DenseLayer>{}); }), ErrorKind::validation);
  EXPECT_EQ(error_kind([] { KnnRegressor({DenseLayer{2, 1, {1.0}, {0.0}}}); }), ErrorKind::validation);
  EXPECT_EQ(error_kind([] { KnnRegressor({DenseLayer{2, 2, {1, 1, 1, 1}, {0, 0}}}); }), ErrorKind::validation);
  EXPECT_EQ(error_kind([] { KnnRegressor({DenseLayer{1, 1, {NAN}, {0.0}}}); }), ErrorKind::numeric);
  auto st = Standardization::identity(1);
  st.input_scale[0] = 0.0;
  EXPECT_EQ(error_kind([&] { KnnRegressor({DenseLayer{1, 1, {1.0}, {0.0}}}, st); }), ErrorKind::validation);
}

TEST(Regressor, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t dim = 2 + trial % 4;
    const auto x = random_inputs(rng, 40, dim);
    const auto targets = smooth_targets(x);
    auto st = fit_standardization(x, targets);
    auto r = KnnRegressor(KnnRegressor::initialize(dim, std::vector<std::size_t>{6, 5, 4}, 100 + trial).layers(), st);
    // Random parameter point, biases included.
    auto params = r.parameters();
    std::normal_distribution<double> g(0.0, 0.5);
    for (auto& p : params) p += 0.1 * g(rng);
    r.set_parameters(params);

    std::vector<std::size_t> rows(x.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const double lambda = trial % 2 == 0 ? 0.0 : 1e-2;
    std::vector<double> grad;
    r.loss_and_gradient(x, targets, rows, lambda, grad);

    auto objective = [&](const std::vector<double>& p) {
      KnnRegressor probe = r;
      probe.set_parameters(p);
      std::vector<double> unused;
      return probe.loss_and_gradient(x, targets, rows, lambda, unused);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double numeric = oracle::central_difference(objective, params, i, 1e-6);
      EXPECT_LE(oracle::relative_error(grad[i], numeric, 1e-6), 1e-4)
          << "trial " << trial << " parameter " << i << " analytic " << grad[i] << " numeric " << numeric;
    }
  }
}

TEST(Regressor, ObjectiveAgreesWithBatchLoss) {
  std::mt19937_64 rng(4);
  const auto x = random_inputs(rng, 64, 3);
  const auto t = smooth_targets(x);
  const auto r = KnnRegressor(KnnRegressor::initialize(3, std::vector<std::size_t>{5}, 9).layers(),
                              fit_standardization(x, t));
  std::vector<std::size_t> rows(x.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::vector<double> grad;
  EXPECT_NEAR(r.loss_and_gradient(x, t, rows, 0.3, grad), r.objective(x, t, 0.3), 1e-12);
}

TEST(Regressor, HugeLambdaDrivesWeightsToZero) {
  std::mt19937_64 rng(21);
  const auto x = random_inputs(rng, 200, 4);
  const auto t = smooth_targets(x);
  RegressorTrainConfig config;
  config.epochs = 20;
  config.learning_rate = 2.5e-7;  // below 1 / lambda, so the weight decay is stable
  const auto res = train_knn_regressor(x, t, 1e6, config, 3);
  EXPECT_LT(res.model.max_abs_weight(), 1e-2);
  const auto& st = res.model.standardization();
  const double bias_prediction = st.output_shift + st.output_scale * res.model.layers().back().bias[0];
  for (std::size_t j = 0; j < x.size(); j += 17) EXPECT_NEAR(res.model.predict(x.row(j)), bias_prediction, 1e-3);
}

TEST(Regressor, ConstantTargetsAreFitByTheBias) {
  std::mt19937_64 rng(22);
  const auto x = random_inputs(rng, 200, 3);
  const std::vector<double> t(x.size(), 0.42);
  RegressorTrainConfig config;
  config.epochs = 2000;
  const auto res = train_knn_regressor(x, t, 0.0, config, 5);
  double mse = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) mse += std::pow(res.model.predict(x.row(j)) - 0.42, 2);
  EXPECT_LT(mse / static_cast<double>(x.size()), 1e-4);
}

TEST(Regressor, TrainingIsDeterministicPerSeed) {
  std::mt19937_64 rng(23);
  const auto x = random_inputs(rng, 120, 3);
  const auto t = smooth_targets(x);
  RegressorTrainConfig config;
  config.epochs = 5;
  const auto a = train_knn_regressor(x, t, 1e-4, config, 77);
  const auto b = train_knn_regressor(x, t, 1e-4, config, 77);
  const auto c = train_knn_regressor(x, t, 1e-4, config, 78);
  EXPECT_EQ(a.model.parameters(), b.model.parameters());
  EXPECT_EQ(a.objective_history, b.objective_history);
  EXPECT_NE(a.model.parameters(), c.model.parameters());
}

TEST(Regressor, TrainingReducesTheObjective) {
  std::mt19937_64 rng(24);
  const auto x = random_inputs(rng, 500, 3);
  const auto t = smooth_targets(x);
  RegressorTrainConfig config;
  config.epochs = 50;
  const auto res = train_knn_regressor(x, t, 1e-5, config, 1);
  ASSERT_EQ(res.objective_history.size(), 51u);
  EXPECT_LT(res.final_objective, 0.1 * res.objective_history.front());
}

// Step size 1e-3 with batch size 32: small enough that the epoch-level
// objective is non-increasing on at least 95% of epochs.
TEST(Regressor, ObjectiveMonotoneUnderSmallStep) {
  std::mt19937_64 rng(25);
  const auto x = random_inputs(rng, 400, 4);
  const auto t = smooth_targets(x);
  RegressorTrainConfig config;
  config.epochs = 100;
  config.learning_rate = 1e-3;
  const auto res = train_knn_regressor(x, t, 1e-5, config, 2);
  std::size_t monotone = 0;
  for (std::size_t i = 1; i < res.objective_history.size(); ++i) {
    monotone += res.objective_history[i] <= res.objective_history[i - 1] ? 1 : 0;
  }
  EXPECT_GE(static_cast<double>(monotone), 0.95 * static_cast<double>(config.epochs));
}

TEST(Regressor, DivergenceNamesTheEpoch) {
  std::mt19937_64 rng(26);
  const auto x = random_inputs(rng, 100, 3);
  const auto t = smooth_targets(x);
  RegressorTrainConfig config;
  config.epochs = 50;
  config.learning_rate = 1e3;
  try {
    train_knn_regressor(x, t, 0.0, config, 1);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(Regressor, InvalidTrainingArguments) {
  std::mt19937_64 rng(27);
  const auto x = random_inputs(rng, 10, 2);
  const std::vector<double> t(10, 1.0);
  EXPECT_EQ(error_kind([&] { train_knn_regressor(x, std::vector<double>(9, 1.0), 0.0, {}, 0); }),
            ErrorKind::dimension_mismatch);
  EXPECT_EQ(error_kind([&] { train_knn_regressor(x, t, -1.0, {}, 0); }), ErrorKind::validation);
  RegressorTrainConfig zero_batch;
  zero_batch.batch_size = 0;
  EXPECT_EQ(error_kind([&] { train_knn_regressor(x, t, 0.0, zero_batch, 0); }), ErrorKind::validation);
}

TEST(Regressor, BinaryAndJsonRoundTrip) {
  std::mt19937_64 rng(28);
  const auto x = random_inputs(rng, 50, 5);
  const auto t = smooth_targets(x);
  RegressorTrainConfig config;
  config.epochs = 2;
  const auto model = train_knn_regressor(x, t, 1e-3, config, 4).model;

  std::stringstream bin(std::ios::in | std::ios::out | std::ios::binary);
  model.write(bin);
  const std::string bytes = bin.str();
  const std::size_t expected_size = 4 + 4 + 4 + 8 * 5 + 8 * (5 + 5 + 2) + 8 * model.parameter_count();
  EXPECT_EQ(bytes.size(), expected_size);
  EXPECT_EQ(bytes.substr(0, 4), "SQVR");
  const auto back = KnnRegressor::read(bin);
  EXPECT_EQ(back, model);
  EXPECT_EQ(KnnRegressor::from_json(model.to_json()), model);

  std::istringstream bad_magic("XXXX");
  EXPECT_EQ(error_kind([&] { KnnRegressor::read(bad_magic); }), ErrorKind::parse);
  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_EQ(error_kind([&] { KnnRegressor::read(truncated); }), ErrorKind::parse);
}
