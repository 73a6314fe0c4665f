#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "gtep/errors.hpp"
#include "gtep/model_io.hpp"
#include "gtep/training.hpp"
#include "support.hpp"

using namespace gtep;

namespace {

const Dataset& data() {
  static const Dataset ds = test::small_dataset(21, 600).dataset;
  return ds;
}

TrainConfig quick(std::size_t epochs = 6) {
  TrainConfig c;
  c.max_epochs = epochs;
  c.batch_size = 128;
  return c;
}

}  // namespace

TEST_CASE("default split") {
  const auto s = split_dataset(data());
  REQUIRE(s.train.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(s.train[i].id == i + 1);
  REQUIRE(s.val.size() == 1);
  CHECK(s.val[0].id == 5);
  REQUIRE(s.test.size() == 1);
  CHECK(s.test[0].id == 6);
}

TEST_CASE("split errors and custom mappings") {
  Dataset five = data();
  five.trials.pop_back();
  CHECK_THROWS_AS(split_dataset(five), std::invalid_argument);

  const auto custom = split_dataset(data(), {{1}, {2}, {3}});
  CHECK(custom.train.size() == 1);
  CHECK(custom.val[0].id == 2);
  CHECK(custom.test[0].id == 3);

  CHECK_THROWS_AS(split_dataset(data(), {{1, 2}, {2}, {3}}), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(data(), {{}, {2}, {3}}), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(data(), {{1}, {2}, {}}), std::invalid_argument);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.max_epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(train(data(), c), std::invalid_argument);
  c = {};
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  CHECK(c.dims() == std::vector<std::size_t>{11, 64, 64, 32, 1});
  c.feature_mode = FeatureMode::VelocityOnly;
  CHECK(c.dims().front() == 6);
}

TEST_CASE("empty splits are rejected") {
  const auto s = split_dataset(data());
  CHECK_THROWS_AS(train({}, s.val, quick()), std::invalid_argument);
  CHECK_THROWS_AS(train(s.train, {}, quick()), std::invalid_argument);
}

TEST_CASE("prepared data normalizes with training statistics only") {
  const auto s = split_dataset(data());
  const auto prepared = prepare_data(s.train, s.val, quick());
  SupervisedSet rows;
  for (const auto& t : s.train) rows.append(build_features(t));
  CHECK(prepared.normalizer == fit_normalizer(rows, FeatureMode::Full));
  CHECK(prepared.train_rows() == 4 * 595);
  CHECK(prepared.val_rows() == 595);
  CHECK(prepared.train_x.size() == prepared.train_rows() * 11);
}

TEST_CASE("training history and early stopping") {
  auto config = quick(40);
  config.patience = 3;
  const auto result = train(data(), config);

  REQUIRE(result.history.size() == result.stop_epoch + 1);
  CHECK(result.history.front().epoch == 0);
  double min_val = result.history.front().val_loss;
  std::size_t argmin = 0;
  for (const auto& e : result.history) {
    if (e.val_loss < min_val - config.min_improvement) {
      min_val = e.val_loss;
      argmin = e.epoch;
    }
  }
  CHECK(result.best_epoch == argmin);
  for (const auto& e : result.history) CHECK(e.val_loss >= result.history[result.best_epoch].val_loss - 1e-7);

  // The returned weights are the best epoch's.
  const auto s = split_dataset(data());
  const auto prepared = prepare_data(s.train, s.val, config);
  const double val = mse_loss(result.model.mlp, prepared.val_x, prepared.val_y, prepared.dim);
  CHECK(val == doctest::Approx(result.history[result.best_epoch].val_loss).epsilon(1e-9));

  if (result.stopped_early) {
    CHECK(result.stop_epoch - result.best_epoch == config.patience);
  } else {
    CHECK(result.stop_epoch == config.max_epochs);
  }
  // Training made progress.
  CHECK(result.history[result.best_epoch].train_loss < result.history.front().train_loss);
  CHECK(result.history[result.best_epoch].val_loss < 0.5 * result.history.front().val_loss);
  CHECK(result.model.mlp.param_count() == 7041);
}

TEST_CASE("training is deterministic") {
  const auto a = train(data(), quick(4));
  const auto b = train(data(), quick(4));
  CHECK(a.model == b.model);
  CHECK(serialize_model(a.model) == serialize_model(b.model));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t k = 0; k < a.history.size(); ++k) {
    CHECK(a.history[k].train_loss == b.history[k].train_loss);
    CHECK(a.history[k].val_loss == b.history[k].val_loss);
  }
  auto other = quick(4);
  other.seed = 43;
  CHECK_FALSE(train(data(), other).model == a.model);
}

TEST_CASE("the test trial never influences training") {
  const auto reference = train(data(), quick(3));
  Dataset altered = data();
  for (auto& t : altered.trials) {
    if (t.id != 6) continue;
    for (auto& s : t.samples) s.power *= 1.7;
    std::reverse(t.samples.begin(), t.samples.end());
  }
  CHECK(train(altered, quick(3)).model == reference.model);
  const auto s = split_dataset(data());
  CHECK(train(s.train, s.val, quick(3)).model == reference.model);
}

TEST_CASE("feature modes set the input width") {
  auto c = quick(2);
  c.feature_mode = FeatureMode::VelocityOnly;
  const auto vel = train(data(), c);
  CHECK(vel.model.mlp.input_dim() == 6);
  CHECK(vel.model.normalizer.dim() == 6);
  CHECK(vel.model.mode == FeatureMode::VelocityOnly);
  c.feature_mode = FeatureMode::VelocityPlusOneLag;
  CHECK(train(data(), c).model.mlp.input_dim() == 7);
}

TEST_CASE("divergence is reported") {
  auto c = quick(3);
  c.lr = 1e30;
  try {
    train(data(), c);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch() >= 1);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("ablation trains one deterministic model per mode") {
  const auto a = ablate(data(), 7, {}, quick(3));
  const auto b = ablate(data(), 7, {}, quick(3));
  REQUIRE(a.size() == 3);
  CHECK(a[0].mode == FeatureMode::Full);
  CHECK(a[1].mode == FeatureMode::VelocityOnly);
  CHECK(a[2].mode == FeatureMode::VelocityPlusOneLag);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(a[k].model.model == b[k].model.model);
    CHECK(a[k].test_r2 == b[k].test_r2);
    CHECK(a[k].model.config.seed == 7);
  }
  // Lags carry most of the signal even after a few epochs.
  CHECK(a[0].test_r2 > a[1].test_r2);
}
