#include "gtep/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "gtep/errors.hpp"
#include "gtep/evaluation.hpp"
#include "gtep/rng.hpp"

namespace gtep {

namespace {

SupervisedSet rows_for(const std::vector<Trial>& trials) {
  SupervisedSet set;
  for (const auto& trial : trials) set.append(build_features(trial));
  return set;
}

void flatten(const SupervisedSet& rows, const Normalizer& norm, std::vector<float>& x,
             std::vector<float>& y) {
  const std::size_t d = norm.dim();
  x.resize(rows.size() * d);
  y.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    norm.normalize(rows.rows[r].features, std::span<float>(x.data() + r * d, d));
    y[r] = static_cast<float>(norm.normalize_target(rows.rows[r].target));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
  if (patience < 1) throw std::invalid_argument("train: patience must be >= 1");
  DropoutSpec{dropout_p}.validate();
  for (auto h : hidden) {
    if (h == 0) throw std::invalid_argument("train: hidden widths must be >= 1");
  }
}

std::vector<std::size_t> TrainConfig::dims() const {
  std::vector<std::size_t> dims{feature_dim(feature_mode)};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return dims;
}

Split split_dataset(const Dataset& dataset, const SplitSpec& spec) {
  if (spec.train.empty() || spec.val.empty() || spec.test.empty()) {
    throw std::invalid_argument("split: train, val and test must each name at least one trial");
  }
  std::set<int> seen;
  auto collect = [&](const std::vector<int>& ids, std::vector<Trial>& out) {
    for (int id : ids) {
      if (!seen.insert(id).second) {
        throw std::invalid_argument("split: trial " + std::to_string(id) + " assigned twice");
      }
      if (!dataset.has_trial(id)) {
        throw std::invalid_argument("split: dataset has no trial " + std::to_string(id));
      }
      out.push_back(dataset.trial(id));
    }
  };
  Split split;
  collect(spec.train, split.train);
  collect(spec.val, split.val);
  collect(spec.test, split.test);
  return split;
}

PreparedData prepare_data(const std::vector<Trial>& train, const std::vector<Trial>& val,
                          const TrainConfig& config) {
  if (train.empty()) throw std::invalid_argument("train: empty training split");
  if (val.empty()) throw std::invalid_argument("train: empty validation split");
  const auto train_rows = rows_for(train);
  const auto val_rows = rows_for(val);
  PreparedData data;
  data.normalizer = fit_normalizer(train_rows, config.feature_mode, config.lag_norm);
  data.dim = data.normalizer.dim();
  flatten(train_rows, data.normalizer, data.train_x, data.train_y);
  flatten(val_rows, data.normalizer, data.val_x, data.val_y);
  return data;
}

double mse_loss(const Mlp& mlp, std::span<const float> x, std::span<const float> y, std::size_t dim) {
  if (y.empty()) throw std::invalid_argument("mse_loss: no rows");
  ForwardWorkspace<float> ws;
  double sum = 0.0;
  for (std::size_t r = 0; r < y.size(); ++r) {
    const double err = static_cast<double>(mlp.forward(x.subspan(r * dim, dim), ws)) -
                       static_cast<double>(y[r]);
    sum += err * err;
  }
  return sum / static_cast<double>(y.size());
}

TrainedModel train(const std::vector<Trial>& train_trials, const std::vector<Trial>& val_trials,
                   const TrainConfig& config) {
  config.validate();
  const PreparedData data = prepare_data(train_trials, val_trials, config);
  const std::size_t d = data.dim;
  const std::size_t n = data.train_rows();

  Mlp mlp = Mlp::init(config.dims(), derive_seed(config.seed, 1));
  Rng shuffle_rng(config.seed, 2);
  Rng dropout_rng(config.seed, 3);
  const DropoutSpec dropout{config.dropout_p};
  AdamState adam = AdamState::for_model(mlp);
  Gradients grads = Gradients::like(mlp);
  TrainPass<float> pass;

  TrainedModel result;
  result.config = config;
  result.history.push_back({0, mse_loss(mlp, data.train_x, data.train_y, d),
                            mse_loss(mlp, data.val_x, data.val_y, d)});
  Mlp best = mlp;
  double best_val = result.history.back().val_loss;
  std::size_t since_improvement = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(start + config.batch_size, n);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      grads.zero();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t r = order[k];
        forward_train(mlp, std::span<const float>(data.train_x.data() + r * d, d), dropout,
                      dropout_rng, pass);
        const double err = static_cast<double>(pass.prediction) - static_cast<double>(data.train_y[r]);
        batch_loss += err * err;
        backward_accumulate(mlp, pass, 2.0 * err * inv_batch, grads);
      }
      if (!std::isfinite(batch_loss)) throw TrainingDiverged(epoch, batch_index);
      adam_step(mlp, grads, adam, config.lr);
      epoch_loss += batch_loss;
    }

    const double val_loss = mse_loss(mlp, data.val_x, data.val_y, d);
    if (!std::isfinite(val_loss)) throw TrainingDiverged(epoch, batch_index);
    result.history.push_back({epoch, epoch_loss / static_cast<double>(n), val_loss});
    result.stop_epoch = epoch;

    if (val_loss < best_val - config.min_improvement) {
      best_val = val_loss;
      best = mlp;
      result.best_epoch = epoch;
      since_improvement = 0;
    } else if (++since_improvement >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }

  result.model = PowerModel{std::move(best), data.normalizer, config.feature_mode};
  return result;
}

TrainedModel train(const Dataset& dataset, const TrainConfig& config, const SplitSpec& spec) {
  Split split = split_dataset(dataset, spec);
  return train(split.train, split.val, config);
}

std::vector<AblationEntry> ablate(const Dataset& dataset, std::uint64_t seed, const SplitSpec& spec,
                                  TrainConfig base) {
  const Split split = split_dataset(dataset, spec);
  SupervisedSet test_rows;
  for (const auto& trial : split.test) test_rows.append(build_features(trial));
  std::vector<double> actual;
  actual.reserve(test_rows.size());
  for (const auto& row : test_rows.rows) actual.push_back(row.target);

  std::vector<AblationEntry> out;
  for (auto mode : {FeatureMode::Full, FeatureMode::VelocityOnly, FeatureMode::VelocityPlusOneLag}) {
    TrainConfig config = base;
    config.seed = seed;
    config.feature_mode = mode;
    TrainedModel model = train(split.train, split.val, config);
    const double r2 = r_squared(predict_rows(model.model, test_rows), actual);
    out.push_back({mode, r2, std::move(model)});
  }
  return out;
}

}  // namespace gtep
