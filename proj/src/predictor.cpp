#include "gtep/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gtep/errors.hpp"

namespace gtep {

// --- PowerModel -----------------------------------------------------------

void PowerModel::validate() const {
  const std::size_t d = feature_dim(mode);
  if (mlp.input_dim() != d) {
    throw std::invalid_argument("model input dim " + std::to_string(mlp.input_dim()) +
                                " does not match feature mode '" +
                                std::string(feature_mode_name(mode)) + "'");
  }
  if (normalizer.feature_means.size() != d || normalizer.feature_stds.size() != d) {
    throw std::invalid_argument("normalizer dimension does not match model input");
  }
}

double PowerModel::predict(const FeatureVector& raw, ForwardWorkspace<float>& workspace) const {
  std::array<float, kFeatureCount> input{};
  const std::size_t d = normalizer.dim();
  normalizer.normalize(raw, std::span<float>(input.data(), d));
  const float y = mlp.forward(std::span<const float>(input.data(), d), workspace);
  return normalizer.denormalize_target(static_cast<double>(y));
}

double PowerModel::predict(const FeatureVector& raw) const {
  ForwardWorkspace<float> workspace;
  return predict(raw, workspace);
}

std::vector<double> predict_rows(const PowerModel& model, const SupervisedSet& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  ForwardWorkspace<float> workspace;
  for (const auto& row : rows.rows) out.push_back(model.predict(row.features, workspace));
  return out;
}

// --- Predictor ------------------------------------------------------------

Predictor::Predictor(std::shared_ptr<const PowerModel> model, double dt)
    : model_(std::move(model)), dt_(dt) {
  if (!model_) throw std::invalid_argument("Predictor: null model");
  if (!(dt_ > 0.0)) throw std::invalid_argument("Predictor: dt must be > 0");
  model_->validate();
}

void Predictor::reset(double initial_power) {
  if (!(initial_power > 0.0) || !std::isfinite(initial_power)) {
    throw std::invalid_argument("Predictor::reset: initial power must be > 0");
  }
  lags_.fill(initial_power);
  prev_v_ = 0.0;
  prev_w_ = 0.0;
  steps_ = 0;
  reset_ = true;
}

FeatureVector Predictor::peek_features(double v, double w) const {
  return make_feature_vector(v, w, (v - prev_v_) / dt_, (w - prev_w_) / dt_, lags_);
}

double Predictor::predict(double v, double w) {
  if (!reset_) throw InvalidState("Predictor: call reset() before stepping");
  if (!std::isfinite(v) || !std::isfinite(w)) {
    throw std::invalid_argument("Predictor: velocities must be finite");
  }
  return model_->predict(peek_features(v, w), workspace_);
}

void Predictor::push(double value, double v, double w) {
  std::copy_backward(lags_.begin(), lags_.end() - 1, lags_.end());
  lags_[0] = value;
  prev_v_ = v;
  prev_w_ = w;
  ++steps_;
}

double Predictor::step(double v, double w) {
  const double p = predict(v, w);
  mode_ = PredictorMode::Rollout;
  push(p, v, w);
  return p;
}

double Predictor::step_corrected(double v, double w, double measured_power) {
  if (!(measured_power > 0.0) || !std::isfinite(measured_power)) {
    throw std::invalid_argument("Predictor::step_corrected: measured power must be > 0");
  }
  const double p = predict(v, w);
  mode_ = PredictorMode::Corrected;
  push(measured_power, v, w);
  return p;
}

BatteryState battery_update(BatteryState battery, double power_mw, double dt) {
  if (!(power_mw >= 0.0)) throw std::invalid_argument("battery_update: power must be >= 0");
  if (!(dt > 0.0)) throw std::invalid_argument("battery_update: dt must be > 0");
  battery.remaining_mwh -= power_mw * dt / 3600.0;
  return battery;
}

}  // namespace gtep
