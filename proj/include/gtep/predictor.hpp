#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>

#include "gtep/features.hpp"
#include "gtep/model.hpp"
#include "gtep/telemetry.hpp"

namespace gtep {

enum class PredictorMode { Rollout, Corrected };

/// Runtime predictor for one robot. The model snapshot is shared and immutable;
/// the lag buffer and previous commands belong to this instance only.
class Predictor {
 public:
  explicit Predictor(std::shared_ptr<const PowerModel> model, double dt = kSampleDt);

  /// Fills the lag buffer with initial_power and zeroes the previous commands.
  void reset(double initial_power);

  /// Rollout: predicts, then feeds the prediction back as the next lag.
  double step(double v, double w);
  /// Corrected: returns the prediction made before seeing `measured_power`,
  /// then feeds the measurement back instead.
  double step_corrected(double v, double w, double measured_power);

  /// Most recent first.
  std::span<const double, kLagCount> lag_buffer() const noexcept { return lags_; }
  /// Raw features the next step would use for (v, w).
  FeatureVector peek_features(double v, double w) const;

  bool is_reset() const noexcept { return reset_; }
  std::size_t step_count() const noexcept { return steps_; }
  PredictorMode mode() const noexcept { return mode_; }
  double dt() const noexcept { return dt_; }
  const PowerModel& model() const noexcept { return *model_; }

 private:
  double predict(double v, double w);
  void push(double value, double v, double w);

  std::shared_ptr<const PowerModel> model_;
  double dt_;
  std::array<double, kLagCount> lags_{};
  double prev_v_ = 0.0;
  double prev_w_ = 0.0;
  std::size_t steps_ = 0;
  bool reset_ = false;
  PredictorMode mode_ = PredictorMode::Rollout;
  ForwardWorkspace<float> workspace_;
};

struct BatteryState {
  double remaining_mwh = 0.0;
};

/// Coulomb counting: remaining -= power * dt / 3600. May go negative.
BatteryState battery_update(BatteryState battery, double power_mw, double dt);

}  // namespace gtep
