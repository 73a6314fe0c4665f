#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "gtep/telemetry.hpp"

namespace gtep {

inline constexpr std::size_t kFeatureCount = 11;
inline constexpr std::size_t kKinematicFeatureCount = 6;
inline constexpr std::size_t kLagCount = 5;

/// Frozen input ordering. Model files record it implicitly through dims[0].
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "v", "w", "dv", "dw", "abs_v", "abs_w", "p_lag1", "p_lag2", "p_lag3", "p_lag4", "p_lag5"};

/// Raw (un-normalized) features: velocities in m/s and rad/s, derivatives per
/// second, lags in mW with lag 1 the most recent reading.
using FeatureVector = std::array<double, kFeatureCount>;

/// Input subsets are prefixes of the full vector.
enum class FeatureMode : std::uint32_t { Full = 0, VelocityOnly = 1, VelocityPlusOneLag = 2 };

std::size_t feature_dim(FeatureMode mode);
std::string_view feature_mode_name(FeatureMode mode);
/// Accepts "full", "vel", "vel1lag".
std::optional<FeatureMode> parse_feature_mode(std::string_view name);
std::optional<FeatureMode> feature_mode_from_tag(std::uint32_t tag);

/// output[0] = 0, output[t] = (x[t] - x[t-1]) / dt.
std::vector<double> compute_derivatives(std::span<const double> series, double dt);

/// lags[0] is P_{t-1}.
FeatureVector make_feature_vector(double v, double w, double dv, double dw,
                                  std::span<const double, kLagCount> lags);

struct SupervisedRow {
  FeatureVector features;
  double target = 0.0;  // mW
  int trial_id = 0;
  std::size_t index = 0;  // sample index of the target within its trial
};

struct SupervisedSet {
  std::vector<SupervisedRow> rows;
  std::size_t size() const noexcept { return rows.size(); }
  void append(const SupervisedSet& other);
};

/// One row per sample t >= 5 using measured power as the lag inputs.
SupervisedSet build_features(const Trial& trial, double dt = kSampleDt);

enum class LagNorm { PerColumn, Target };

inline constexpr double kStdFloor = 1e-8;

/// z-score statistics, stored at 32-bit precision so the model file round-trips exactly.
struct Normalizer {
  std::vector<float> feature_means;
  std::vector<float> feature_stds;
  float target_mean = 0.0f;
  float target_std = 1.0f;

  std::size_t dim() const noexcept { return feature_means.size(); }

  /// `raw` holds at least dim() leading entries of a FeatureVector.
  void normalize(std::span<const double> raw, std::span<float> out) const;
  double normalize_target(double power_mw) const;
  double denormalize_target(double value) const;

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

/// Population mean/std per column over the first feature_dim(mode) columns.
/// Standard deviations below kStdFloor become 1.
Normalizer fit_normalizer(const SupervisedSet& train_rows, FeatureMode mode,
                          LagNorm lag_norm = LagNorm::PerColumn);

}  // namespace gtep
