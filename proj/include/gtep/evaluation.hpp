#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <optional>
#include <vector>

#include "gtep/model.hpp"
#include "gtep/telemetry.hpp"

namespace gtep {

// All metrics accumulate in double. Residuals are actual - predicted.

/// 1 - SS_res / SS_tot against the actual series' own mean.
double r_squared(std::span<const double> pred, std::span<const double> actual);
double mae(std::span<const double> pred, std::span<const double> actual);
/// Percent. Throws UndefinedMetric if any actual value is zero.
double mape(std::span<const double> pred, std::span<const double> actual);

struct ResidualStats {
  double mean = 0.0;
  double p5 = 0.0;
  double p95 = 0.0;
};

/// Inclusive linear-interpolation percentile, q in [0, 1].
double percentile(std::span<const double> values, double q);
ResidualStats residual_stats(std::span<const double> pred, std::span<const double> actual);

/// |sum(pred) - sum(actual)| / sum(actual) * 100, with energy = power * dt / 3600 mWh.
double cumulative_energy_error(std::span<const double> pred, std::span<const double> actual, double dt);

/// rho_k = sum_t (x_t - mu)(x_{t+k} - mu) / sum_t (x_t - mu)^2 for k = 0..max_lag.
std::vector<double> autocorrelation(std::span<const double> series, std::size_t max_lag);

struct AcfReport {
  std::vector<int> trial_ids;
  std::vector<std::vector<double>> acf;  // per trial, lags 0..max_lag
  double mean_lag1 = 0.0;
};

AcfReport acf_report(const Dataset& dataset, std::size_t max_lag);
/// ACF of the oracle residual P_t - S_t per trial.
AcfReport residual_acf_report(const Dataset& dataset, const OracleParams& params, std::size_t max_lag);

/// Best one-step R² of a linear predictor on an AR(1) series: rho1^2.
double ar1_ceiling(double rho1);

/// 1 - noise_std^2 / var(P) over the pooled power of `trials`.
double oracle_ceiling(std::span<const Trial> trials, const OracleParams& params);
double oracle_ceiling(const Dataset& dataset, const OracleParams& params);

struct EvalReport {
  double r2 = 0.0;
  double mae = 0.0;                      // mW
  double mape = 0.0;                     // percent
  double residual_mean = 0.0;            // mW
  double residual_p5 = 0.0;              // mW
  double residual_p95 = 0.0;             // mW
  double cumulative_energy_error = 0.0;  // percent
  std::size_t n = 0;
};

EvalReport make_report(std::span<const double> pred, std::span<const double> actual,
                       double dt = kSampleDt);

enum class EvalMode { TeacherForced, Rollout, Corrected };

std::string_view eval_mode_name(EvalMode mode);
/// Accepts "teacher", "rollout", "corrected".
std::optional<EvalMode> parse_eval_mode(std::string_view name);

struct TrialPredictions {
  std::vector<std::size_t> index;  // sample index within the trial
  std::vector<double> predicted;
  std::vector<double> actual;
};

/// Predictions for samples 5..N-1.
///  TeacherForced: batch features with measured lags.
///  Corrected: Predictor::step_corrected over the whole trial.
///  Rollout: step_corrected over samples 0..4, then Predictor::step.
TrialPredictions predict_trial(const PowerModel& model, const Trial& trial, EvalMode mode);
EvalReport evaluate_trial(const PowerModel& model, const Trial& trial, EvalMode mode);

// --- transfer study -----------------------------------------------------

/// `count` robots: base_power scaled linearly over [1, 1 + max_base_scale],
/// noise_std multiplied by noise_scale, rho unchanged, distinct noise seeds.
std::vector<OracleParams> make_robot_variants(const OracleParams& base, std::size_t count,
                                              std::uint64_t seed, double max_base_scale = 0.15,
                                              double noise_scale = 1.2);

struct RobotResult {
  OracleParams params;
  EvalReport report;
  double ceiling = 0.0;
};

struct TransferReport {
  std::vector<RobotResult> robots;
  double mean_r2 = 0.0;
  double std_r2 = 0.0;  // population
  double mean_mae = 0.0;
  double std_mae = 0.0;
};

/// Fresh telemetry per robot (commands seeded from `seed`), evaluated in corrected mode.
TransferReport transfer_study(const PowerModel& model, std::span<const OracleParams> robots,
                              Protocol protocol, std::uint64_t seed,
                              std::size_t samples = kDefaultTrialLength);

// --- latency ------------------------------------------------------------

struct LatencyResult {
  double mean_us = 0.0;
  double p99_us = 0.0;
  double steps_per_second = 0.0;
  std::size_t n = 0;
};

/// Wall-clock cost of Predictor::step on the calling thread after `warmup` steps.
LatencyResult latency_bench(const PowerModel& model, std::size_t n_steps, std::size_t warmup = 1000);

/// Equal-width bin counts over [lo, hi]; values outside are clamped to the end bins.
std::vector<std::size_t> histogram(std::span<const double> values, double lo, double hi,
                                   std::size_t bins);

}  // namespace gtep
