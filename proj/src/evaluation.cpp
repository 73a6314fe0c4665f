#include "gtep/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "gtep/errors.hpp"
#include "gtep/features.hpp"
#include "gtep/predictor.hpp"
#include "gtep/rng.hpp"

namespace gtep {

namespace {

void check_paired(std::span<const double> pred, std::span<const double> actual, std::size_t min_n,
                  const char* what) {
  if (pred.size() != actual.size()) {
    throw std::invalid_argument(std::string(what) + ": series lengths differ");
  }
  if (pred.size() < min_n) {
    throw std::invalid_argument(std::string(what) + ": need at least " + std::to_string(min_n) +
                                " values");
  }
}

double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double pooled_variance(std::span<const Trial> trials) {
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto& t : trials) {
    for (const auto& s : t.samples) {
      sum += s.power;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("oracle_ceiling: no samples");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& t : trials) {
    for (const auto& s : t.samples) ss += (s.power - mean) * (s.power - mean);
  }
  return ss / static_cast<double>(n);
}

}  // namespace

double r_squared(std::span<const double> pred, std::span<const double> actual) {
  check_paired(pred, actual, 2, "r_squared");
  const double mu = mean_of(actual);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_res += (actual[i] - pred[i]) * (actual[i] - pred[i]);
    ss_tot += (actual[i] - mu) * (actual[i] - mu);
  }
  if (ss_tot == 0.0) throw UndefinedMetric("r_squared: actual series is constant");
  return 1.0 - ss_res / ss_tot;
}

double mae(std::span<const double> pred, std::span<const double> actual) {
  check_paired(pred, actual, 1, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) s += std::abs(pred[i] - actual[i]);
  return s / static_cast<double>(actual.size());
}

double mape(std::span<const double> pred, std::span<const double> actual) {
  check_paired(pred, actual, 1, "mape");
  double s = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] == 0.0) throw UndefinedMetric("mape: actual value is zero");
    s += std::abs((pred[i] - actual[i]) / actual[i]);
  }
  return 100.0 * s / static_cast<double>(actual.size());
}

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile: q must be in [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

ResidualStats residual_stats(std::span<const double> pred, std::span<const double> actual) {
  check_paired(pred, actual, 20, "residual_stats");
  std::vector<double> r(actual.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = actual[i] - pred[i];
  return {mean_of(r), percentile(r, 0.05), percentile(r, 0.95)};
}

double cumulative_energy_error(std::span<const double> pred, std::span<const double> actual, double dt) {
  check_paired(pred, actual, 1, "cumulative_energy_error");
  if (!(dt > 0.0)) throw std::invalid_argument("cumulative_energy_error: dt must be > 0");
  double e_pred = 0.0, e_actual = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    e_pred += pred[i] * dt / 3600.0;
    e_actual += actual[i] * dt / 3600.0;
  }
  if (e_actual == 0.0) throw UndefinedMetric("cumulative_energy_error: actual energy is zero");
  return std::abs(e_pred - e_actual) / e_actual * 100.0;
}

std::vector<double> autocorrelation(std::span<const double> series, std::size_t max_lag) {
  if (max_lag < 1 || series.size() <= max_lag) {
    throw std::invalid_argument("autocorrelation: need length > max_lag >= 1");
  }
  const double mu = mean_of(series);
  double denom = 0.0;
  for (double x : series) denom += (x - mu) * (x - mu);
  if (denom == 0.0) throw UndefinedMetric("autocorrelation: constant series");
  std::vector<double> rho(max_lag + 1);
  rho[0] = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double num = 0.0;
    for (std::size_t t = 0; t + k < series.size(); ++t) num += (series[t] - mu) * (series[t + k] - mu);
    rho[k] = num / denom;
  }
  return rho;
}

namespace {

template <class SeriesFn>
AcfReport acf_over(const Dataset& dataset, std::size_t max_lag, SeriesFn&& series_of) {
  if (dataset.trials.empty()) throw std::invalid_argument("acf_report: empty dataset");
  AcfReport report;
  double sum = 0.0;
  for (const auto& trial : dataset.trials) {
    report.trial_ids.push_back(trial.id);
    report.acf.push_back(autocorrelation(series_of(trial), max_lag));
    sum += report.acf.back()[1];
  }
  report.mean_lag1 = sum / static_cast<double>(dataset.trials.size());
  return report;
}

}  // namespace

AcfReport acf_report(const Dataset& dataset, std::size_t max_lag) {
  return acf_over(dataset, max_lag, [](const Trial& t) { return t.power(); });
}

AcfReport residual_acf_report(const Dataset& dataset, const OracleParams& params, std::size_t max_lag) {
  return acf_over(dataset, max_lag, [&](const Trial& t) {
    const auto commands = t.commands();
    const auto s = steady_state_power(commands, params);
    std::vector<double> r(t.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = t.samples[i].power - s[i];
    return r;
  });
}

double ar1_ceiling(double rho1) {
  if (!(std::abs(rho1) <= 1.0)) throw std::invalid_argument("ar1_ceiling: |rho1| must be <= 1");
  return rho1 * rho1;
}

double oracle_ceiling(std::span<const Trial> trials, const OracleParams& params) {
  const double var = pooled_variance(trials);
  if (var == 0.0) throw UndefinedMetric("oracle_ceiling: power variance is zero");
  return 1.0 - params.noise_std * params.noise_std / var;
}

double oracle_ceiling(const Dataset& dataset, const OracleParams& params) {
  return oracle_ceiling(std::span<const Trial>(dataset.trials), params);
}

EvalReport make_report(std::span<const double> pred, std::span<const double> actual, double dt) {
  check_paired(pred, actual, 2, "make_report");
  EvalReport r;
  r.r2 = r_squared(pred, actual);
  r.mae = mae(pred, actual);
  r.mape = mape(pred, actual);
  if (actual.size() >= 20) {
    const auto rs = residual_stats(pred, actual);
    r.residual_mean = rs.mean;
    r.residual_p5 = rs.p5;
    r.residual_p95 = rs.p95;
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) s += actual[i] - pred[i];
    r.residual_mean = s / static_cast<double>(actual.size());
    r.residual_p5 = r.residual_p95 = std::nan("");
  }
  r.cumulative_energy_error = cumulative_energy_error(pred, actual, dt);
  r.n = actual.size();
  return r;
}

std::string_view eval_mode_name(EvalMode mode) {
  switch (mode) {
    case EvalMode::TeacherForced: return "teacher";
    case EvalMode::Rollout: return "rollout";
    case EvalMode::Corrected: return "corrected";
  }
  throw std::invalid_argument("unknown eval mode");
}

std::optional<EvalMode> parse_eval_mode(std::string_view name) {
  if (name == "teacher") return EvalMode::TeacherForced;
  if (name == "rollout") return EvalMode::Rollout;
  if (name == "corrected") return EvalMode::Corrected;
  return std::nullopt;
}

TrialPredictions predict_trial(const PowerModel& model, const Trial& trial, EvalMode mode) {
  TrialPredictions out;
  if (mode == EvalMode::TeacherForced) {
    const auto rows = build_features(trial);
    out.predicted = predict_rows(model, rows);
    for (const auto& row : rows.rows) {
      out.index.push_back(row.index);
      out.actual.push_back(row.target);
    }
    return out;
  }
  if (trial.size() < kLagCount + 1) {
    throw std::invalid_argument("predict_trial: trial needs at least 6 samples");
  }
  // The predictor needs a model it can share; wrap a non-owning alias.
  Predictor predictor(std::shared_ptr<const PowerModel>(std::shared_ptr<const PowerModel>{}, &model));
  predictor.reset(trial.samples[0].power);
  for (std::size_t t = 0; t < trial.size(); ++t) {
    const auto& s = trial.samples[t];
    const bool warmup = t < kLagCount;
    const double p = (mode == EvalMode::Corrected || warmup) ? predictor.step_corrected(s.v, s.w, s.power)
                                                             : predictor.step(s.v, s.w);
    if (warmup) continue;
    out.index.push_back(t);
    out.predicted.push_back(p);
    out.actual.push_back(s.power);
  }
  return out;
}

EvalReport evaluate_trial(const PowerModel& model, const Trial& trial, EvalMode mode) {
  const auto p = predict_trial(model, trial, mode);
  return make_report(p.predicted, p.actual);
}

std::vector<OracleParams> make_robot_variants(const OracleParams& base, std::size_t count,
                                              std::uint64_t seed, double max_base_scale,
                                              double noise_scale) {
  if (count == 0) throw std::invalid_argument("make_robot_variants: count must be >= 1");
  std::vector<OracleParams> out;
  for (std::size_t i = 0; i < count; ++i) {
    OracleParams p = base;
    const double frac = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    p.base_power = base.base_power * (1.0 + max_base_scale * frac);
    p.noise_std = base.noise_std * noise_scale;
    p.seed = derive_seed(seed, 1000 + i);
    out.push_back(p);
  }
  return out;
}

TransferReport transfer_study(const PowerModel& model, std::span<const OracleParams> robots,
                              Protocol protocol, std::uint64_t seed, std::size_t samples) {
  if (robots.empty()) throw std::invalid_argument("transfer_study: no robots");
  TransferReport report;
  for (std::size_t i = 0; i < robots.size(); ++i) {
    const auto commands = generate_protocol(protocol, samples, derive_seed(seed, 2000 + i));
    const auto power = simulate_power(commands, robots[i]);
    const Trial trial = make_trial(static_cast<int>(i + 1), protocol, commands, power);
    RobotResult r{robots[i], evaluate_trial(model, trial, EvalMode::Corrected), 0.0};
    r.ceiling = oracle_ceiling(std::span<const Trial>(&trial, 1), robots[i]);
    report.robots.push_back(r);
  }
  const double n = static_cast<double>(report.robots.size());
  for (const auto& r : report.robots) {
    report.mean_r2 += r.report.r2 / n;
    report.mean_mae += r.report.mae / n;
  }
  for (const auto& r : report.robots) {
    report.std_r2 += (r.report.r2 - report.mean_r2) * (r.report.r2 - report.mean_r2) / n;
    report.std_mae += (r.report.mae - report.mean_mae) * (r.report.mae - report.mean_mae) / n;
  }
  report.std_r2 = std::sqrt(report.std_r2);
  report.std_mae = std::sqrt(report.std_mae);
  return report;
}

LatencyResult latency_bench(const PowerModel& model, std::size_t n_steps, std::size_t warmup) {
  if (n_steps < 1000) throw std::invalid_argument("latency_bench: n_steps must be >= 1000");
  using clock = std::chrono::steady_clock;
  const auto commands = generate_protocol(Protocol::RandomWalk, n_steps + warmup, 0xbe4c);
  Predictor predictor(std::shared_ptr<const PowerModel>(std::shared_ptr<const PowerModel>{}, &model));
  predictor.reset(3500.0);
  volatile double sink = 0.0;
  for (std::size_t i = 0; i < warmup; ++i) sink = predictor.step(commands[i].v, commands[i].w);

  std::vector<double> us(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const auto& c = commands[warmup + i];
    const auto start = clock::now();
    sink = predictor.step(c.v, c.w);
    const auto stop = clock::now();
    us[i] = std::chrono::duration<double, std::micro>(stop - start).count();
  }
  (void)sink;
  LatencyResult r;
  r.n = n_steps;
  r.mean_us = mean_of(us);
  r.p99_us = percentile(us, 0.99);
  r.steps_per_second = r.mean_us > 0.0 ? 1e6 / r.mean_us : 0.0;
  return r;
}

std::vector<std::size_t> histogram(std::span<const double> values, double lo, double hi,
                                   std::size_t bins) {
  if (bins == 0 || !(hi > lo)) throw std::invalid_argument("histogram: need bins >= 1 and hi > lo");
  std::vector<std::size_t> counts(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((v - lo) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

}  // namespace gtep
