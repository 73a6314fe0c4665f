#include "gtep/features.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gtep {

namespace {

struct ColumnStats {
  double mean;
  double std;
};

float floored_std(double std) { return static_cast<float>(std < kStdFloor ? 1.0 : std); }

}  // namespace

std::size_t feature_dim(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::Full: return kFeatureCount;
    case FeatureMode::VelocityOnly: return kKinematicFeatureCount;
    case FeatureMode::VelocityPlusOneLag: return kKinematicFeatureCount + 1;
  }
  throw std::invalid_argument("unknown feature mode");
}

std::string_view feature_mode_name(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::Full: return "full";
    case FeatureMode::VelocityOnly: return "vel";
    case FeatureMode::VelocityPlusOneLag: return "vel1lag";
  }
  throw std::invalid_argument("unknown feature mode");
}

std::optional<FeatureMode> parse_feature_mode(std::string_view name) {
  if (name == "full") return FeatureMode::Full;
  if (name == "vel") return FeatureMode::VelocityOnly;
  if (name == "vel1lag") return FeatureMode::VelocityPlusOneLag;
  return std::nullopt;
}

std::optional<FeatureMode> feature_mode_from_tag(std::uint32_t tag) {
  if (tag > 2) return std::nullopt;
  return static_cast<FeatureMode>(tag);
}

std::vector<double> compute_derivatives(std::span<const double> series, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("compute_derivatives: dt must be > 0");
  if (series.empty()) throw std::invalid_argument("compute_derivatives: empty series");
  std::vector<double> out(series.size(), 0.0);
  for (std::size_t t = 1; t < series.size(); ++t) out[t] = (series[t] - series[t - 1]) / dt;
  return out;
}

FeatureVector make_feature_vector(double v, double w, double dv, double dw,
                                  std::span<const double, kLagCount> lags) {
  FeatureVector f{v, w, dv, dw, std::abs(v), std::abs(w)};
  for (std::size_t k = 0; k < kLagCount; ++k) f[kKinematicFeatureCount + k] = lags[k];
  return f;
}

void SupervisedSet::append(const SupervisedSet& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

SupervisedSet build_features(const Trial& trial, double dt) {
  if (trial.size() < kLagCount + 1) {
    throw std::invalid_argument("build_features: trial " + std::to_string(trial.id) + " has " +
                                std::to_string(trial.size()) + " samples, need >= 6");
  }
  std::vector<double> v, w;
  v.reserve(trial.size());
  w.reserve(trial.size());
  for (const auto& s : trial.samples) {
    v.push_back(s.v);
    w.push_back(s.w);
  }
  const auto dv = compute_derivatives(v, dt);
  const auto dw = compute_derivatives(w, dt);

  SupervisedSet set;
  set.rows.reserve(trial.size() - kLagCount);
  std::array<double, kLagCount> lags{};
  for (std::size_t t = kLagCount; t < trial.size(); ++t) {
    for (std::size_t k = 0; k < kLagCount; ++k) lags[k] = trial.samples[t - 1 - k].power;
    set.rows.push_back({make_feature_vector(v[t], w[t], dv[t], dw[t], lags),
                        trial.samples[t].power, trial.id, t});
  }
  return set;
}

void Normalizer::normalize(std::span<const double> raw, std::span<float> out) const {
  const std::size_t d = dim();
  if (raw.size() < d || out.size() < d) throw std::invalid_argument("normalize: dimension mismatch");
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = static_cast<float>((raw[j] - static_cast<double>(feature_means[j])) /
                                static_cast<double>(feature_stds[j]));
  }
}

double Normalizer::normalize_target(double power_mw) const {
  return (power_mw - static_cast<double>(target_mean)) / static_cast<double>(target_std);
}

double Normalizer::denormalize_target(double value) const {
  return value * static_cast<double>(target_std) + static_cast<double>(target_mean);
}

Normalizer fit_normalizer(const SupervisedSet& train_rows, FeatureMode mode, LagNorm lag_norm) {
  const std::size_t n = train_rows.size();
  if (n < 2) throw std::invalid_argument("fit_normalizer: need at least 2 rows");
  const std::size_t d = feature_dim(mode);

  auto column = [&](auto&& get) {
    double sum = 0.0;
    for (const auto& r : train_rows.rows) sum += get(r);
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& r : train_rows.rows) {
      const double x = get(r) - mean;
      ss += x * x;
    }
    return ColumnStats{mean, std::sqrt(ss / static_cast<double>(n))};
  };

  Normalizer norm;
  const auto target = column([](const SupervisedRow& r) { return r.target; });
  norm.target_mean = static_cast<float>(target.mean);
  norm.target_std = floored_std(target.std);
  norm.feature_means.resize(d);
  norm.feature_stds.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    if (j >= kKinematicFeatureCount && lag_norm == LagNorm::Target) {
      norm.feature_means[j] = norm.target_mean;
      norm.feature_stds[j] = norm.target_std;
      continue;
    }
    const auto c = column([j](const SupervisedRow& r) { return r.features[j]; });
    norm.feature_means[j] = static_cast<float>(c.mean);
    norm.feature_stds[j] = floored_std(c.std);
  }
  return norm;
}

}  // namespace gtep
