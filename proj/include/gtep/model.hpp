#pragma once

#include <span>
#include <vector>

#include "gtep/features.hpp"
#include "gtep/nn.hpp"

namespace gtep {

/// Everything inference needs: network, input statistics and the feature subset.
struct PowerModel {
  Mlp mlp;
  Normalizer normalizer;
  FeatureMode mode = FeatureMode::Full;

  /// Throws std::invalid_argument if dims, normalizer and mode disagree.
  void validate() const;

  /// One-step prediction in mW from raw features.
  double predict(const FeatureVector& raw) const;
  double predict(const FeatureVector& raw, ForwardWorkspace<float>& workspace) const;

  friend bool operator==(const PowerModel&, const PowerModel&) = default;
};

/// Teacher-forced one-step predictions (mW) for every row.
std::vector<double> predict_rows(const PowerModel& model, const SupervisedSet& rows);

}  // namespace gtep
