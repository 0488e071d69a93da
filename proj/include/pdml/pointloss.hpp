#pragma once

#include <span>
#include <vector>

#include "pdml/griddata.hpp"
#include "pdml/toynet.hpp"

namespace pdml {

inline constexpr double kProbabilityFloor = 1e-12;

struct PointCEResult {
  double loss = 0.0;
  // d loss / d logits: (softmax - onehot) / n_annotated at annotated pixels,
  // zero elsewhere.
  FeatureMap d_logits;
  std::size_t annotated = 0;
};

// Mean negative log-probability of the annotated class over annotated pixels.
// Throws std::invalid_argument when the mask has no annotated pixel or the
// shapes disagree.
PointCEResult point_cross_entropy(const ScoreMap& scores, const PseudoMask& mask);

// Mean of point_cross_entropy over images. Throws on empty input.
double dataset_objective(std::span<const ScoreMap> scores, std::span<const PseudoMask> masks);

}  // namespace pdml
