#include "pdml/pointloss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pdml {

PointCEResult point_cross_entropy(const ScoreMap& scores, const PseudoMask& mask) {
  if (scores.height() != mask.height() || scores.width() != mask.width()) {
    throw std::invalid_argument("point_cross_entropy: score map and mask dimensions differ");
  }
  const int k = scores.num_classes();
  PointCEResult out;
  out.annotated = mask.labeled_count();
  if (out.annotated == 0) {
    throw std::invalid_argument("point_cross_entropy: mask has no annotated pixels");
  }
  out.d_logits = FeatureMap(scores.height(), scores.width(), k);
  const double inv_n = 1.0 / static_cast<double>(out.annotated);
  double sum = 0.0;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      const Label label = mask.at(r, c);
      if (label == kIgnore) continue;
      if (label < 0 || label >= k) {
        throw std::invalid_argument("point_cross_entropy: label out of range");
      }
      const auto p = scores.pixel(r, c);
      sum -= std::log(std::max(p[label], kProbabilityFloor));
      auto g = out.d_logits.pixel(r, c);
      for (int j = 0; j < k; ++j) g[j] = p[j] * inv_n;
      g[label] -= inv_n;
    }
  }
  out.loss = sum * inv_n;
  return out;
}

double dataset_objective(std::span<const ScoreMap> scores, std::span<const PseudoMask> masks) {
  if (scores.empty()) throw std::invalid_argument("dataset_objective: empty dataset");
  if (scores.size() != masks.size()) {
    throw std::invalid_argument("dataset_objective: score/mask count mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    total += point_cross_entropy(scores[i], masks[i]).loss;
  }
  return total / static_cast<double>(scores.size());
}

}  // namespace pdml
