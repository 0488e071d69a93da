#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pdml/griddata.hpp"

namespace pdml {

// H x W x depth real tensor, depth-interleaved.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int depth)
      : height_(height), width_(width), depth_(depth),
        values_(static_cast<std::size_t>(height) * width * depth, 0.0) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int depth() const { return depth_; }

  double at(int row, int col, int d) const { return values_[offset(row, col) + d]; }
  double& at(int row, int col, int d) { return values_[offset(row, col) + d]; }

  std::span<const double> pixel(int row, int col) const {
    return {values_.data() + offset(row, col), static_cast<std::size_t>(depth_)};
  }
  std::span<double> pixel(int row, int col) {
    return {values_.data() + offset(row, col), static_cast<std::size_t>(depth_)};
  }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t offset(int row, int col) const {
    return (static_cast<std::size_t>(row) * width_ + col) * depth_;
  }

  int height_ = 0;
  int width_ = 0;
  int depth_ = 0;
  std::vector<double> values_;
};

// Output of the feature extractor: one D-vector per pixel.
class EmbeddingMap : public FeatureMap {
 public:
  using FeatureMap::FeatureMap;
  int dim() const { return depth(); }
};

// Per-pixel class probabilities (softmax of the classifier logits).
class ScoreMap : public FeatureMap {
 public:
  using FeatureMap::FeatureMap;
  int num_classes() const { return depth(); }
};

struct NetConfig {
  int channels_in = 3;
  // Output channels of each 3x3 conv layer; the last entry is the embedding
  // dimension D. All layers but the last are followed by ReLU.
  std::vector<int> conv_channels{8, 16, 16};
  int num_classes = 6;
  // Multiplies the init range of the last conv layer and divides that of the
  // classifier, so initial embedding distances can be set to the scale of the
  // metric-learning margin without changing the initial logits.
  double embedding_gain = 1.0;
  std::uint64_t seed = 1;

  int embedding_dim() const { return conv_channels.empty() ? 0 : conv_channels.back(); }
  void validate() const;

  bool operator==(const NetConfig&) const = default;
};

// Offsets of each parameter block inside the flat vector.
//   conv layer l: weights [3][3][in][out] then biases [out]
//   classifier:   weights [D][K] then biases [K]
struct ParamLayout {
  struct Conv {
    int in = 0;
    int out = 0;
    std::size_t weights = 0;
    std::size_t biases = 0;
  };
  std::vector<Conv> conv;
  std::size_t classifier_weights = 0;
  std::size_t classifier_biases = 0;
  std::size_t total = 0;

  explicit ParamLayout(const NetConfig& cfg);
  ParamLayout() = default;

  // Parameters at or after this offset belong to the classifier.
  std::size_t classifier_begin() const { return classifier_weights; }
};

class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(NetConfig cfg, std::vector<double> values);

  const NetConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  std::vector<double> flatten() const { return values_; }
  void restore(std::span<const double> flat);

  std::uint64_t fingerprint() const;

  bool operator==(const ModelParams& o) const {
    return cfg_ == o.cfg_ && values_ == o.values_;
  }

 private:
  NetConfig cfg_;
  ParamLayout layout_;
  std::vector<double> values_;
};

// He-style uniform init U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases zero.
ModelParams init_params(const NetConfig& cfg);

// Activations kept for the backward pass.
struct ForwardCache {
  ImageGrid input;
  // Output of each conv layer (post-ReLU for hidden layers). The last entry is
  // the embedding.
  std::vector<FeatureMap> layers;
  EmbeddingMap embedding;
  ScoreMap scores;
  std::uint64_t params_fingerprint = 0;
  bool valid = false;
};

EmbeddingMap forward_features(const ImageGrid& image, const ModelParams& params,
                              ForwardCache* cache = nullptr);
ScoreMap forward_classifier(const EmbeddingMap& embedding, const ModelParams& params);
ForwardCache forward(const ImageGrid& image, const ModelParams& params);

// Per-pixel argmax of the scores (lowest class id on ties).
PseudoMask predict_labels(const ScoreMap& scores);

// Reverse-mode gradient w.r.t. every parameter. d_logits is the upstream
// gradient on the pre-softmax logits, d_embedding the upstream gradient on the
// embedding map; either may be null. Throws std::logic_error if the cache is
// missing or was produced with different parameter values.
std::vector<double> backward(const ForwardCache& cache, const ModelParams& params,
                             const FeatureMap* d_logits, const FeatureMap* d_embedding);

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central-difference check of `analytic` against `loss` on up to
// `num_samples` randomly chosen coordinates of `point` (all coordinates when
// the vector is shorter). Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport numeric_grad_check(const std::function<double(std::span<const double>)>& loss,
                                   std::span<const double> point,
                                   std::span<const double> analytic, std::size_t num_samples,
                                   double step = 1e-4, std::uint64_t seed = 0,
                                   double floor = 1e-7);

}  // namespace pdml
