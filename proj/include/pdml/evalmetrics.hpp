#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pdml/griddata.hpp"

namespace pdml {

// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  std::uint64_t at(Label truth, Label predicted) const {
    return counts_[static_cast<std::size_t>(truth) * k_ + predicted];
  }
  std::uint64_t total() const;

  // Adds one count per pixel. Ground truth must be dense.
  void accumulate(const PseudoMask& predicted, const PseudoMask& ground_truth);
  void add(Label truth, Label predicted, std::uint64_t count = 1);
  void merge(const ConfusionMatrix& other);

  // TP / (TP + FP + FN); nullopt when the class has an empty union.
  std::optional<double> class_iou(Label label) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

// Mean IoU over classes with a non-empty union. Throws on an empty matrix.
double miou(const ConfusionMatrix& cm);
// trace / total. Throws on an empty matrix.
double pixel_accuracy(const ConfusionMatrix& cm);

}  // namespace pdml
