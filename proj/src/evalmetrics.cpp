#include "pdml/evalmetrics.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace pdml {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw std::invalid_argument("ConfusionMatrix: need >= 1 class");
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::add(Label truth, Label predicted, std::uint64_t count) {
  if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_) {
    throw std::invalid_argument("ConfusionMatrix: label out of range (" + std::to_string(truth) +
                                ", " + std::to_string(predicted) + ")");
  }
  counts_[static_cast<std::size_t>(truth) * k_ + predicted] += count;
}

void ConfusionMatrix::accumulate(const PseudoMask& predicted, const PseudoMask& truth) {
  if (predicted.height() != truth.height() || predicted.width() != truth.width()) {
    throw std::invalid_argument("ConfusionMatrix::accumulate: dimension mismatch");
  }
  for (std::size_t i = 0; i < truth.labels().size(); ++i) {
    add(truth.labels()[i], predicted.labels()[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::optional<double> ConfusionMatrix::class_iou(Label c) const {
  std::uint64_t row = 0;
  std::uint64_t col = 0;
  for (int j = 0; j < k_; ++j) {
    row += at(c, j);
    col += at(j, c);
  }
  const std::uint64_t tp = at(c, c);
  const std::uint64_t uni = row + col - tp;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

double miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("miou: empty confusion matrix");
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    if (auto iou = cm.class_iou(c)) {
      sum += *iou;
      ++present;
    }
  }
  return sum / present;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("pixel_accuracy: empty confusion matrix");
  std::uint64_t trace = 0;
  for (int c = 0; c < cm.num_classes(); ++c) trace += cm.at(c, c);
  return static_cast<double>(trace) / static_cast<double>(total);
}

}  // namespace pdml
