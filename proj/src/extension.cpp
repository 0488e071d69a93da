#include "pdml/extension.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pdml {

CandidateMask score_candidates(const ScoreMap& scores, const ClassSet& classes, double thr,
                               ScoreArgmax mode) {
  if (!std::isfinite(thr) || thr < 0.0) {
    throw std::invalid_argument("score_candidates: threshold must be finite and >= 0");
  }
  CandidateMask out(scores.height(), scores.width());
  if (classes.empty()) return out;
  const int k = scores.num_classes();
  for (int r = 0; r < scores.height(); ++r) {
    for (int c = 0; c < scores.width(); ++c) {
      const auto p = scores.pixel(r, c);
      int best = -1;
      for (int j = 0; j < k; ++j) {
        if (mode == ScoreArgmax::ClassSetOnly && !classes.contains(j)) continue;
        if (best < 0 || p[j] > p[best]) best = j;
      }
      if (best >= 0 && p[best] > thr && classes.contains(best)) out.at(r, c) = best;
    }
  }
  return out;
}

CandidateMask region_candidates(const PointAnnotationSet& points, int height, int width,
                                int radius) {
  if (radius < 0) throw std::invalid_argument("region_candidates: radius must be >= 0");
  constexpr Label kConflict = -1;
  CandidateMask out(height, width);
  for (const auto& p : points.points) {
    if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width) {
      throw std::invalid_argument("region_candidates: point out of bounds");
    }
    for (int r = std::max(0, p.row - radius); r <= std::min(height - 1, p.row + radius); ++r) {
      for (int c = std::max(0, p.col - radius); c <= std::min(width - 1, p.col + radius); ++c) {
        Label& cell = out.at(r, c);
        if (cell == kIgnore) {
          cell = p.label;
        } else if (cell != p.label) {
          cell = kConflict;
        }
      }
    }
  }
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (out.at(r, c) == kConflict) out.at(r, c) = kIgnore;
    }
  }
  return out;
}

CandidateMask extend_labels(const CandidateMask& a, const CandidateMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw std::invalid_argument("extend_labels: dimension mismatch");
  }
  CandidateMask out(a.height(), a.width());
  for (int r = 0; r < a.height(); ++r) {
    for (int c = 0; c < a.width(); ++c) {
      if (a.at(r, c) != kIgnore && a.at(r, c) == b.at(r, c)) out.at(r, c) = a.at(r, c);
    }
  }
  return out;
}

PseudoMask merge_with_points(const CandidateMask& extended, const PointAnnotationSet& points) {
  PseudoMask out = extended;
  for (const auto& p : points.points) {
    if (p.row < 0 || p.row >= out.height() || p.col < 0 || p.col >= out.width()) {
      throw std::invalid_argument("merge_with_points: point out of bounds");
    }
    out.at(p.row, p.col) = p.label;
  }
  return out;
}

double extension_accuracy(const CandidateMask& ext, const PseudoMask& gt) {
  if (ext.height() != gt.height() || ext.width() != gt.width()) {
    throw std::invalid_argument("extension_accuracy: dimension mismatch");
  }
  std::size_t labeled = 0;
  std::size_t correct = 0;
  for (int r = 0; r < ext.height(); ++r) {
    for (int c = 0; c < ext.width(); ++c) {
      if (ext.at(r, c) == kIgnore) continue;
      ++labeled;
      if (ext.at(r, c) == gt.at(r, c)) ++correct;
    }
  }
  if (labeled == 0) throw std::invalid_argument("extension_accuracy: no labeled pixels");
  return static_cast<double>(correct) / static_cast<double>(labeled);
}

CandidateMask kmeans_extension(const EmbeddingMap& emb, const PointAnnotationSet& points,
                               int max_iter, int* iterations_run) {
  if (points.points.empty()) throw std::invalid_argument("kmeans_extension: need >= 1 point");
  const int h = emb.height();
  const int w = emb.width();
  const int d = emb.dim();
  const std::size_t k = points.points.size();
  std::vector<double> centers;
  centers.reserve(k * d);
  for (const auto& p : points.points) {
    if (p.row < 0 || p.row >= h || p.col < 0 || p.col >= w) {
      throw std::invalid_argument("kmeans_extension: point out of bounds");
    }
    const auto v = emb.pixel(p.row, p.col);
    centers.insert(centers.end(), v.begin(), v.end());
  }

  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<std::size_t> assign(n, k);  // k = unassigned
  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = emb.values().data() + i * d;
      std::size_t best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double* cj = centers.data() + j * d;
        double dist = 0.0;
        for (int t = 0; t < d; ++t) {
          const double diff = x[t] - cj[t];
          dist += diff * diff;
        }
        if (dist < best_dist) {
          best_dist = dist;
          best = j;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = emb.values().data() + i * d;
      double* s = sums.data() + assign[i] * d;
      for (int t = 0; t < d; ++t) s[t] += x[t];
      ++counts[assign[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (int t = 0; t < d; ++t) centers[j * d + t] = sums[j * d + t] / counts[j];
    }
  }
  if (iterations_run) *iterations_run = iter;

  CandidateMask out(h, w);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = assign[i] < k ? assign[i] : 0;
    out.at(static_cast<int>(i / w), static_cast<int>(i % w)) = points.points[j].label;
  }
  return out;
}

}  // namespace pdml
