#pragma once

#include "pdml/griddata.hpp"
#include "pdml/toynet.hpp"

namespace pdml {

enum class ScoreArgmax {
  // Argmax over all classes, kept only if that class is in the image's set.
  AllClasses,
  // Argmax restricted to the image's class set.
  ClassSetOnly,
};

// Labels pixel u with its argmax class when that probability exceeds `thr`
// and the class belongs to `classes`; all other pixels are kIgnore. An empty
// class set yields an all-kIgnore mask.
CandidateMask score_candidates(const ScoreMap& scores, const ClassSet& classes, double thr,
                               ScoreArgmax mode = ScoreArgmax::AllClasses);

// Each annotated point labels the (2 * radius + 1)^2 square around it, clipped
// to the image. Pixels claimed by squares of different classes become kIgnore.
CandidateMask region_candidates(const PointAnnotationSet& points, int height, int width,
                                int radius = 2);

// Pixel keeps a label only when both masks assign it the same class.
CandidateMask extend_labels(const CandidateMask& score_mask, const CandidateMask& region_mask);

// Overlays `points` on `extended` (points win), so the result always contains
// every original annotation.
PseudoMask merge_with_points(const CandidateMask& extended, const PointAnnotationSet& points);

// Fraction of labeled pixels of `extended` that agree with the dense ground
// truth. Throws when nothing is labeled.
double extension_accuracy(const CandidateMask& extended, const PseudoMask& ground_truth);

// Lloyd's k-means over per-pixel embeddings, one center per annotated point
// initialised at that point's vector. Every pixel receives its final center's
// class. Ties go to the lower center index; an emptied cluster keeps its
// previous center.
CandidateMask kmeans_extension(const EmbeddingMap& embedding, const PointAnnotationSet& points,
                               int max_iter = 300, int* iterations_run = nullptr);

}  // namespace pdml
