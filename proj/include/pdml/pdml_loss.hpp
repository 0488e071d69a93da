#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "pdml/griddata.hpp"
#include "pdml/toynet.hpp"

namespace pdml {

// Embedding vector of one annotated pixel.
struct EmbeddingPoint {
  std::vector<double> vector;
  Label label = 0;
  int image = -1;
  int row = 0;
  int col = 0;
};

// Embeddings of one image's annotated pixels, in annotation order.
struct EmbeddingSet {
  int image = -1;
  std::vector<EmbeddingPoint> points;
};

struct LossConfig {
  double margin = 20.0;
  double alpha = 0.8;
  double beta = 1.0;

  void validate() const;
};

// Indices of a cross-image triple: the anchor indexes the anchor image's set,
// positive and negative index the other image's set.
struct Triple {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  bool operator==(const Triple&) const = default;
};

EmbeddingSet extract_embeddings(const EmbeddingMap& embedding, const PointAnnotationSet& points,
                                int image_id);

double l2_distance(std::span<const double> a, std::span<const double> b);

// ||a - b||. Throws std::invalid_argument unless both share a class.
double loss_positive(const EmbeddingPoint& a, const EmbeddingPoint& b);

// max(||a - pos|| - ||a - neg|| + margin, 0).
double loss_negative(const EmbeddingPoint& anchor, const EmbeddingPoint& positive,
                     const EmbeddingPoint& negative, double margin);

struct TripleLoss {
  double value = 0.0;
  double positive_term = 0.0;  // L_p
  double negative_term = 0.0;  // L_n
  double dist_positive = 0.0;
  double dist_negative = 0.0;
  std::vector<double> grad_anchor;
  std::vector<double> grad_positive;
  std::vector<double> grad_negative;
};

// alpha * L_p + beta * L_n with gradients on all three vectors. The hinge
// contributes nothing at or below its kink; the norm gradient at coincident
// points is zero.
TripleLoss loss_triple(const EmbeddingPoint& anchor, const EmbeddingPoint& positive,
                       const EmbeddingPoint& negative, const LossConfig& cfg);

// For every anchor of `anchors`, splits `others` into same-class and
// different-class points and pairs them off in order, one positive and one
// negative per triple, until either side runs out. With a shuffle seed the two
// lists are shuffled per anchor before pairing.
std::vector<Triple> form_triples(const EmbeddingSet& anchors, const EmbeddingSet& others,
                                 std::optional<std::uint64_t> shuffle_seed = std::nullopt);

// Cross-image pair distances seen while partitioning E_m per anchor.
struct PairDistances {
  std::vector<double> positive;
  std::vector<double> negative;

  void append(const PairDistances& other);
};

struct SubgroupLoss {
  double total = 0.0;
  double mean = 0.0;  // total / triples, 0 when no triple formed
  std::size_t triples = 0;
  // Gradient of `mean` w.r.t. each point's vector: gradients[set][point][d]
  // flattened per set.
  std::vector<std::vector<double>> gradients;
  PairDistances distances;

  bool has_triples() const { return triples > 0; }
};

// Processes every ordered pair (n, m), n != m, of the subgroup. Throws when the
// subgroup has fewer than two sets or repeats an image id.
SubgroupLoss subgroup_pdml_loss(std::span<const EmbeddingSet> subgroup, const LossConfig& cfg,
                                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;

  double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / counts.size(); }
  std::size_t total() const;
};

struct DistanceHistograms {
  Histogram positive;
  Histogram negative;
  double mean_positive = 0.0;  // NaN when no positive pair
  double mean_negative = 0.0;  // NaN when no negative pair
};

// Both histograms share fixed-width bins over [0, max observed distance].
// Throws when no pair at all was observed.
DistanceHistograms distance_histograms(const PairDistances& distances, int bins);

// CSV rows "epoch,kind,bin_lo,bin_hi,count" (kind is '+' or '-').
void write_histogram_rows(std::ostream& out, int epoch, const DistanceHistograms& h);
// CSV row "epoch,mean_pos,mean_neg".
void write_summary_row(std::ostream& out, int epoch, const DistanceHistograms& h);

}  // namespace pdml
