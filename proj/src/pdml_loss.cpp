#include "pdml/pdml_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace pdml {

void LossConfig::validate() const {
  if (!(margin > 0.0)) throw std::invalid_argument("LossConfig: margin must be > 0");
  if (!(alpha >= 0.0)) throw std::invalid_argument("LossConfig: alpha must be >= 0");
  if (!(beta >= 0.0)) throw std::invalid_argument("LossConfig: beta must be >= 0");
}

EmbeddingSet extract_embeddings(const EmbeddingMap& emb, const PointAnnotationSet& points,
                                int image_id) {
  EmbeddingSet out;
  out.image = image_id;
  out.points.reserve(points.points.size());
  for (const auto& p : points.points) {
    if (p.row < 0 || p.row >= emb.height() || p.col < 0 || p.col >= emb.width()) {
      throw std::invalid_argument("extract_embeddings: point (" + std::to_string(p.row) + ", " +
                                  std::to_string(p.col) + ") out of bounds");
    }
    const auto v = emb.pixel(p.row, p.col);
    out.points.push_back({{v.begin(), v.end()}, p.label, image_id, p.row, p.col});
  }
  return out;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("l2_distance: dimension mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

double loss_positive(const EmbeddingPoint& a, const EmbeddingPoint& b) {
  if (a.label != b.label) throw std::invalid_argument("loss_positive: class mismatch");
  return l2_distance(a.vector, b.vector);
}

namespace {

void check_triple(const EmbeddingPoint& anchor, const EmbeddingPoint& positive,
                  const EmbeddingPoint& negative) {
  if (anchor.label != positive.label || anchor.label == negative.label) {
    throw std::invalid_argument("triple requires class(anchor) = class(positive) != class(negative)");
  }
}

// (a - b) / ||a - b||, zero when the points coincide.
std::vector<double> unit_difference(std::span<const double> a, std::span<const double> b,
                                    double norm) {
  std::vector<double> u(a.size(), 0.0);
  if (norm > 0.0) {
    for (std::size_t i = 0; i < a.size(); ++i) u[i] = (a[i] - b[i]) / norm;
  }
  return u;
}

}  // namespace

double loss_negative(const EmbeddingPoint& anchor, const EmbeddingPoint& positive,
                     const EmbeddingPoint& negative, double margin) {
  check_triple(anchor, positive, negative);
  const double dp = l2_distance(anchor.vector, positive.vector);
  const double dn = l2_distance(anchor.vector, negative.vector);
  return std::max(dp - dn + margin, 0.0);
}

TripleLoss loss_triple(const EmbeddingPoint& anchor, const EmbeddingPoint& positive,
                       const EmbeddingPoint& negative, const LossConfig& cfg) {
  check_triple(anchor, positive, negative);
  const std::size_t d = anchor.vector.size();
  if (positive.vector.size() != d || negative.vector.size() != d) {
    throw std::invalid_argument("loss_triple: dimension mismatch");
  }
  TripleLoss out;
  out.dist_positive = l2_distance(anchor.vector, positive.vector);
  out.dist_negative = l2_distance(anchor.vector, negative.vector);
  out.positive_term = out.dist_positive;
  const double hinge = out.dist_positive - out.dist_negative + cfg.margin;
  out.negative_term = hinge > 0.0 ? hinge : 0.0;
  out.value = cfg.alpha * out.positive_term + cfg.beta * out.negative_term;

  const auto u_pos = unit_difference(anchor.vector, positive.vector, out.dist_positive);
  const auto u_neg = unit_difference(anchor.vector, negative.vector, out.dist_negative);
  const double pos_weight = cfg.alpha + (hinge > 0.0 ? cfg.beta : 0.0);
  const double neg_weight = hinge > 0.0 ? cfg.beta : 0.0;
  out.grad_anchor.resize(d);
  out.grad_positive.resize(d);
  out.grad_negative.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    out.grad_anchor[i] = pos_weight * u_pos[i] - neg_weight * u_neg[i];
    out.grad_positive[i] = -pos_weight * u_pos[i];
    out.grad_negative[i] = neg_weight * u_neg[i];
  }
  return out;
}

std::vector<Triple> form_triples(const EmbeddingSet& anchors, const EmbeddingSet& others,
                                 std::optional<std::uint64_t> shuffle_seed) {
  std::vector<Triple> out;
  std::optional<std::mt19937_64> rng;
  if (shuffle_seed) rng.emplace(*shuffle_seed);
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t a = 0; a < anchors.points.size(); ++a) {
    pos.clear();
    neg.clear();
    for (std::size_t j = 0; j < others.points.size(); ++j) {
      (others.points[j].label == anchors.points[a].label ? pos : neg).push_back(j);
    }
    if (rng) {
      std::shuffle(pos.begin(), pos.end(), *rng);
      std::shuffle(neg.begin(), neg.end(), *rng);
    }
    const std::size_t n = std::min(pos.size(), neg.size());
    for (std::size_t t = 0; t < n; ++t) out.push_back({a, pos[t], neg[t]});
  }
  return out;
}

void PairDistances::append(const PairDistances& other) {
  positive.insert(positive.end(), other.positive.begin(), other.positive.end());
  negative.insert(negative.end(), other.negative.begin(), other.negative.end());
}

SubgroupLoss subgroup_pdml_loss(std::span<const EmbeddingSet> subgroup, const LossConfig& cfg,
                                std::optional<std::uint64_t> shuffle_seed) {
  cfg.validate();
  if (subgroup.size() < 2) throw std::invalid_argument("subgroup_pdml_loss: need >= 2 images");
  std::set<int> ids;
  for (const auto& s : subgroup) {
    if (!ids.insert(s.image).second) {
      throw std::invalid_argument("subgroup_pdml_loss: repeated image id " + std::to_string(s.image));
    }
  }

  SubgroupLoss out;
  out.gradients.resize(subgroup.size());
  for (std::size_t s = 0; s < subgroup.size(); ++s) {
    std::size_t dim = subgroup[s].points.empty() ? 0 : subgroup[s].points.front().vector.size();
    out.gradients[s].assign(subgroup[s].points.size() * dim, 0.0);
  }

  std::uint64_t pair_index = 0;
  for (std::size_t n = 0; n < subgroup.size(); ++n) {
    for (std::size_t m = 0; m < subgroup.size(); ++m) {
      if (n == m) continue;
      const auto& en = subgroup[n];
      const auto& em = subgroup[m];
      for (const auto& a : en.points) {
        for (const auto& b : em.points) {
          (a.label == b.label ? out.distances.positive : out.distances.negative)
              .push_back(l2_distance(a.vector, b.vector));
        }
      }
      std::optional<std::uint64_t> seed;
      if (shuffle_seed) seed = *shuffle_seed + 0x9E3779B97F4A7C15ULL * ++pair_index;
      for (const auto& t : form_triples(en, em, seed)) {
        const auto& anchor = en.points[t.anchor];
        const auto& positive = em.points[t.positive];
        const auto& negative = em.points[t.negative];
        const auto loss = loss_triple(anchor, positive, negative, cfg);
        out.total += loss.value;
        ++out.triples;
        const std::size_t d = anchor.vector.size();
        auto* ga = out.gradients[n].data() + t.anchor * d;
        auto* gp = out.gradients[m].data() + t.positive * d;
        auto* gn = out.gradients[m].data() + t.negative * d;
        for (std::size_t i = 0; i < d; ++i) {
          ga[i] += loss.grad_anchor[i];
          gp[i] += loss.grad_positive[i];
          gn[i] += loss.grad_negative[i];
        }
      }
    }
  }
  if (out.triples > 0) {
    const double inv = 1.0 / static_cast<double>(out.triples);
    out.mean = out.total * inv;
    for (auto& g : out.gradients) {
      for (double& v : g) v *= inv;
    }
  }
  return out;
}

std::size_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

namespace {

Histogram bin_values(const std::vector<double>& values, double hi, int bins) {
  Histogram h{0.0, hi, std::vector<std::size_t>(static_cast<std::size_t>(bins), 0)};
  const double width = h.bin_width();
  for (double v : values) {
    auto b = static_cast<std::size_t>(v / width);
    h.counts[std::min(b, h.counts.size() - 1)] += 1;
  }
  return h;
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace

DistanceHistograms distance_histograms(const PairDistances& distances, int bins) {
  if (bins < 1) throw std::invalid_argument("distance_histograms: bins must be >= 1");
  if (distances.positive.empty() && distances.negative.empty()) {
    throw std::invalid_argument("distance_histograms: no pairs observed");
  }
  double hi = 0.0;
  for (double v : distances.positive) hi = std::max(hi, v);
  for (double v : distances.negative) hi = std::max(hi, v);
  if (hi <= 0.0) hi = 1.0;  // every distance is zero; keep bins non-degenerate
  DistanceHistograms out;
  out.positive = bin_values(distances.positive, hi, bins);
  out.negative = bin_values(distances.negative, hi, bins);
  out.mean_positive = mean_of(distances.positive);
  out.mean_negative = mean_of(distances.negative);
  return out;
}

void write_histogram_rows(std::ostream& out, int epoch, const DistanceHistograms& h) {
  const auto rows = [&](const Histogram& hist, char kind) {
    const double width = hist.bin_width();
    for (std::size_t b = 0; b < hist.counts.size(); ++b) {
      out << epoch << ',' << kind << ',' << hist.lo + width * b << ','
          << hist.lo + width * (b + 1) << ',' << hist.counts[b] << '\n';
    }
  };
  rows(h.positive, '+');
  rows(h.negative, '-');
}

void write_summary_row(std::ostream& out, int epoch, const DistanceHistograms& h) {
  out << epoch << ',' << h.mean_positive << ',' << h.mean_negative << '\n';
}

}  // namespace pdml
