#pragma once

#include <random>
#include <vector>

#include "pdml/griddata.hpp"
#include "pdml/pdml_loss.hpp"
#include "pdml/pointloss.hpp"
#include "pdml/synthgen.hpp"
#include "pdml/toynet.hpp"

namespace pdml::test {

// A handful of small noisy scenes with several random point labels each, so
// that cross-image triples exist.
struct GradFixture {
  std::vector<ImageGrid> images;
  std::vector<PointAnnotationSet> points;
  NetConfig net;
};

inline GradFixture make_grad_fixture(std::uint64_t seed, int images = 3, int size = 8,
                                     int points_per_image = 6) {
  GradFixture f;
  SceneConfig sc;
  sc.height = size;
  sc.width = size;
  sc.num_classes = 4;
  sc.min_shapes = 1;
  sc.max_shapes = 2;
  sc.min_shape_size = 3;
  sc.max_shape_size = 6;
  sc.noise_std = 0.1;
  sc.seed = seed;
  f.net.num_classes = sc.num_classes;
  f.net.conv_channels = {4, 6, 5};
  f.net.seed = seed + 1;
  std::mt19937_64 rng(seed * 7919 + 3);
  for (int i = 0; i < images; ++i) {
    const auto scene = generate_scene(sc, static_cast<std::uint64_t>(i));
    f.images.push_back(scene.image);
    PointAnnotationSet pts;
    std::vector<int> cells(static_cast<std::size_t>(size * size));
    for (std::size_t k = 0; k < cells.size(); ++k) cells[k] = static_cast<int>(k);
    std::shuffle(cells.begin(), cells.end(), rng);
    for (int k = 0; k < points_per_image; ++k) {
      const int r = cells[static_cast<std::size_t>(k)] / size;
      const int c = cells[static_cast<std::size_t>(k)] % size;
      // Alternate true labels with random ones so every class mix occurs.
      const Label l = k % 2 == 0 ? scene.ground_truth.at(r, c)
                                 : static_cast<Label>(rng() % static_cast<std::uint64_t>(sc.num_classes));
      pts.points.push_back({r, c, l});
    }
    f.points.push_back(pts);
  }
  return f;
}

struct Objective {
  double value = 0.0;
  std::vector<double> grad;
};

// ce_weight * mean point CE + pdml_weight * mean triple loss, with all images
// forming one subgroup. The gradient is assembled from backward() on each
// image.
inline Objective eval_objective(const GradFixture& f, const ModelParams& params, double ce_weight,
                                double pdml_weight, const LossConfig& loss_cfg,
                                bool with_grad = true) {
  const std::size_t n = f.images.size();
  std::vector<ForwardCache> caches;
  std::vector<EmbeddingSet> sets;
  for (std::size_t i = 0; i < n; ++i) {
    caches.push_back(forward(f.images[i], params));
    sets.push_back(extract_embeddings(caches.back().embedding, f.points[i], static_cast<int>(i)));
  }
  Objective out;
  std::vector<PointCEResult> ce;
  if (ce_weight != 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto mask = points_to_pseudo_mask(f.points[i], f.images[i].height(), f.images[i].width());
      ce.push_back(point_cross_entropy(caches[i].scores, mask));
      out.value += ce_weight * ce.back().loss / static_cast<double>(n);
    }
  }
  SubgroupLoss pd;
  if (pdml_weight != 0.0) {
    pd = subgroup_pdml_loss(sets, loss_cfg);
    out.value += pdml_weight * pd.mean;
  }
  if (!with_grad) return out;
  out.grad.assign(params.size(), 0.0);
  const int dim = params.config().embedding_dim();
  for (std::size_t i = 0; i < n; ++i) {
    FeatureMap d_logits;
    FeatureMap* dl = nullptr;
    if (!ce.empty()) {
      d_logits = ce[i].d_logits;
      for (double& v : d_logits.values()) v *= ce_weight / static_cast<double>(n);
      dl = &d_logits;
    }
    FeatureMap d_emb;
    FeatureMap* de = nullptr;
    if (pdml_weight != 0.0 && pd.has_triples()) {
      d_emb = FeatureMap(f.images[i].height(), f.images[i].width(), dim);
      const auto& pts = f.points[i].points;
      for (std::size_t p = 0; p < pts.size(); ++p) {
        auto px = d_emb.pixel(pts[p].row, pts[p].col);
        for (int d = 0; d < dim; ++d) {
          px[d] += pdml_weight * pd.gradients[i][p * dim + static_cast<std::size_t>(d)];
        }
      }
      de = &d_emb;
    }
    if (!dl && !de) continue;
    const auto g = backward(caches[i], params, dl, de);
    for (std::size_t k = 0; k < g.size(); ++k) out.grad[k] += g[k];
  }
  return out;
}

inline GradCheckReport check_objective(const GradFixture& f, const ModelParams& params,
                                       double ce_weight, double pdml_weight,
                                       const LossConfig& loss_cfg, std::size_t samples,
                                       std::uint64_t seed) {
  const auto analytic = eval_objective(f, params, ce_weight, pdml_weight, loss_cfg);
  const auto loss = [&](std::span<const double> p) {
    ModelParams q = params;
    q.restore(p);
    return eval_objective(f, q, ce_weight, pdml_weight, loss_cfg, false).value;
  };
  return numeric_grad_check(loss, params.values(), analytic.grad, samples, 1e-4, seed);
}

}  // namespace pdml::test
