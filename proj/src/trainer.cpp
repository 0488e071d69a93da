#include "pdml/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

#include "pdml/pointloss.hpp"

namespace pdml {

namespace {

// Independent stream per (seed, epoch, purpose, extra).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t purpose,
                          std::uint64_t extra = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(purpose),
                    static_cast<std::uint32_t>(extra), static_cast<std::uint32_t>(extra >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

enum Stream : std::uint64_t { kOrder = 1, kCrop = 2, kSubgroup = 3, kTriples = 4 };

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

int PhaseSchedule::phase_of(int epoch) const {
  if (epoch < point_only) return 1;
  if (epoch < point_only + with_pdml) return 2;
  return 3;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (subgroup_size < 2) throw std::invalid_argument("TrainConfig: subgroup_size must be >= 2");
  if (crop_size < 0) throw std::invalid_argument("TrainConfig: crop_size must be >= 0");
  if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: base_lr must be > 0");
  if (!(classifier_lr_multiplier > 0.0)) {
    throw std::invalid_argument("TrainConfig: classifier_lr_multiplier must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (!(lr_power > 0.0)) throw std::invalid_argument("TrainConfig: lr power must be > 0");
  if (!(pdml_weight >= 0.0)) throw std::invalid_argument("TrainConfig: pdml weight must be >= 0");
  if (phases.point_only < 0 || phases.with_pdml < 0 || phases.with_extension < 0) {
    throw std::invalid_argument("TrainConfig: phase lengths must be >= 0");
  }
  if (phases.total() < 1) throw std::invalid_argument("TrainConfig: phase schedule is empty");
  loss.validate();
}

double poly_lr(double base, int epoch, int max_epoch, double power) {
  if (max_epoch < 1 || epoch < 0 || epoch > max_epoch) {
    throw std::invalid_argument("poly_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(max_epoch) + "]");
  }
  return base * std::pow(1.0 - static_cast<double>(epoch) / max_epoch, power);
}

void sgd_step(ModelParams& params, std::span<const double> grads, OptimizerState& state,
              double lr, const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw std::invalid_argument("sgd_step: gradient size mismatch");
  if (state.velocity.empty()) state.velocity.assign(params.size(), 0.0);
  if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: optimizer state size mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw std::runtime_error("sgd_step: non-finite gradient at parameter " + std::to_string(i) +
                               " (value " + std::to_string(grads[i]) + ")");
    }
  }
  const std::size_t classifier_begin = params.layout().classifier_begin();
  auto p = params.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double step = i >= classifier_begin ? lr * cfg.classifier_lr_multiplier : lr;
    double& v = state.velocity[i];
    v = cfg.momentum * v + grads[i] + cfg.weight_decay * p[i];
    p[i] -= step * v;
  }
}

std::vector<std::vector<std::size_t>> make_subgroups(std::span<const std::size_t> order, int size,
                                                     std::uint64_t seed) {
  if (size < 2) throw std::invalid_argument("make_subgroups: size must be >= 2");
  if (order.size() < 2) throw std::invalid_argument("make_subgroups: need >= 2 images");
  std::vector<std::size_t> shuffled(order.begin(), order.end());
  std::mt19937_64 rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < shuffled.size(); i += static_cast<std::size_t>(size)) {
    const std::size_t end = std::min(shuffled.size(), i + static_cast<std::size_t>(size));
    groups.emplace_back(shuffled.begin() + static_cast<std::ptrdiff_t>(i),
                        shuffled.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (groups.size() > 1 && groups.back().size() == 1) {
    groups[groups.size() - 2].push_back(groups.back().front());
    groups.pop_back();
  }
  return groups;
}

Sample crop_sample(const Sample& s, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > s.image.height() ||
      left + width > s.image.width()) {
    throw std::invalid_argument("crop_sample: window outside the image");
  }
  Sample out;
  out.id = s.id;
  out.image = ImageGrid(height, width, s.image.channels());
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const auto src = s.image.pixel(top + r, left + c);
      std::copy(src.begin(), src.end(), out.image.pixel(r, c).begin());
    }
  }
  out.points.image_id = s.points.image_id;
  for (const auto& p : s.points.points) {
    const int r = p.row - top;
    const int c = p.col - left;
    if (r >= 0 && r < height && c >= 0 && c < width) out.points.points.push_back({r, c, p.label});
  }
  out.mask = points_to_pseudo_mask(out.points, height, width);
  if (s.ground_truth) {
    PseudoMask gt(height, width);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) gt.at(r, c) = s.ground_truth->at(top + r, left + c);
    }
    out.ground_truth = std::move(gt);
  }
  return out;
}

Sample random_crop(const Sample& s, int crop_size, std::mt19937_64& rng) {
  const int h = crop_size > 0 ? std::min(crop_size, s.image.height()) : s.image.height();
  const int w = crop_size > 0 ? std::min(crop_size, s.image.width()) : s.image.width();
  const int top = std::uniform_int_distribution<int>(0, s.image.height() - h)(rng);
  const int left = std::uniform_int_distribution<int>(0, s.image.width() - w)(rng);
  return crop_sample(s, top, left, h, w);
}

EvalResult evaluate(const Dataset& dataset, const ModelParams& params) {
  EvalResult out{ConfusionMatrix(params.config().num_classes), 0.0, 0.0};
  for (const auto& s : dataset.samples) {
    if (!s.ground_truth) throw std::invalid_argument("evaluate: sample " + s.id + " has no ground truth");
    const auto emb = forward_features(s.image, params);
    out.confusion.accumulate(predict_labels(forward_classifier(emb, params)), *s.ground_truth);
  }
  out.miou = miou(out.confusion);
  out.pixel_accuracy = pixel_accuracy(out.confusion);
  return out;
}

TrainResult train(const Dataset& dataset, const NetConfig& net, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  if (dataset.samples.empty()) throw std::invalid_argument("train: empty dataset");
  if (net.num_classes != dataset.num_classes) {
    throw std::invalid_argument("train: network has " + std::to_string(net.num_classes) +
                                " classes, dataset has " + std::to_string(dataset.num_classes));
  }
  const Dataset* eval_set = options.eval;
  if (!eval_set && std::all_of(dataset.samples.begin(), dataset.samples.end(),
                               [](const Sample& s) { return s.ground_truth.has_value(); })) {
    eval_set = &dataset;
  }

  TrainResult result{init_params(net), {}, {}};
  ModelParams& params = result.params;
  OptimizerState opt(params.size());
  const int max_epoch = cfg.max_epoch();
  const std::size_t n = dataset.samples.size();
  const int dim = net.embedding_dim();

  for (int epoch = 0; epoch < max_epoch; ++epoch) {
    const int phase = cfg.phases.phase_of(epoch);
    const bool use_pdml = phase >= 2 && cfg.pdml_weight > 0.0;
    const bool use_extension = phase == 3;
    const double lr = poly_lr(cfg.base_lr, epoch, max_epoch, cfg.lr_power);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 order_rng(derive_seed(cfg.seed, epoch, kOrder));
    std::shuffle(order.begin(), order.end(), order_rng);
    std::mt19937_64 crop_rng(derive_seed(cfg.seed, epoch, kCrop));

    EpochLog row;
    row.epoch = epoch + 1;
    row.phase = phase;
    row.lr = lr;
    double ce_sum = 0.0;
    int ce_batches = 0;
    double pdml_sum = 0.0;
    int pdml_batches = 0;
    std::size_t ext_correct = 0;
    std::size_t ext_labeled_with_gt = 0;
    PairDistances epoch_distances;

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t b = end - start;

      std::vector<Sample> crops;
      std::vector<ForwardCache> caches;
      crops.reserve(b);
      caches.reserve(b);
      for (std::size_t i = start; i < end; ++i) {
        crops.push_back(random_crop(dataset.samples[order[i]], cfg.crop_size, crop_rng));
        caches.push_back(forward(crops.back().image, params));
      }

      // Point cross-entropy, optionally on extended labels.
      std::vector<std::optional<PointCEResult>> ce(b);
      std::size_t ce_images = 0;
      double ce_total = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        const Sample& s = crops[i];
        if (s.points.points.empty()) continue;
        PseudoMask labels = s.mask;
        if (use_extension) {
          const auto ext = extend_labels(
              score_candidates(caches[i].scores, class_set(s.mask), cfg.extension_thr,
                               cfg.argmax_mode),
              region_candidates(s.points, s.image.height(), s.image.width()));
          const std::size_t labeled = ext.labeled_count();
          row.extended_pixels += labeled;
          if (s.ground_truth) {
            ext_labeled_with_gt += labeled;
            for (std::size_t p = 0; p < ext.labels().size(); ++p) {
              const Label l = ext.labels()[p];
              if (l != kIgnore && l == s.ground_truth->labels()[p]) ++ext_correct;
            }
          }
          labels = merge_with_points(ext, s.points);
        }
        ce[i] = point_cross_entropy(caches[i].scores, labels);
        ce_total += ce[i]->loss;
        ++ce_images;
      }
      const double ce_mean = ce_images > 0 ? ce_total / static_cast<double>(ce_images) : 0.0;

      // Cross-image metric learning over subgroups of the batch.
      std::vector<FeatureMap> d_emb(b);
      double pdml_mean = 0.0;
      if (b >= 2) {
        std::vector<std::size_t> positions(b);
        std::iota(positions.begin(), positions.end(), std::size_t{0});
        const auto groups = make_subgroups(
            positions, cfg.subgroup_size, derive_seed(cfg.seed, epoch, kSubgroup, batch_index));
        struct GroupResult {
          std::vector<std::size_t> members;
          SubgroupLoss loss;
        };
        std::vector<GroupResult> with_triples;
        std::size_t group_index = 0;
        for (const auto& g : groups) {
          std::vector<EmbeddingSet> sets;
          for (std::size_t pos : g) {
            sets.push_back(extract_embeddings(caches[pos].embedding, crops[pos].points,
                                              static_cast<int>(order[start + pos])));
          }
          std::optional<std::uint64_t> shuffle;
          if (cfg.shuffle_triples) {
            shuffle = derive_seed(cfg.seed, epoch, kTriples, (batch_index << 16) + group_index);
          }
          ++group_index;
          auto loss = subgroup_pdml_loss(sets, cfg.loss, shuffle);
          epoch_distances.append(loss.distances);
          row.triples += loss.triples;
          if (loss.has_triples()) with_triples.push_back({g, std::move(loss)});
        }
        if (!with_triples.empty()) {
          for (const auto& gr : with_triples) pdml_mean += gr.loss.mean;
          pdml_mean /= static_cast<double>(with_triples.size());
          pdml_sum += pdml_mean;
          ++pdml_batches;
        }
        if (use_pdml && !with_triples.empty()) {
          const double scale = cfg.pdml_weight / static_cast<double>(with_triples.size());
          for (const auto& gr : with_triples) {
            for (std::size_t s = 0; s < gr.members.size(); ++s) {
              const std::size_t pos = gr.members[s];
              FeatureMap& g = d_emb[pos];
              if (g.values().empty()) {
                g = FeatureMap(caches[pos].embedding.height(), caches[pos].embedding.width(), dim);
              }
              const auto& pts = crops[pos].points.points;
              for (std::size_t p = 0; p < pts.size(); ++p) {
                auto px = g.pixel(pts[p].row, pts[p].col);
                for (int d = 0; d < dim; ++d) {
                  px[d] += scale * gr.loss.gradients[s][p * dim + static_cast<std::size_t>(d)];
                }
              }
            }
          }
        }
      }

      const double total = ce_mean + (use_pdml ? cfg.pdml_weight * pdml_mean : 0.0);
      if (!std::isfinite(total)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 " (ce " + std::to_string(ce_mean) + ", pdml " +
                                 std::to_string(pdml_mean) + ")");
      }
      if (ce_images > 0) {
        ce_sum += ce_mean;
        ++ce_batches;
      }

      std::vector<double> grad(params.size(), 0.0);
      const double ce_scale = ce_images > 0 ? 1.0 / static_cast<double>(ce_images) : 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        FeatureMap* d_logits = nullptr;
        if (ce[i]) {
          for (double& v : ce[i]->d_logits.values()) v *= ce_scale;
          d_logits = &ce[i]->d_logits;
        }
        const FeatureMap* emb_grad = d_emb[i].values().empty() ? nullptr : &d_emb[i];
        if (!d_logits && !emb_grad) continue;
        const auto g = backward(caches[i], params, d_logits, emb_grad);
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += g[k];
      }
      sgd_step(params, grad, opt, lr, cfg);
    }

    row.ce_loss = ce_batches > 0 ? ce_sum / ce_batches : kNaN;
    row.pdml_loss = pdml_batches > 0 ? pdml_sum / pdml_batches : kNaN;
    row.mean_pos_dist = epoch_distances.positive.empty()
                            ? kNaN
                            : std::accumulate(epoch_distances.positive.begin(),
                                              epoch_distances.positive.end(), 0.0) /
                                  static_cast<double>(epoch_distances.positive.size());
    row.mean_neg_dist = epoch_distances.negative.empty()
                            ? kNaN
                            : std::accumulate(epoch_distances.negative.begin(),
                                              epoch_distances.negative.end(), 0.0) /
                                  static_cast<double>(epoch_distances.negative.size());
    row.extension_accuracy = ext_labeled_with_gt > 0
                                 ? static_cast<double>(ext_correct) / ext_labeled_with_gt
                                 : kNaN;
    if (eval_set) {
      const auto ev = evaluate(*eval_set, params);
      row.miou = ev.miou;
      row.pixel_acc = ev.pixel_accuracy;
    } else {
      row.miou = kNaN;
      row.pixel_acc = kNaN;
    }
    if (options.record_distances) result.distances.push_back(std::move(epoch_distances));
    if (options.on_epoch) options.on_epoch(row);
    result.log.push_back(row);
  }
  return result;
}

void write_log_header(std::ostream& out) {
  out << "epoch,lr,ce_loss,pdml_loss,triples,mean_pos_dist,mean_neg_dist,miou,pixel_acc\n";
}

void write_log_row(std::ostream& out, const EpochLog& r) {
  out << r.epoch << ',' << r.lr << ',' << r.ce_loss << ',' << r.pdml_loss << ',' << r.triples << ','
      << r.mean_pos_dist << ',' << r.mean_neg_dist << ',' << r.miou << ',' << r.pixel_acc << '\n';
}

}  // namespace pdml
