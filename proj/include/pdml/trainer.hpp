#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "pdml/evalmetrics.hpp"
#include "pdml/extension.hpp"
#include "pdml/griddata.hpp"
#include "pdml/pdml_loss.hpp"
#include "pdml/toynet.hpp"

namespace pdml {

// Epoch counts of the three training phases, run in order:
//   1. point cross-entropy only
//   2. cross-entropy + PDML
//   3. cross-entropy (points + extended labels) + PDML
struct PhaseSchedule {
  int point_only = 4;
  int with_pdml = 48;
  int with_extension = 8;

  int total() const { return point_only + with_pdml + with_extension; }
  // Phase (1, 2 or 3) of a 0-based epoch index.
  int phase_of(int epoch) const;
};

struct TrainConfig {
  int batch_size = 8;
  int subgroup_size = 4;
  int crop_size = 0;  // 0: full image
  double base_lr = 0.01;
  double classifier_lr_multiplier = 10.0;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lr_power = 0.8;
  LossConfig loss;
  double pdml_weight = 1.0;
  double extension_thr = 0.7;
  ScoreArgmax argmax_mode = ScoreArgmax::AllClasses;
  PhaseSchedule phases;
  bool shuffle_triples = false;
  std::uint64_t seed = 0;

  int max_epoch() const { return phases.total(); }
  void validate() const;
};

struct OptimizerState {
  std::vector<double> velocity;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t n) : velocity(n, 0.0) {}
};

// base * (1 - epoch / max_epoch)^power. Throws if epoch is outside
// [0, max_epoch].
double poly_lr(double base, int epoch, int max_epoch, double power);

// v <- momentum * v + grad + weight_decay * p;  p <- p - lr_eff * v, where
// classifier parameters use lr * classifier_lr_multiplier. Throws
// std::runtime_error on a non-finite gradient.
void sgd_step(ModelParams& params, std::span<const double> grads, OptimizerState& state,
              double lr, const TrainConfig& cfg);

// Seeded shuffle of `order` cut into consecutive chunks of `size`; a trailing
// chunk of one element joins the previous chunk.
std::vector<std::vector<std::size_t>> make_subgroups(std::span<const std::size_t> order, int size,
                                                     std::uint64_t seed);

// Crop of image, points (those outside are dropped, the rest shifted) and
// ground truth.
Sample crop_sample(const Sample& sample, int top, int left, int height, int width);
Sample random_crop(const Sample& sample, int crop_size, std::mt19937_64& rng);

struct EvalResult {
  ConfusionMatrix confusion;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
};

// Argmax prediction on full images against dense ground truth.
EvalResult evaluate(const Dataset& dataset, const ModelParams& params);

struct EpochLog {
  int epoch = 0;  // 1-based
  int phase = 1;
  double lr = 0.0;
  double ce_loss = 0.0;
  double pdml_loss = 0.0;
  std::size_t triples = 0;
  double mean_pos_dist = 0.0;
  double mean_neg_dist = 0.0;
  double miou = 0.0;
  double pixel_acc = 0.0;
  std::size_t extended_pixels = 0;
  double extension_accuracy = 0.0;  // NaN when nothing was extended or no gt
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
  // Pair distances visited in each epoch (only when requested).
  std::vector<PairDistances> distances;
};

struct TrainOptions {
  const Dataset* eval = nullptr;  // falls back to the training set's ground truth
  bool record_distances = false;
  std::function<void(const EpochLog&)> on_epoch;
};

TrainResult train(const Dataset& dataset, const NetConfig& net, const TrainConfig& cfg,
                  const TrainOptions& options = {});

// Header "epoch,lr,ce_loss,pdml_loss,triples,mean_pos_dist,mean_neg_dist,miou,pixel_acc".
void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const EpochLog& row);

}  // namespace pdml
