#include "pdml/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "pdml/checkpoint.hpp"
#include "pdml/evalmetrics.hpp"
#include "pdml/extension.hpp"
#include "pdml/pdml_loss.hpp"
#include "pdml/synthgen.hpp"
#include "pdml/trainer.hpp"

namespace pdml::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void echo_config(std::ostream& out, const CLI::App& sub) {
  out << "# pdml " << sub.get_name() << '\n';
  std::istringstream lines(sub.config_to_str(true, false));
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty()) out << "#   " << line << '\n';
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  return out;
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  int count = 64;
  int eval_count = 0;
  std::uint64_t seed = 0;
  SceneConfig scene;
};

void add_gen_data(CLI::App& app, GenDataArgs& a) {
  auto* sub = app.add_subcommand("gen-data", "Write a synthetic dataset (images, points, dense ground truth)");
  sub->add_option("--out", a.out, "Output directory")->required();
  sub->add_option("--count", a.count, "Number of training scenes")->check(CLI::NonNegativeNumber)->capture_default_str();
  sub->add_option("--eval-count", a.eval_count, "Number of held-out scenes written to eval.txt")
      ->check(CLI::NonNegativeNumber)->capture_default_str();
  sub->add_option("--seed", a.seed, "Generator seed")->capture_default_str();
  sub->add_option("--height", a.scene.height, "Scene height")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--width", a.scene.width, "Scene width")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--classes", a.scene.num_classes, "Number of classes (class 0 is background)")
      ->check(CLI::Range(2, kMaxClasses))->capture_default_str();
  sub->add_option("--noise", a.scene.noise_std, "Gaussian pixel noise std")->capture_default_str();
  sub->add_option("--min-shapes", a.scene.min_shapes, "Fewest shapes per scene")->capture_default_str();
  sub->add_option("--max-shapes", a.scene.max_shapes, "Most shapes per scene")->capture_default_str();
  sub->add_option("--min-size", a.scene.min_shape_size, "Smallest shape side")->capture_default_str();
  sub->add_option("--max-size", a.scene.max_shape_size, "Largest shape side")->capture_default_str();
}

int run_gen_data(GenDataArgs& a, std::ostream& out) {
  a.scene.seed = a.seed;
  a.scene.validate();
  const fs::path dir(a.out);
  const auto manifest = write_dataset(dir, "manifest.txt", a.scene, a.count, 0);
  out << "wrote " << a.count << " scenes to " << manifest.string() << '\n';
  if (a.eval_count > 0) {
    const auto eval = write_dataset(dir, "eval.txt", a.scene, a.eval_count,
                                    static_cast<std::uint64_t>(a.count));
    out << "wrote " << a.eval_count << " scenes to " << eval.string() << '\n';
  }
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string eval;
  std::string out;
  std::string log;
  std::string hist_dir;
  std::optional<int> epochs;
  std::vector<int> phases;
  std::vector<int> conv{8, 16, 16};
  bool argmax_in_class_set = false;
  TrainConfig cfg;
  std::uint64_t net_seed = 1;
  double embedding_gain = NetConfig{}.embedding_gain;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* sub = app.add_subcommand("train", "Train the network with point supervision, PDML and online extension");
  auto& c = a.cfg;
  sub->add_option("--data", a.data, "Training manifest")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "Checkpoint path")->required();
  sub->add_option("--eval", a.eval, "Held-out manifest for per-epoch mIoU")->check(CLI::ExistingFile);
  sub->add_option("--log", a.log, "Per-epoch CSV log");
  sub->add_option("--hist-dir", a.hist_dir, "Directory receiving per-epoch pair distances (distances.csv)");
  sub->add_option("--epochs", a.epochs,
                  "Total epochs; without --phases the default 4:48:8 phase ratio is scaled to fit");
  sub->add_option("--phases", a.phases, "Epochs per phase: point-only,+pdml,+extension")
      ->delimiter(',')->expected(3);
  sub->add_option("--batch", c.batch_size, "Images per batch")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--subgroup", c.subgroup_size, "Images per PDML subgroup")->check(CLI::Range(2, 1 << 20))->capture_default_str();
  sub->add_option("--crop", c.crop_size, "Random crop side (0 = full image)")->capture_default_str();
  sub->add_option("--lr", c.base_lr, "Base learning rate (feature layers)")->capture_default_str();
  sub->add_option("--classifier-lr-mult", c.classifier_lr_multiplier, "Classifier learning-rate multiplier")->capture_default_str();
  sub->add_option("--momentum", c.momentum, "SGD momentum")->capture_default_str();
  sub->add_option("--wd", c.weight_decay, "Weight decay")->capture_default_str();
  sub->add_option("--power", c.lr_power, "Polynomial decay power")->capture_default_str();
  sub->add_option("--alpha", c.loss.alpha, "Weight of the positive-pair term")->capture_default_str();
  sub->add_option("--beta", c.loss.beta, "Weight of the margin term")->capture_default_str();
  sub->add_option("--margin", c.loss.margin, "Triplet margin")->capture_default_str();
  sub->add_option("--lambda", c.pdml_weight, "Weight of PDML relative to cross-entropy")->capture_default_str();
  sub->add_option("--thr", c.extension_thr, "Score threshold for online extension")->capture_default_str();
  sub->add_flag("--argmax-in-class-set", a.argmax_in_class_set,
                "Take the score argmax over the image's class set only");
  sub->add_flag("--shuffle-triples", c.shuffle_triples, "Seeded shuffle instead of annotation order when pairing");
  sub->add_option("--conv", a.conv, "Conv layer widths; the last is the embedding dim")->delimiter(',')->capture_default_str();
  sub->add_option("--net-seed", a.net_seed, "Weight init seed")->capture_default_str();
  sub->add_option("--embedding-gain", a.embedding_gain,
                  "Init scale of the embedding layer (classifier init divided by it)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--seed", c.seed, "Training seed")->capture_default_str();
}

PhaseSchedule resolve_phases(const TrainArgs& a) {
  if (!a.phases.empty()) {
    PhaseSchedule p{a.phases[0], a.phases[1], a.phases[2]};
    if (a.epochs && *a.epochs != p.total()) {
      throw UsageError("--phases sum to " + std::to_string(p.total()) + " but --epochs is " +
                       std::to_string(*a.epochs));
    }
    return p;
  }
  if (!a.epochs) return PhaseSchedule{};
  const int e = *a.epochs;
  if (e < 1) throw UsageError("--epochs must be >= 1");
  const PhaseSchedule def;
  const int first = static_cast<int>(std::lround(e * static_cast<double>(def.point_only) / def.total()));
  const int last = static_cast<int>(std::lround(e * static_cast<double>(def.with_extension) / def.total()));
  return PhaseSchedule{first, e - first - last, last};
}

int run_train(TrainArgs& a, std::ostream& out) {
  a.cfg.phases = resolve_phases(a);
  a.cfg.argmax_mode = a.argmax_in_class_set ? ScoreArgmax::ClassSetOnly : ScoreArgmax::AllClasses;
  out << "#   resolved phases = " << a.cfg.phases.point_only << ',' << a.cfg.phases.with_pdml << ','
      << a.cfg.phases.with_extension << '\n';
  a.cfg.validate();

  const Dataset ds = load_dataset(a.data);
  std::optional<Dataset> eval_ds;
  if (!a.eval.empty()) eval_ds = load_dataset(a.eval, ds.num_classes);
  if (ds.samples.empty()) throw std::runtime_error("training manifest lists no samples");

  NetConfig net;
  net.channels_in = ds.samples.front().image.channels();
  net.conv_channels = a.conv;
  net.num_classes = ds.num_classes;
  net.seed = a.net_seed;
  net.embedding_gain = a.embedding_gain;
  net.validate();

  std::ofstream log;
  if (!a.log.empty()) {
    log = open_out(a.log);
    write_log_header(log);
  }
  TrainOptions opts;
  opts.eval = eval_ds ? &*eval_ds : nullptr;
  opts.record_distances = !a.hist_dir.empty();
  opts.on_epoch = [&](const EpochLog& row) {
    out << "epoch " << row.epoch << " phase " << row.phase << " lr " << row.lr << " ce "
        << row.ce_loss << " pdml " << row.pdml_loss << " triples " << row.triples << " dis+ "
        << row.mean_pos_dist << " dis- " << row.mean_neg_dist << " miou " << row.miou << '\n';
    if (log.is_open()) {
      write_log_row(log, row);
      log.flush();
    }
  };
  const auto result = train(ds, net, a.cfg, opts);

  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_checkpoint(a.out, result.params);
  if (!a.hist_dir.empty()) {
    auto dist = open_out(fs::path(a.hist_dir) / "distances.csv");
    dist << "epoch,kind,distance\n" << std::setprecision(17);
    for (std::size_t e = 0; e < result.distances.size(); ++e) {
      for (double d : result.distances[e].positive) dist << e + 1 << ",+," << d << '\n';
      for (double d : result.distances[e].negative) dist << e + 1 << ",-," << d << '\n';
    }
  }
  out << "saved checkpoint to " << a.out << '\n';
  return kOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string per_class;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* sub = app.add_subcommand("eval", "Evaluate a checkpoint against dense ground truth");
  sub->add_option("--ckpt", a.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--data", a.data, "Manifest with ground-truth masks")->required()->check(CLI::ExistingFile);
  sub->add_option("--per-class", a.per_class, "Write per-class IoU CSV here");
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  const ModelParams params = load_checkpoint(a.ckpt);
  const Dataset ds = load_dataset(a.data, params.config().num_classes);
  const EvalResult ev = evaluate(ds, params);
  out << "miou,pixel_acc\n" << ev.miou << ',' << ev.pixel_accuracy << '\n';
  if (!a.per_class.empty()) {
    auto csv = open_out(a.per_class);
    csv << "class,iou\n";
    for (int c = 0; c < ev.confusion.num_classes(); ++c) {
      const auto iou = ev.confusion.class_iou(c);
      csv << c << ',';
      if (iou) csv << *iou;
      csv << '\n';
    }
  }
  return kOk;
}

// ---- extend -----------------------------------------------------------------

struct ExtendArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  double thr = 0.7;
  std::string method = "score-region";
  int max_iter = 300;
  bool argmax_in_class_set = false;
};

void add_extend(CLI::App& app, ExtendArgs& a) {
  auto* sub = app.add_subcommand("extend", "Write extended label masks and their accuracy");
  sub->add_option("--ckpt", a.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--data", a.data, "Manifest")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "Output directory")->required();
  sub->add_option("--thr", a.thr, "Score threshold")->capture_default_str();
  sub->add_option("--method", a.method, "score-region | score | region | kmeans")
      ->check(CLI::IsMember({"score-region", "score", "region", "kmeans"}))->capture_default_str();
  sub->add_option("--max-iter", a.max_iter, "K-means iteration cap")->capture_default_str();
  sub->add_flag("--argmax-in-class-set", a.argmax_in_class_set,
                "Take the score argmax over the image's class set only");
}

int run_extend(const ExtendArgs& a, std::ostream& out) {
  const ModelParams params = load_checkpoint(a.ckpt);
  const Dataset ds = load_dataset(a.data, params.config().num_classes);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  auto csv = open_out(dir / "accuracy.csv");
  csv << "image_id,labeled_pixels,accuracy\n";
  const auto mode = a.argmax_in_class_set ? ScoreArgmax::ClassSetOnly : ScoreArgmax::AllClasses;
  std::size_t total_labeled = 0;
  std::size_t total_correct = 0;
  for (const auto& s : ds.samples) {
    const auto cache = forward(s.image, params);
    CandidateMask ext;
    const int h = s.image.height();
    const int w = s.image.width();
    if (a.method == "kmeans") {
      if (s.points.points.empty()) {
        ext = CandidateMask(h, w);
      } else {
        ext = kmeans_extension(cache.embedding, s.points, a.max_iter);
      }
    } else if (a.method == "region") {
      ext = region_candidates(s.points, h, w);
    } else {
      ext = score_candidates(cache.scores, class_set(s.mask), a.thr, mode);
      if (a.method == "score-region") ext = extend_labels(ext, region_candidates(s.points, h, w));
    }
    save_mask(dir / (s.id + "_ext.pgm"), ext);
    const std::size_t labeled = ext.labeled_count();
    csv << s.id << ',' << labeled << ',';
    if (s.ground_truth && labeled > 0) {
      const double acc = extension_accuracy(ext, *s.ground_truth);
      csv << acc;
      total_labeled += labeled;
      total_correct += static_cast<std::size_t>(std::llround(acc * static_cast<double>(labeled)));
    } else {
      csv << "nan";
    }
    csv << '\n';
  }
  out << "labeled_pixels,accuracy\n" << total_labeled << ',';
  if (total_labeled > 0) {
    out << static_cast<double>(total_correct) / static_cast<double>(total_labeled);
  } else {
    out << "nan";
  }
  out << '\n';
  return kOk;
}

// ---- hist -------------------------------------------------------------------

struct HistArgs {
  std::string dir;
  std::string out;
  int bins = 50;
};

void add_hist(CLI::App& app, HistArgs& a) {
  auto* sub = app.add_subcommand("hist", "Bin per-epoch pair distances written by train --hist-dir");
  sub->add_option("--dir", a.dir, "Directory holding distances.csv")->required()->check(CLI::ExistingDirectory);
  sub->add_option("--out", a.out, "Output directory (defaults to --dir)");
  sub->add_option("--bins", a.bins, "Histogram bins")->check(CLI::PositiveNumber)->capture_default_str();
}

int run_hist(const HistArgs& a, std::ostream& out) {
  const fs::path in_path = fs::path(a.dir) / "distances.csv";
  std::ifstream in(in_path);
  if (!in) throw std::runtime_error(in_path.string() + ": cannot open");
  std::map<int, PairDistances> per_epoch;
  std::string line;
  std::getline(in, line);  // header
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    int epoch = 0;
    char comma1 = 0, kind = 0, comma2 = 0;
    double d = 0.0;
    if (!(fields >> epoch >> comma1 >> kind >> comma2 >> d) || comma1 != ',' || comma2 != ',' ||
        (kind != '+' && kind != '-')) {
      throw FormatError(in_path.string() + ":" + std::to_string(line_no) + ": expected epoch,kind,distance");
    }
    (kind == '+' ? per_epoch[epoch].positive : per_epoch[epoch].negative).push_back(d);
  }
  const fs::path out_dir = a.out.empty() ? fs::path(a.dir) : fs::path(a.out);
  fs::create_directories(out_dir);
  auto hist = open_out(out_dir / "histogram.csv");
  auto summary = open_out(out_dir / "summary.csv");
  hist << "epoch,kind,bin_lo,bin_hi,count\n";
  summary << "epoch,mean_pos,mean_neg\n";
  for (const auto& [epoch, d] : per_epoch) {
    const auto h = distance_histograms(d, a.bins);
    write_histogram_rows(hist, epoch, h);
    write_summary_row(summary, epoch, h);
  }
  out << "wrote " << per_epoch.size() << " epochs to " << (out_dir / "histogram.csv").string()
      << " and " << (out_dir / "summary.csv").string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-supervised scene parsing with cross-image distance metric learning", "pdml"};
  app.require_subcommand(1);
  GenDataArgs gen;
  TrainArgs tr;
  EvalArgs ev;
  ExtendArgs ext;
  HistArgs hist;
  add_gen_data(app, gen);
  add_train(app, tr);
  add_eval(app, ev);
  add_extend(app, ext);
  add_hist(app, hist);

  if (args.empty()) {
    err << app.help();
    return kUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  auto* sub = app.get_subcommands().front();
  echo_config(out, *sub);
  try {
    const std::string name = sub->get_name();
    if (name == "gen-data") return run_gen_data(gen, out);
    if (name == "train") return run_train(tr, out);
    if (name == "eval") return run_eval(ev, out);
    if (name == "extend") return run_extend(ext, out);
    return run_hist(hist, out);
  } catch (const UsageError& e) {
    err << "pdml: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "pdml: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace pdml::cli
