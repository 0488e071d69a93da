#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <tuple>

#include "pdml/checkpoint.hpp"
#include "pdml/evalmetrics.hpp"
#include "pdml/extension.hpp"
#include "pdml/pdml_loss.hpp"
#include "pdml/pointloss.hpp"
#include "pdml/synthgen.hpp"
#include "pdml/toynet.hpp"
#include "pdml/trainer.hpp"

namespace py = pybind11;
using namespace pdml;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<Label, py::array::c_style | py::array::forcecast>;
using PointTuple = std::tuple<int, int, Label>;

py::array_t<double> to_numpy(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  py::array_t<double> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<double> to_numpy(const ImageGrid& g) {
  return to_numpy(g.values(), {g.height(), g.width(), g.channels()});
}

py::array_t<double> to_numpy(const FeatureMap& f) {
  return to_numpy(f.values(), {f.height(), f.width(), f.depth()});
}

LabelArray to_numpy(const PseudoMask& m) {
  LabelArray out({m.height(), m.width()});
  std::copy(m.labels().begin(), m.labels().end(), out.mutable_data());
  return out;
}

ImageGrid image_from(const Array& a) {
  if (a.ndim() != 3) throw std::invalid_argument("image must be H x W x C");
  return ImageGrid(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                   static_cast<int>(a.shape(2)),
                   std::vector<double>(a.data(), a.data() + a.size()));
}

template <class Map>
Map map_from(const Array& a) {
  if (a.ndim() != 3) throw std::invalid_argument("map must be H x W x D");
  Map m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), m.values().begin());
  return m;
}

PseudoMask mask_from(const LabelArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("mask must be H x W");
  return PseudoMask(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                    std::vector<Label>(a.data(), a.data() + a.size()));
}

PointAnnotationSet points_from(const std::vector<PointTuple>& pts) {
  PointAnnotationSet out;
  for (const auto& [r, c, l] : pts) out.points.push_back({r, c, l});
  return out;
}

std::vector<PointTuple> points_to(const PointAnnotationSet& pts) {
  std::vector<PointTuple> out;
  for (const auto& p : pts.points) out.emplace_back(p.row, p.col, p.label);
  return out;
}

EmbeddingPoint embedding_point(const Array& v, Label label) {
  return {std::vector<double>(v.data(), v.data() + v.size()), label};
}

EmbeddingSet label_set(const std::vector<Label>& labels) {
  EmbeddingSet s;
  for (Label l : labels) s.points.push_back({{}, l});
  return s;
}

ConfusionMatrix confusion(const LabelArray& pred, const LabelArray& gt, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.accumulate(mask_from(pred), mask_from(gt));
  return cm;
}

py::dict log_row(const EpochLog& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["phase"] = r.phase;
  d["lr"] = r.lr;
  d["ce_loss"] = r.ce_loss;
  d["pdml_loss"] = r.pdml_loss;
  d["triples"] = r.triples;
  d["mean_pos_dist"] = r.mean_pos_dist;
  d["mean_neg_dist"] = r.mean_neg_dist;
  d["miou"] = r.miou;
  d["pixel_acc"] = r.pixel_acc;
  d["extended_pixels"] = r.extended_pixels;
  d["extension_accuracy"] = r.extension_accuracy;
  return d;
}

}  // namespace

PYBIND11_MODULE(_pdml, m) {
  m.doc() = "Point-supervised scene parsing with proposal-based metric learning";
  m.attr("IGNORE") = kIgnore;

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<SceneConfig>(m, "SceneConfig")
      .def(py::init<>())
      .def_readwrite("height", &SceneConfig::height)
      .def_readwrite("width", &SceneConfig::width)
      .def_readwrite("num_classes", &SceneConfig::num_classes)
      .def_readwrite("min_shapes", &SceneConfig::min_shapes)
      .def_readwrite("max_shapes", &SceneConfig::max_shapes)
      .def_readwrite("min_shape_size", &SceneConfig::min_shape_size)
      .def_readwrite("max_shape_size", &SceneConfig::max_shape_size)
      .def_readwrite("noise_std", &SceneConfig::noise_std)
      .def_readwrite("ellipses", &SceneConfig::ellipses)
      .def_readwrite("allow_overlap", &SceneConfig::allow_overlap)
      .def_readwrite("seed", &SceneConfig::seed);

  py::class_<NetConfig>(m, "NetConfig")
      .def(py::init<>())
      .def_readwrite("channels_in", &NetConfig::channels_in)
      .def_readwrite("conv_channels", &NetConfig::conv_channels)
      .def_readwrite("num_classes", &NetConfig::num_classes)
      .def_readwrite("embedding_gain", &NetConfig::embedding_gain)
      .def_readwrite("seed", &NetConfig::seed);

  py::class_<LossConfig>(m, "LossConfig")
      .def(py::init<>())
      .def_readwrite("margin", &LossConfig::margin)
      .def_readwrite("alpha", &LossConfig::alpha)
      .def_readwrite("beta", &LossConfig::beta);

  py::class_<PhaseSchedule>(m, "PhaseSchedule")
      .def(py::init<>())
      .def(py::init([](int a, int b, int c) { return PhaseSchedule{a, b, c}; }))
      .def_readwrite("point_only", &PhaseSchedule::point_only)
      .def_readwrite("with_pdml", &PhaseSchedule::with_pdml)
      .def_readwrite("with_extension", &PhaseSchedule::with_extension)
      .def("total", &PhaseSchedule::total);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("subgroup_size", &TrainConfig::subgroup_size)
      .def_readwrite("crop_size", &TrainConfig::crop_size)
      .def_readwrite("base_lr", &TrainConfig::base_lr)
      .def_readwrite("classifier_lr_multiplier", &TrainConfig::classifier_lr_multiplier)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("lr_power", &TrainConfig::lr_power)
      .def_readwrite("loss", &TrainConfig::loss)
      .def_readwrite("pdml_weight", &TrainConfig::pdml_weight)
      .def_readwrite("extension_thr", &TrainConfig::extension_thr)
      .def_readwrite("phases", &TrainConfig::phases)
      .def_readwrite("shuffle_triples", &TrainConfig::shuffle_triples)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def("image", [](const Dataset& d, std::size_t i) { return to_numpy(d.samples.at(i).image); })
      .def("points", [](const Dataset& d, std::size_t i) { return points_to(d.samples.at(i).points); })
      .def("ground_truth", [](const Dataset& d, std::size_t i) {
        const auto& gt = d.samples.at(i).ground_truth;
        if (!gt) throw std::invalid_argument("sample has no ground truth");
        return to_numpy(*gt);
      });

  py::class_<ModelParams>(m, "Model")
      .def(py::init([](const NetConfig& cfg) { return init_params(cfg); }), py::arg("config"))
      .def_property_readonly("config", &ModelParams::config)
      .def_property_readonly("num_params", &ModelParams::size)
      .def_property(
          "params", [](const ModelParams& p) { return to_numpy(p.flatten(), {static_cast<py::ssize_t>(p.size())}); },
          [](ModelParams& p, const Array& a) { p.restore({a.data(), static_cast<std::size_t>(a.size())}); })
      .def("forward",
           [](const ModelParams& p, const Array& image) {
             const auto cache = forward(image_from(image), p);
             return py::make_tuple(to_numpy(cache.embedding), to_numpy(cache.scores));
           },
           py::arg("image"), "Returns (embedding H x W x D, probabilities H x W x K).")
      .def("predict",
           [](const ModelParams& p, const Array& image) {
             return to_numpy(predict_labels(forward(image_from(image), p).scores));
           },
           py::arg("image"))
      .def("save", [](const ModelParams& p, const std::filesystem::path& path) { save_checkpoint(path, p); })
      .def_static("load", &load_checkpoint, py::arg("path"));

  m.def("generate_scene",
        [](const SceneConfig& cfg, std::uint64_t index) {
          const auto s = generate_scene(cfg, index);
          return py::make_tuple(to_numpy(s.image), to_numpy(s.ground_truth));
        },
        py::arg("config"), py::arg("index"), "Returns (image H x W x 3, ground truth H x W).");
  m.def("generate_dataset", &generate_dataset, py::arg("config"), py::arg("count"),
        py::arg("first_index") = 0, py::arg("interior_margin") = 0);
  m.def("sample_points",
        [](const LabelArray& gt, std::uint64_t seed, int margin, bool skip) {
          return points_to(sample_point_annotations(mask_from(gt), seed, margin, skip));
        },
        py::arg("ground_truth"), py::arg("seed"), py::arg("interior_margin") = 0,
        py::arg("skip_without_interior") = false);
  m.def("points_to_mask",
        [](const std::vector<PointTuple>& pts, int h, int w) {
          return to_numpy(points_to_pseudo_mask(points_from(pts), h, w));
        },
        py::arg("points"), py::arg("height"), py::arg("width"));

  m.def("point_cross_entropy",
        [](const Array& probs, const LabelArray& mask) {
          const auto r = point_cross_entropy(map_from<ScoreMap>(probs), mask_from(mask));
          return py::make_tuple(r.loss, to_numpy(r.d_logits));
        },
        py::arg("probs"), py::arg("mask"), "Returns (loss, d loss / d logits).");

  m.def("loss_triple",
        [](const Array& a, const Array& p, const Array& n, const LossConfig& cfg) {
          const auto r = loss_triple(embedding_point(a, 0), embedding_point(p, 0),
                                     embedding_point(n, 1), cfg);
          py::dict d;
          d["value"] = r.value;
          d["positive_term"] = r.positive_term;
          d["negative_term"] = r.negative_term;
          d["dist_positive"] = r.dist_positive;
          d["dist_negative"] = r.dist_negative;
          const auto dim = static_cast<py::ssize_t>(r.grad_anchor.size());
          d["grad_anchor"] = to_numpy(r.grad_anchor, {dim});
          d["grad_positive"] = to_numpy(r.grad_positive, {dim});
          d["grad_negative"] = to_numpy(r.grad_negative, {dim});
          return d;
        },
        py::arg("anchor"), py::arg("positive"), py::arg("negative"), py::arg("config") = LossConfig{});
  m.def("form_triples",
        [](const std::vector<Label>& anchors, const std::vector<Label>& others,
           std::optional<std::uint64_t> seed) {
          std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> out;
          for (const auto& t : form_triples(label_set(anchors), label_set(others), seed)) {
            out.emplace_back(t.anchor, t.positive, t.negative);
          }
          return out;
        },
        py::arg("anchor_labels"), py::arg("other_labels"), py::arg("shuffle_seed") = py::none(),
        "Triples (anchor, positive, negative) as indices into the two label lists.");

  m.def("score_candidates",
        [](const Array& probs, const ClassSet& classes, double thr, bool class_set_only) {
          return to_numpy(score_candidates(map_from<ScoreMap>(probs), classes, thr,
                                           class_set_only ? ScoreArgmax::ClassSetOnly
                                                          : ScoreArgmax::AllClasses));
        },
        py::arg("probs"), py::arg("classes"), py::arg("thr"), py::arg("class_set_only") = false);
  m.def("region_candidates",
        [](const std::vector<PointTuple>& pts, int h, int w, int radius) {
          return to_numpy(region_candidates(points_from(pts), h, w, radius));
        },
        py::arg("points"), py::arg("height"), py::arg("width"), py::arg("radius") = 2);
  m.def("extend_labels",
        [](const LabelArray& s, const LabelArray& r) {
          return to_numpy(extend_labels(mask_from(s), mask_from(r)));
        },
        py::arg("score_mask"), py::arg("region_mask"));
  m.def("merge_with_points",
        [](const LabelArray& e, const std::vector<PointTuple>& pts) {
          return to_numpy(merge_with_points(mask_from(e), points_from(pts)));
        },
        py::arg("extended"), py::arg("points"));
  m.def("extension_accuracy",
        [](const LabelArray& e, const LabelArray& gt) {
          return extension_accuracy(mask_from(e), mask_from(gt));
        },
        py::arg("extended"), py::arg("ground_truth"));

  m.def("miou",
        [](const LabelArray& pred, const LabelArray& gt, int k) { return miou(confusion(pred, gt, k)); },
        py::arg("pred"), py::arg("ground_truth"), py::arg("num_classes"));
  m.def("pixel_accuracy",
        [](const LabelArray& pred, const LabelArray& gt, int k) {
          return pixel_accuracy(confusion(pred, gt, k));
        },
        py::arg("pred"), py::arg("ground_truth"), py::arg("num_classes"));

  m.def("poly_lr", &poly_lr, py::arg("base"), py::arg("epoch"), py::arg("max_epoch"),
        py::arg("power"));
  m.def("sgd_step",
        [](ModelParams& p, const Array& grads, const Array& velocity, double lr,
           const TrainConfig& cfg) {
          if (static_cast<std::size_t>(grads.size()) != p.size() ||
              static_cast<std::size_t>(velocity.size()) != p.size()) {
            throw std::invalid_argument("sgd_step: size mismatch");
          }
          OptimizerState st;
          st.velocity.assign(velocity.data(), velocity.data() + velocity.size());
          sgd_step(p, {grads.data(), p.size()}, st, lr, cfg);
          return to_numpy(st.velocity, {static_cast<py::ssize_t>(p.size())});
        },
        py::arg("model"), py::arg("grads"), py::arg("velocity"), py::arg("lr"),
        py::arg("config") = TrainConfig{},
        "Updates the model in place and returns the new velocity.");

  m.def("train",
        [](const Dataset& ds, const NetConfig& net, const TrainConfig& cfg, const Dataset* eval) {
          TrainOptions opt;
          opt.eval = eval;
          TrainResult r;
          {
            py::gil_scoped_release release;
            r = train(ds, net, cfg, opt);
          }
          py::list log;
          for (const auto& row : r.log) log.append(log_row(row));
          return py::make_tuple(std::move(r.params), log);
        },
        py::arg("dataset"), py::arg("net"), py::arg("config"), py::arg("eval") = nullptr,
        "Returns (model, per-epoch log dicts).");
  m.def("evaluate",
        [](const Dataset& ds, const ModelParams& p) {
          const auto r = evaluate(ds, p);
          return py::make_tuple(r.miou, r.pixel_accuracy);
        },
        py::arg("dataset"), py::arg("model"), "Returns (mIoU, pixel accuracy).");
}
