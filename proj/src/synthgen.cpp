#include "pdml/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace pdml {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
  if (height < 1 || width < 1) throw std::invalid_argument("SceneConfig: empty image");
  if (num_classes < 2 || num_classes > kMaxClasses) {
    throw std::invalid_argument("SceneConfig: num_classes must be in [2, 255]");
  }
  if (min_shapes < 0 || max_shapes < min_shapes) {
    throw std::invalid_argument("SceneConfig: empty shapes_per_image range");
  }
  if (min_shape_size < 1 || max_shape_size < min_shape_size) {
    throw std::invalid_argument("SceneConfig: empty shape size range");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw std::invalid_argument("SceneConfig: noise_std must be >= 0");
  }
}

std::array<double, 3> class_color(Label label, int num_classes) {
  // Evenly spaced hues; alternate value levels so neighbours differ in
  // brightness as well.
  const double hue = 6.0 * static_cast<double>(label) / num_classes;
  const double value = label % 2 == 0 ? 0.85 : 0.55;
  const double sat = 0.75;
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double p = value * (1.0 - sat);
  const double q = value * (1.0 - sat * f);
  const double t = value * (1.0 - sat * (1.0 - f));
  switch (sector) {
    case 0: return {value, t, p};
    case 1: return {q, value, p};
    case 2: return {p, value, t};
    case 3: return {p, q, value};
    case 4: return {t, p, value};
    default: return {value, p, q};
  }
}

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

struct Box {
  int top, left, height, width;

  bool intersects(const Box& o) const {
    return top < o.top + o.height && o.top < top + height && left < o.left + o.width &&
           o.left < left + width;
  }
};

}  // namespace

Scene generate_scene(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  auto rng = make_rng(cfg.seed, index);
  PseudoMask gt(cfg.height, cfg.width, Label{0});

  std::uniform_int_distribution<int> shape_count(cfg.min_shapes, cfg.max_shapes);
  std::uniform_int_distribution<Label> shape_class(1, cfg.num_classes - 1);
  std::bernoulli_distribution is_ellipse(cfg.ellipses ? 0.5 : 0.0);
  const int max_h = std::min(cfg.max_shape_size, cfg.height);
  const int max_w = std::min(cfg.max_shape_size, cfg.width);
  const int min_h = std::min(cfg.min_shape_size, max_h);
  const int min_w = std::min(cfg.min_shape_size, max_w);
  std::uniform_int_distribution<int> size_h(min_h, max_h);
  std::uniform_int_distribution<int> size_w(min_w, max_w);

  std::vector<Box> placed;
  const int n = shape_count(rng);
  for (int s = 0; s < n; ++s) {
    const Label label = shape_class(rng);
    const bool ellipse = is_ellipse(rng);
    Box box{};
    bool ok = false;
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
      box.height = size_h(rng);
      box.width = size_w(rng);
      box.top = std::uniform_int_distribution<int>(0, cfg.height - box.height)(rng);
      box.left = std::uniform_int_distribution<int>(0, cfg.width - box.width)(rng);
      ok = cfg.allow_overlap || std::none_of(placed.begin(), placed.end(),
                                             [&](const Box& b) { return b.intersects(box); });
    }
    if (!ok) continue;
    placed.push_back(box);
    const double cy = box.top + box.height / 2.0;
    const double cx = box.left + box.width / 2.0;
    const double ry = box.height / 2.0;
    const double rx = box.width / 2.0;
    for (int r = box.top; r < box.top + box.height; ++r) {
      for (int c = box.left; c < box.left + box.width; ++c) {
        if (ellipse) {
          const double dy = (r + 0.5 - cy) / ry;
          const double dx = (c + 0.5 - cx) / rx;
          if (dy * dy + dx * dx > 1.0) continue;
        }
        gt.at(r, c) = label;
      }
    }
  }

  ImageGrid image(cfg.height, cfg.width, 3);
  std::normal_distribution<double> noise(0.0, cfg.noise_std > 0 ? cfg.noise_std : 1.0);
  for (int r = 0; r < cfg.height; ++r) {
    for (int c = 0; c < cfg.width; ++c) {
      const auto color = class_color(gt.at(r, c), cfg.num_classes);
      for (int ch = 0; ch < 3; ++ch) {
        double v = color[ch];
        if (cfg.noise_std > 0) v = std::clamp(v + noise(rng), 0.0, 1.0);
        image.at(r, c, ch) = v;
      }
    }
  }
  return {std::move(image), std::move(gt)};
}

std::pair<std::vector<int>, int> connected_components(const PseudoMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  std::vector<int> comp(static_cast<std::size_t>(h) * w, -1);
  std::vector<int> stack;
  int count = 0;
  for (int start = 0; start < h * w; ++start) {
    if (comp[start] >= 0) continue;
    const Label label = mask.labels()[start];
    comp[start] = count;
    stack.assign(1, start);
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      const int r = cur / w;
      const int c = cur % w;
      const int nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& nb : nbrs) {
        if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) continue;
        const int idx = nb[0] * w + nb[1];
        if (comp[idx] < 0 && mask.labels()[idx] == label) {
          comp[idx] = count;
          stack.push_back(idx);
        }
      }
    }
    ++count;
  }
  return {std::move(comp), count};
}

PointAnnotationSet sample_point_annotations(const PseudoMask& gt, std::uint64_t rng_seed,
                                            int interior_margin, bool skip_without_interior) {
  if (!gt.is_dense()) throw std::invalid_argument("sample_point_annotations: mask is not dense");
  const int h = gt.height();
  const int w = gt.width();
  const auto [comp, count] = connected_components(gt);

  std::vector<std::vector<int>> members(count);
  for (int i = 0; i < h * w; ++i) members[comp[i]].push_back(i);

  const auto is_interior = [&](int idx) {
    const int r = idx / w;
    const int c = idx % w;
    for (int dr = -interior_margin; dr <= interior_margin; ++dr) {
      for (int dc = -interior_margin; dc <= interior_margin; ++dc) {
        const int rr = r + dr;
        const int cc = c + dc;
        if (rr < 0 || rr >= h || cc < 0 || cc >= w || comp[rr * w + cc] != comp[idx]) {
          return false;
        }
      }
    }
    return true;
  };

  auto rng = make_rng(rng_seed, 0x706f696e74ULL);
  PointAnnotationSet out;
  for (const auto& pixels : members) {
    std::vector<int> candidates;
    if (interior_margin > 0) {
      std::copy_if(pixels.begin(), pixels.end(), std::back_inserter(candidates), is_interior);
    }
    if (candidates.empty() && skip_without_interior) continue;
    const auto& pool = candidates.empty() ? pixels : candidates;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const int idx = pool[pick(rng)];
    out.points.push_back({idx / w, idx % w, gt.labels()[idx]});
  }
  return out;
}

double annotation_stats(const Dataset& dataset) {
  if (dataset.samples.empty()) throw std::invalid_argument("annotation_stats: empty dataset");
  double total = 0.0;
  for (const auto& s : dataset.samples) total += static_cast<double>(s.mask.labeled_count());
  return total / static_cast<double>(dataset.samples.size());
}

namespace {

std::uint64_t point_seed(const SceneConfig& cfg, std::uint64_t index) {
  return cfg.seed * 0x9E3779B97F4A7C15ULL + index + 1;
}

std::string scene_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04llu", static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

Dataset generate_dataset(const SceneConfig& cfg, int count, std::uint64_t first_index,
                         int interior_margin) {
  Dataset ds;
  ds.num_classes = cfg.num_classes;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t index = first_index + static_cast<std::uint64_t>(i);
    auto scene = generate_scene(cfg, index);
    Sample s;
    s.id = scene_name(index);
    s.points = sample_point_annotations(scene.ground_truth, point_seed(cfg, index), interior_margin);
    s.points.image_id = s.id;
    s.mask = points_to_pseudo_mask(s.points, cfg.height, cfg.width);
    s.image = std::move(scene.image);
    s.ground_truth = std::move(scene.ground_truth);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

fs::path write_dataset(const fs::path& dir, const std::string& manifest_name,
                       const SceneConfig& cfg, int count, std::uint64_t first_index) {
  fs::create_directories(dir);
  const Dataset ds = generate_dataset(cfg, count, first_index);
  Manifest manifest;
  manifest.num_classes = cfg.num_classes;
  for (const auto& s : ds.samples) {
    ManifestEntry e{dir / (s.id + ".ppm"), dir / (s.id + ".pts"), dir / (s.id + "_gt.pgm")};
    save_image(e.image, s.image);
    save_points(e.annotation, s.points);
    save_mask(*e.ground_truth, *s.ground_truth);
    manifest.entries.push_back(std::move(e));
  }
  const fs::path manifest_path = dir / manifest_name;
  save_manifest(manifest_path, manifest);
  return manifest_path;
}

}  // namespace pdml
