#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>

#include "pdml/griddata.hpp"

namespace pdml {

// Synthetic scene parameters. Class 0 is the background; shapes take classes
// 1..num_classes-1.
struct SceneConfig {
  int height = 32;
  int width = 32;
  int num_classes = 6;
  int min_shapes = 2;
  int max_shapes = 4;
  int min_shape_size = 7;
  int max_shape_size = 16;
  double noise_std = 0.05;
  bool ellipses = true;
  // When false, shapes are placed without overlapping earlier shapes (bounded
  // retries; a shape that cannot be placed is dropped).
  bool allow_overlap = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Mean color of a class; distinct for every class id.
std::array<double, 3> class_color(Label label, int num_classes);

struct Scene {
  ImageGrid image;
  PseudoMask ground_truth;
};

// Deterministic in (cfg.seed, index).
Scene generate_scene(const SceneConfig& cfg, std::uint64_t index);

// One point per 4-connected component of each class, uniform within the
// component. With interior_margin > 0 the point is drawn from component pixels
// whose (2m+1)^2 neighborhood lies entirely inside the component, falling back
// to the whole component when no such pixel exists, or skipping the component
// when skip_without_interior is set. Points are ordered by component discovery
// in raster order.
PointAnnotationSet sample_point_annotations(const PseudoMask& ground_truth,
                                            std::uint64_t rng_seed,
                                            int interior_margin = 0,
                                            bool skip_without_interior = false);

// 4-connected component ids in raster discovery order, and the component count.
std::pair<std::vector<int>, int> connected_components(const PseudoMask& mask);

// Mean number of annotated pixels per image. Throws on an empty dataset.
double annotation_stats(const Dataset& dataset);

// In-memory dataset of scenes [first_index, first_index + count).
Dataset generate_dataset(const SceneConfig& cfg, int count, std::uint64_t first_index = 0,
                         int interior_margin = 0);

// Writes scene_NNNN.ppm / .pts / _gt.pgm files plus a manifest. Returns the
// manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                    const std::string& manifest_name, const SceneConfig& cfg,
                                    int count, std::uint64_t first_index = 0);

}  // namespace pdml
