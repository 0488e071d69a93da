#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "pdml/synthgen.hpp"

using namespace pdml;
namespace fs = std::filesystem;

namespace {

// Independent flood fill used as the component oracle.
int count_components_bruteforce(const PseudoMask& m, Label label) {
  std::vector<int> seen(m.labels().size(), 0);
  int count = 0;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (m.at(r, c) != label || seen[r * m.width() + c]) continue;
      ++count;
      std::vector<std::pair<int, int>> queue{{r, c}};
      seen[r * m.width() + c] = 1;
      for (std::size_t q = 0; q < queue.size(); ++q) {
        const auto [y, x] = queue[q];
        for (auto [dy, dx] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy < 0 || yy >= m.height() || xx < 0 || xx >= m.width()) continue;
          if (m.at(yy, xx) != label || seen[yy * m.width() + xx]) continue;
          seen[yy * m.width() + xx] = 1;
          queue.push_back({yy, xx});
        }
      }
    }
  }
  return count;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("empty scene is all background") {
  SceneConfig cfg;
  cfg.min_shapes = 0;
  cfg.max_shapes = 0;
  const auto scene = generate_scene(cfg, 3);
  for (Label l : scene.ground_truth.labels()) CHECK(l == 0);
}

TEST_CASE("generate_scene is deterministic in (seed, index)") {
  SceneConfig cfg;
  cfg.seed = 42;
  const auto a = generate_scene(cfg, 5);
  const auto b = generate_scene(cfg, 5);
  CHECK(a.image == b.image);
  CHECK(a.ground_truth == b.ground_truth);
  const auto c = generate_scene(cfg, 6);
  CHECK_FALSE(a.ground_truth == c.ground_truth);
}

TEST_CASE("noise-free pixels carry exactly their class color") {
  SceneConfig cfg;
  cfg.noise_std = 0.0;
  cfg.num_classes = 6;
  for (std::uint64_t index = 0; index < 20; ++index) {
    const auto scene = generate_scene(cfg, index);
    for (int r = 0; r < cfg.height; ++r) {
      for (int c = 0; c < cfg.width; ++c) {
        const auto color = class_color(scene.ground_truth.at(r, c), cfg.num_classes);
        for (int ch = 0; ch < 3; ++ch) REQUIRE(scene.image.at(r, c, ch) == color[ch]);
      }
    }
  }
}

TEST_CASE("class colors are pairwise distinct") {
  for (int k : {2, 6, 20, 255}) {
    for (int a = 0; a < k; ++a) {
      for (int b = a + 1; b < k; ++b) CHECK(class_color(a, k) != class_color(b, k));
    }
  }
}

TEST_CASE("sample_point_annotations: one point per component") {
  SUBCASE("single class mask") {
    const auto pts = sample_point_annotations(PseudoMask(8, 8, Label{2}), 1);
    REQUIRE(pts.points.size() == 1);
    CHECK(pts.points[0].label == 2);
  }
  SUBCASE("two disjoint class-1 rectangles") {
    PseudoMask m(10, 10, Label{0});
    for (int r = 1; r < 4; ++r) {
      for (int c = 1; c < 4; ++c) m.at(r, c) = 1;
    }
    for (int r = 6; r < 9; ++r) {
      for (int c = 5; c < 9; ++c) m.at(r, c) = 1;
    }
    const auto pts = sample_point_annotations(m, 3);
    int ones = 0;
    for (const auto& p : pts.points) ones += p.label == 1;
    CHECK(ones == count_components_bruteforce(m, 1));
    CHECK(ones == 2);
  }
  SUBCASE("random scenes match the flood-fill oracle and gt labels") {
    SceneConfig cfg;
    for (std::uint64_t i = 0; i < 30; ++i) {
      const auto scene = generate_scene(cfg, i);
      const auto pts = sample_point_annotations(scene.ground_truth, i);
      std::map<Label, int> per_class;
      for (const auto& p : pts.points) {
        CHECK(scene.ground_truth.at(p.row, p.col) == p.label);
        ++per_class[p.label];
      }
      int total = 0;
      for (Label l : class_set(scene.ground_truth)) {
        const int expected = count_components_bruteforce(scene.ground_truth, l);
        CHECK(per_class[l] == expected);
        total += expected;
      }
      CHECK(static_cast<int>(pts.points.size()) == total);
      CHECK(class_set(points_to_pseudo_mask(pts, cfg.height, cfg.width)) ==
            class_set(scene.ground_truth));
      CHECK(pts.points == sample_point_annotations(scene.ground_truth, i).points);
    }
  }
  SUBCASE("rejects sparse masks") {
    CHECK_THROWS_AS(sample_point_annotations(PseudoMask(2, 2), 0), std::invalid_argument);
  }
}

TEST_CASE("interior sampling keeps the square inside the component") {
  SceneConfig cfg;
  cfg.min_shape_size = 9;
  cfg.allow_overlap = false;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto scene = generate_scene(cfg, i);
    const auto pts = sample_point_annotations(scene.ground_truth, i, 2, true);
    const auto [comp, n] = connected_components(scene.ground_truth);
    (void)n;
    for (const auto& p : pts.points) {
      const int id = comp[p.row * cfg.width + p.col];
      for (int dr = -2; dr <= 2; ++dr) {
        for (int dc = -2; dc <= 2; ++dc) {
          const int r = p.row + dr;
          const int c = p.col + dc;
          REQUIRE(r >= 0);
          REQUIRE(r < cfg.height);
          REQUIRE(c >= 0);
          REQUIRE(c < cfg.width);
          CHECK(comp[r * cfg.width + c] == id);
        }
      }
    }
  }
}

TEST_CASE("components without an interior fall back or are skipped") {
  // A 2-wide strip of class 1 beside a 5x5 block of class 0 with one interior pixel.
  PseudoMask gt(5, 7, Label{0});
  for (int r = 0; r < 5; ++r) {
    gt.at(r, 5) = 1;
    gt.at(r, 6) = 1;
  }
  const auto loose = sample_point_annotations(gt, 3, 2);
  REQUIRE(loose.points.size() == 2);
  CHECK(loose.points[0].label == 0);
  CHECK(loose.points[0].row == 2);
  CHECK(loose.points[0].col == 2);
  CHECK(loose.points[1].label == 1);
  CHECK(loose.points[1].col >= 5);
  const auto strict = sample_point_annotations(gt, 3, 2, true);
  REQUIRE(strict.points.size() == 1);
  CHECK(strict.points[0].label == 0);
}

TEST_CASE("annotation_stats") {
  Dataset ds;
  const auto add = [&](int n) {
    Sample s;
    s.image = ImageGrid(4, 4, 1);
    for (int i = 0; i < n; ++i) s.points.points.push_back({i / 4, i % 4, 0});
    s.mask = points_to_pseudo_mask(s.points, 4, 4);
    ds.samples.push_back(s);
  };
  CHECK_THROWS_AS(annotation_stats(ds), std::invalid_argument);
  add(5);
  CHECK(annotation_stats(ds) == 5.0);
  ds.samples.clear();
  add(2);
  add(4);
  add(6);
  CHECK(annotation_stats(ds) == 4.0);
}

TEST_CASE("write_dataset is byte-identical for the same config") {
  const auto root = fs::temp_directory_path() / "pdml_test_synthgen_bytes";
  fs::remove_all(root);
  SceneConfig cfg;
  cfg.seed = 17;
  write_dataset(root / "a", "manifest.txt", cfg, 4);
  write_dataset(root / "b", "manifest.txt", cfg, 4);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root / "a")) names.push_back(e.path().filename().string());
  CHECK(names.size() == 4 * 3 + 1);
  for (const auto& n : names) CHECK(slurp(root / "a" / n) == slurp(root / "b" / n));
}
