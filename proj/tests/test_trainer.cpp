#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "pdml/synthgen.hpp"
#include "pdml/trainer.hpp"

using namespace pdml;

namespace {

Dataset small_dataset(int count = 8, int size = 16) {
  SceneConfig sc;
  sc.height = size;
  sc.width = size;
  sc.min_shape_size = 4;
  sc.max_shape_size = 9;
  sc.seed = 3;
  return generate_dataset(sc, count);
}

NetConfig small_net() {
  NetConfig net;
  net.conv_channels = {6, 8, 8};
  return net;
}

TrainConfig small_train(PhaseSchedule phases) {
  TrainConfig cfg;
  cfg.phases = phases;
  cfg.batch_size = 4;
  cfg.subgroup_size = 2;
  cfg.pdml_weight = 0.3;
  return cfg;
}

}  // namespace

TEST_CASE("poly_lr") {
  CHECK(poly_lr(0.01, 0, 60, 0.8) == 0.01);
  CHECK(poly_lr(0.01, 60, 60, 0.8) == 0.0);
  CHECK(std::abs(poly_lr(0.00025, 30, 60, 0.8) - 0.00025 * std::pow(0.5, 0.8)) < 1e-12);
  CHECK(poly_lr(0.00025, 30, 60, 0.8) == doctest::Approx(1.436e-4).epsilon(1e-3));
  double prev = poly_lr(1.0, 0, 10, 0.8);
  for (int e = 1; e <= 10; ++e) {
    const double cur = poly_lr(1.0, e, 10, 0.8);
    CHECK(cur < prev);
    prev = cur;
  }
  CHECK_THROWS_AS(poly_lr(0.01, 61, 60, 0.8), std::invalid_argument);
  CHECK_THROWS_AS(poly_lr(0.01, -1, 60, 0.8), std::invalid_argument);
}

TEST_CASE("sgd_step") {
  NetConfig net = small_net();
  net.num_classes = 2;
  const auto base = init_params(net);
  const std::size_t n = base.size();
  const std::size_t feat = 0;
  const std::size_t cls = base.layout().classifier_begin();

  SUBCASE("zero gradient, zero velocity, no decay leaves params unchanged") {
    auto p = base;
    OptimizerState st(n);
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    sgd_step(p, std::vector<double>(n, 0.0), st, 0.1, cfg);
    CHECK(p == base);
  }
  SUBCASE("hand recurrence") {
    std::vector<double> v(n, 0.0);
    v[feat] = 1.0;
    ModelParams p(net, v);
    OptimizerState st(n);
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    std::vector<double> g(n, 0.0);
    g[feat] = 1.0;
    sgd_step(p, g, st, 0.1, cfg);
    CHECK(std::abs(p.values()[feat] - 0.9) < 1e-12);
    sgd_step(p, g, st, 0.1, cfg);
    CHECK(std::abs(st.velocity[feat] - 1.9) < 1e-12);
    CHECK(std::abs(p.values()[feat] - 0.71) < 1e-12);
  }
  SUBCASE("weight decay enters the velocity") {
    std::vector<double> v(n, 0.0);
    v[feat] = 2.0;
    ModelParams p(net, v);
    OptimizerState st(n);
    TrainConfig cfg;
    cfg.weight_decay = 0.5;
    sgd_step(p, std::vector<double>(n, 0.0), st, 0.1, cfg);
    CHECK(std::abs(st.velocity[feat] - 1.0) < 1e-12);
    CHECK(std::abs(p.values()[feat] - 1.9) < 1e-12);
  }
  SUBCASE("classifier parameters move ten times further") {
    ModelParams p(net, std::vector<double>(n, 0.0));
    OptimizerState st(n);
    TrainConfig cfg;
    std::vector<double> g(n, 0.0);
    g[feat] = 1.0;
    g[cls] = 1.0;
    sgd_step(p, g, st, 0.01, cfg);
    CHECK(p.values()[cls] == doctest::Approx(10.0 * p.values()[feat]).epsilon(1e-14));
    CHECK(p.values()[feat] == doctest::Approx(-0.01));
  }
  SUBCASE("non-finite gradient aborts") {
    auto p = base;
    OptimizerState st(n);
    std::vector<double> g(n, 0.0);
    g[3] = std::nan("");
    CHECK_THROWS_AS(sgd_step(p, g, st, 0.1, TrainConfig{}), std::runtime_error);
  }
}

TEST_CASE("make_subgroups") {
  const auto check_cover = [](const std::vector<std::vector<std::size_t>>& groups, std::size_t n) {
    std::set<std::size_t> seen;
    for (const auto& g : groups) {
      for (std::size_t i : g) CHECK(seen.insert(i).second);
    }
    CHECK(seen.size() == n);
  };
  std::vector<std::size_t> eight(8), nine(9);
  std::iota(eight.begin(), eight.end(), std::size_t{0});
  std::iota(nine.begin(), nine.end(), std::size_t{0});
  const auto g8 = make_subgroups(eight, 4, 1);
  REQUIRE(g8.size() == 2);
  CHECK(g8[0].size() == 4);
  CHECK(g8[1].size() == 4);
  check_cover(g8, 8);
  const auto g9 = make_subgroups(nine, 4, 1);
  REQUIRE(g9.size() == 2);
  CHECK(g9[0].size() == 4);
  CHECK(g9[1].size() == 5);
  check_cover(g9, 9);
  CHECK(make_subgroups(nine, 4, 1) == g9);
  CHECK(make_subgroups(nine, 4, 2) != g9);
  CHECK(make_subgroups(std::span(eight).first(3), 2, 0).size() == 1);
  CHECK_THROWS_AS(make_subgroups(eight, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_subgroups(std::span(eight).first(1), 2, 0), std::invalid_argument);
}

TEST_CASE("crop_sample shifts points and drops those outside") {
  const auto ds = small_dataset(1);
  const Sample& s = ds.samples[0];
  const auto c = crop_sample(s, 2, 3, 8, 9);
  CHECK(c.image.height() == 8);
  CHECK(c.image.width() == 9);
  std::size_t inside = 0;
  for (const auto& p : s.points.points) {
    if (p.row >= 2 && p.row < 10 && p.col >= 3 && p.col < 12) ++inside;
  }
  CHECK(c.points.points.size() == inside);
  for (const auto& p : c.points.points) {
    CHECK(c.ground_truth->at(p.row, p.col) == p.label);
    CHECK(s.ground_truth->at(p.row + 2, p.col + 3) == p.label);
    CHECK(c.mask.at(p.row, p.col) == p.label);
  }
  for (int ch = 0; ch < 3; ++ch) CHECK(c.image.at(0, 0, ch) == s.image.at(2, 3, ch));
  CHECK_THROWS_AS(crop_sample(s, 10, 0, 8, 8), std::invalid_argument);

  std::mt19937_64 rng(1);
  const auto r = random_crop(s, 0, rng);
  CHECK(r.image == s.image);
  const auto r2 = random_crop(s, 10, rng);
  CHECK(r2.image.height() == 10);
}

TEST_CASE("point-only schedule equals a lambda = 0 run parameter for parameter") {
  const auto ds = small_dataset();
  auto a = small_train({3, 0, 0});
  auto b = small_train({1, 2, 0});
  b.pdml_weight = 0.0;
  const auto ra = train(ds, small_net(), a);
  const auto rb = train(ds, small_net(), b);
  CHECK(ra.params == rb.params);
}

TEST_CASE("training is deterministic and the loss decreases") {
  const auto ds = small_dataset();
  const auto cfg = small_train({2, 3, 1});
  TrainOptions opt;
  opt.record_distances = true;
  const auto r1 = train(ds, small_net(), cfg, opt);
  const auto r2 = train(ds, small_net(), cfg, opt);
  CHECK(r1.params == r2.params);
  REQUIRE(r1.log.size() == 6);
  CHECK(r1.distances.size() == 6);
  CHECK(r1.log.front().ce_loss > r1.log[4].ce_loss);
  for (const auto& row : r1.log) {
    CHECK(std::isfinite(row.mean_pos_dist));
    CHECK(std::isfinite(row.ce_loss));
    CHECK(row.miou >= 0.0);
    CHECK(row.miou <= 1.0);
  }
  CHECK(r1.log[0].phase == 1);
  CHECK(r1.log[2].phase == 2);
  CHECK(r1.log[5].phase == 3);
  CHECK(r1.log[0].extended_pixels == 0);
  CHECK(r1.log[5].extended_pixels > 0);
  for (std::size_t e = 1; e < r1.log.size(); ++e) CHECK(r1.log[e].lr < r1.log[e - 1].lr);

  std::ostringstream csv;
  write_log_header(csv);
  write_log_row(csv, r1.log[0]);
  CHECK(csv.str().rfind("epoch,lr,ce_loss,pdml_loss,triples,mean_pos_dist,mean_neg_dist,miou,pixel_acc\n1,", 0) == 0);

  auto other = cfg;
  other.seed = 1;
  CHECK_FALSE(train(ds, small_net(), other).params == r1.params);
}

TEST_CASE("train rejects inconsistent inputs") {
  auto ds = small_dataset(2);
  NetConfig net = small_net();
  net.num_classes = 3;
  CHECK_THROWS_AS(train(ds, net, small_train({1, 0, 0})), std::invalid_argument);
  CHECK_THROWS_AS(train(Dataset{{}, 6}, small_net(), small_train({1, 0, 0})), std::invalid_argument);
  auto bad = small_train({1, 0, 0});
  bad.momentum = 1.0;
  CHECK_THROWS_AS(train(ds, small_net(), bad), std::invalid_argument);
  CHECK(PhaseSchedule{}.total() == 60);
  CHECK(PhaseSchedule{}.phase_of(3) == 1);
  CHECK(PhaseSchedule{}.phase_of(4) == 2);
  CHECK(PhaseSchedule{}.phase_of(52) == 3);
}

TEST_CASE("evaluate needs dense ground truth") {
  auto ds = small_dataset(2);
  const auto p = init_params(small_net());
  const auto ev = evaluate(ds, p);
  CHECK(ev.confusion.total() == 2u * 16 * 16);
  ds.samples[1].ground_truth.reset();
  CHECK_THROWS_AS(evaluate(ds, p), std::invalid_argument);
}
