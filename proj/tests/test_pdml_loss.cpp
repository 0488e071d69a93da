#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "pdml/pdml_loss.hpp"

using namespace pdml;

namespace {

EmbeddingPoint pt(std::vector<double> v, Label label, int image = 0) {
  return {std::move(v), label, image, 0, 0};
}

EmbeddingSet random_set(int image, int n, int classes, int dim, std::mt19937_64& rng) {
  EmbeddingSet s{image, {}};
  std::normal_distribution<double> g(0.0, 3.0);
  for (int i = 0; i < n; ++i) {
    EmbeddingPoint p;
    p.vector.resize(static_cast<std::size_t>(dim));
    for (double& x : p.vector) x = g(rng);
    p.label = static_cast<Label>(rng() % static_cast<std::uint64_t>(classes));
    p.image = image;
    p.row = i;
    s.points.push_back(std::move(p));
  }
  return s;
}

// Independent count: per anchor, min(#same class, #other class) in `others`.
std::size_t enumerate_count(const EmbeddingSet& anchors, const EmbeddingSet& others) {
  std::size_t total = 0;
  for (const auto& a : anchors.points) {
    std::size_t pos = 0, neg = 0;
    for (const auto& o : others.points) (o.label == a.label ? pos : neg) += 1;
    total += std::min(pos, neg);
  }
  return total;
}

}  // namespace

TEST_CASE("extract_embeddings gathers annotated pixels") {
  EmbeddingMap emb(32, 32, 3);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (double& v : emb.values()) v = g(rng);
  CHECK(extract_embeddings(emb, {}, 0).points.empty());
  PointAnnotationSet pts;
  for (int i = 0; i < 12; ++i) {
    pts.points.push_back({static_cast<int>(rng() % 32), static_cast<int>(rng() % 32),
                          static_cast<Label>(i % 3)});
  }
  const auto set = extract_embeddings(emb, pts, 7);
  REQUIRE(set.points.size() == 12);
  CHECK(set.image == 7);
  for (std::size_t i = 0; i < 12; ++i) {
    const auto& p = pts.points[i];
    CHECK(set.points[i].label == p.label);
    CHECK(set.points[i].image == 7);
    for (int d = 0; d < 3; ++d) CHECK(set.points[i].vector[d] == emb.at(p.row, p.col, d));
  }
  CHECK_THROWS_AS(extract_embeddings(emb, {"", {{32, 0, 1}}}, 0), std::invalid_argument);
}

TEST_CASE("loss_positive and loss_negative hand values") {
  CHECK(loss_positive(pt({1, 2, 3}, 1), pt({1, 2, 3}, 1)) == 0.0);
  CHECK(loss_positive(pt({3, 4, 0}, 1), pt({0, 0, 0}, 1)) == 5.0);
  CHECK_THROWS_AS(loss_positive(pt({0}, 1), pt({0}, 2)), std::invalid_argument);

  const auto a = pt({0, 0}, 1);
  CHECK(loss_negative(a, pt({5, 0}, 1), pt({30, 0}, 2), 20.0) == 0.0);
  CHECK(loss_negative(a, pt({5, 0}, 1), pt({0, 5}, 2), 20.0) == 20.0);
  CHECK(loss_negative(a, pt({5, 0}, 1), pt({0, 10}, 2), 20.0) == 15.0);
  CHECK_THROWS_AS(loss_negative(a, pt({5, 0}, 2), pt({0, 10}, 3), 20.0), std::invalid_argument);
  CHECK_THROWS_AS(loss_negative(a, pt({5, 0}, 1), pt({0, 10}, 1), 20.0), std::invalid_argument);
}

TEST_CASE("loss_triple") {
  const LossConfig cfg;  // m = 20, alpha = 0.8, beta = 1
  const auto a = pt({0, 0}, 1);
  const auto r = loss_triple(a, pt({5, 0}, 1), pt({0, 10}, 2), cfg);
  CHECK(r.positive_term == 5.0);
  CHECK(r.negative_term == 15.0);
  CHECK(r.value == doctest::Approx(19.0).epsilon(1e-15));

  const auto z = loss_triple(a, pt({5, 0}, 1), pt({0, 30}, 2), {20.0, 0.0, 1.0});
  CHECK(z.value == 0.0);
  for (double g : z.grad_anchor) CHECK(g == 0.0);

  SUBCASE("inactive hinge: gradients are alpha * dL_p with opposite signs") {
    const auto t = loss_triple(a, pt({3, 4}, 1), pt({0, 40}, 2), cfg);
    CHECK(t.negative_term == 0.0);
    for (int d = 0; d < 2; ++d) {
      CHECK(t.grad_anchor[d] == doctest::Approx(-t.grad_positive[d]));
      CHECK(t.grad_negative[d] == 0.0);
    }
    CHECK(t.grad_anchor[0] == doctest::Approx(0.8 * -0.6));
    CHECK(t.grad_anchor[1] == doctest::Approx(0.8 * -0.8));
  }
  SUBCASE("coincident anchor and positive") {
    const auto t = loss_triple(a, pt({0, 0}, 1), pt({0, 40}, 2), cfg);
    for (double g : t.grad_anchor) CHECK(g == 0.0);
    for (double g : t.grad_positive) CHECK(g == 0.0);
  }
  SUBCASE("gradients match central differences") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 4.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<EmbeddingPoint> v{pt({}, 1), pt({}, 1), pt({}, 2)};
      for (auto& p : v) {
        p.vector.resize(6);
        for (double& x : p.vector) x = g(rng);
      }
      const LossConfig c{trial % 2 == 0 ? 20.0 : 4.0, 0.8, 1.0};
      const auto t = loss_triple(v[0], v[1], v[2], c);
      // Skip the measure-zero neighbourhood of the hinge kink.
      if (std::abs(t.dist_positive - t.dist_negative + c.margin) < 1e-3) continue;
      const std::vector<const std::vector<double>*> grads{&t.grad_anchor, &t.grad_positive,
                                                          &t.grad_negative};
      for (int which = 0; which < 3; ++which) {
        for (int d = 0; d < 6; ++d) {
          auto up = v, dn = v;
          up[which].vector[d] += 1e-4;
          dn[which].vector[d] -= 1e-4;
          const double num = (loss_triple(up[0], up[1], up[2], c).value -
                              loss_triple(dn[0], dn[1], dn[2], c).value) / 2e-4;
          const double an = (*grads[which])[d];
          CHECK(std::abs(an - num) / std::max({std::abs(an), std::abs(num), 1e-7}) < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("L_p is a metric and homogeneous") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(5), y(5), z(5);
    for (int d = 0; d < 5; ++d) {
      x[d] = g(rng);
      y[d] = g(rng);
      z[d] = g(rng);
    }
    const double xy = l2_distance(x, y);
    CHECK(xy > 0.0);
    CHECK(xy == l2_distance(y, x));
    CHECK(l2_distance(x, x) == 0.0);
    CHECK(l2_distance(x, z) <= xy + l2_distance(y, z) + 1e-12);
    std::vector<double> cx(x), cy(y);
    for (int d = 0; d < 5; ++d) {
      cx[d] *= 2.5;
      cy[d] *= 2.5;
    }
    CHECK(l2_distance(cx, cy) == doctest::Approx(2.5 * xy).epsilon(1e-12));
  }
}

TEST_CASE("form_triples") {
  SUBCASE("no shared class") {
    EmbeddingSet n{0, {pt({0}, 1), pt({1}, 1)}};
    EmbeddingSet m{1, {pt({0}, 2, 1), pt({1}, 3, 1)}};
    CHECK(form_triples(n, m).empty());
  }
  SUBCASE("[1,2] against [1,2,2]") {
    EmbeddingSet n{0, {pt({0}, 1), pt({0}, 2)}};
    EmbeddingSet m{1, {pt({0}, 1, 1), pt({0}, 2, 1), pt({0}, 2, 1)}};
    const auto t = form_triples(n, m);
    REQUIRE(t.size() == 2);
    CHECK(t[0] == Triple{0, 0, 1});
    CHECK(t[1] == Triple{1, 1, 0});
  }
  SUBCASE("random sets: constraints, min count, at-most-once use") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 100; ++trial) {
      const auto n = random_set(0, 1 + static_cast<int>(rng() % 8), 3, 2, rng);
      const auto m = random_set(1, static_cast<int>(rng() % 9), 3, 2, rng);
      for (std::optional<std::uint64_t> seed : {std::optional<std::uint64_t>{}, {trial + 1ull}}) {
        const auto t = form_triples(n, m, seed);
        CHECK(t.size() == enumerate_count(n, m));
        std::vector<std::vector<int>> used(n.points.size(), std::vector<int>(m.points.size(), 0));
        for (const auto& tr : t) {
          CHECK(n.points[tr.anchor].label == m.points[tr.positive].label);
          CHECK(n.points[tr.anchor].label != m.points[tr.negative].label);
          CHECK(++used[tr.anchor][tr.positive] == 1);
          CHECK(++used[tr.anchor][tr.negative] == 1);
        }
      }
    }
  }
}

TEST_CASE("subgroup_pdml_loss") {
  std::mt19937_64 rng(12);
  const LossConfig cfg;
  SUBCASE("pair and triple subgroups visit every ordered pair") {
    for (int size : {2, 3, 4}) {
      std::vector<EmbeddingSet> sets;
      for (int i = 0; i < size; ++i) sets.push_back(random_set(i, 5, 3, 4, rng));
      const auto r = subgroup_pdml_loss(sets, cfg);
      std::size_t expected = 0;
      std::size_t pos = 0, neg = 0;
      double total = 0.0;
      for (int a = 0; a < size; ++a) {
        for (int b = 0; b < size; ++b) {
          if (a == b) continue;
          expected += enumerate_count(sets[a], sets[b]);
          for (const auto& tr : form_triples(sets[a], sets[b])) {
            total += loss_triple(sets[a].points[tr.anchor], sets[b].points[tr.positive],
                                 sets[b].points[tr.negative], cfg)
                         .value;
          }
          for (const auto& p : sets[a].points) {
            for (const auto& q : sets[b].points) (p.label == q.label ? pos : neg) += 1;
          }
        }
      }
      CHECK(r.triples == expected);
      CHECK(r.total == doctest::Approx(total).epsilon(1e-12));
      if (expected > 0) CHECK(r.mean == doctest::Approx(total / expected).epsilon(1e-12));
      CHECK(r.distances.positive.size() == pos);
      CHECK(r.distances.negative.size() == neg);
    }
  }
  SUBCASE("gradient of the mean matches central differences") {
    std::vector<EmbeddingSet> sets;
    for (int i = 0; i < 3; ++i) sets.push_back(random_set(i, 4, 2, 3, rng));
    const auto r = subgroup_pdml_loss(sets, cfg);
    REQUIRE(r.has_triples());
    for (std::size_t s = 0; s < sets.size(); ++s) {
      for (std::size_t p = 0; p < sets[s].points.size(); ++p) {
        for (int d = 0; d < 3; ++d) {
          auto up = sets, dn = sets;
          up[s].points[p].vector[d] += 1e-5;
          dn[s].points[p].vector[d] -= 1e-5;
          const double num =
              (subgroup_pdml_loss(up, cfg).mean - subgroup_pdml_loss(dn, cfg).mean) / 2e-5;
          CHECK(r.gradients[s][p * 3 + d] == doctest::Approx(num).epsilon(1e-6).scale(1e-8));
        }
      }
    }
  }
  SUBCASE("no triples and errors") {
    std::vector<EmbeddingSet> sets{{0, {pt({0}, 1)}}, {1, {pt({0}, 1, 1)}}};
    const auto r = subgroup_pdml_loss(sets, cfg);
    CHECK_FALSE(r.has_triples());
    CHECK(r.mean == 0.0);
    CHECK(r.distances.positive.size() == 2);
    CHECK_THROWS_AS(subgroup_pdml_loss(std::span(sets).first(1), cfg), std::invalid_argument);
    sets[1].image = 0;
    CHECK_THROWS_AS(subgroup_pdml_loss(sets, cfg), std::invalid_argument);
  }
}

TEST_CASE("distance_histograms") {
  SUBCASE("identical embeddings collapse at zero") {
    PairDistances d{{0.0, 0.0, 0.0}, {}};
    const auto h = distance_histograms(d, 10);
    CHECK(h.positive.counts[0] == 3);
    CHECK(h.positive.total() == 3);
    CHECK(h.mean_positive == 0.0);
    CHECK(std::isnan(h.mean_negative));
  }
  SUBCASE("two clusters ten apart") {
    std::vector<EmbeddingSet> sets{{0, {pt({0, 0}, 1), pt({0, 0}, 1), pt({10, 0}, 2)}},
                                   {1, {pt({0, 0}, 1, 1), pt({10, 0}, 2, 1), pt({10, 0}, 2, 1)}}};
    // Class 1 sits at the origin, class 2 at (10, 0).
    const auto r = subgroup_pdml_loss(sets, {});
    const auto h = distance_histograms(r.distances, 5);
    CHECK(h.mean_negative == doctest::Approx(10.0).epsilon(1e-14));
    CHECK(h.mean_positive == 0.0);
    CHECK(h.positive.total() + h.negative.total() ==
          r.distances.positive.size() + r.distances.negative.size());
    CHECK(h.negative.counts.back() == r.distances.negative.size());
  }
  SUBCASE("mass conservation on random data and CSV rows") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 40.0);
    PairDistances d;
    for (int i = 0; i < 500; ++i) (i % 3 ? d.negative : d.positive).push_back(u(rng));
    const auto h = distance_histograms(d, 50);
    CHECK(h.positive.total() == d.positive.size());
    CHECK(h.negative.total() == d.negative.size());
    CHECK(h.positive.lo == 0.0);
    const double max_seen = std::max(*std::max_element(d.negative.begin(), d.negative.end()),
                                     *std::max_element(d.positive.begin(), d.positive.end()));
    CHECK(h.positive.hi == max_seen);
    CHECK(h.negative.hi == max_seen);
    std::ostringstream rows, summary;
    write_histogram_rows(rows, 3, h);
    write_summary_row(summary, 3, h);
    int lines = 0;
    for (char c : rows.str()) lines += c == '\n';
    CHECK(lines == 100);
    CHECK(rows.str().rfind("3,+,0,", 0) == 0);
    CHECK(summary.str().rfind("3,", 0) == 0);
  }
  CHECK_THROWS_AS(distance_histograms({}, 10), std::invalid_argument);
}
