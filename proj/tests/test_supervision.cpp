#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gfrnet/supervision.hpp"

using namespace gfrnet;

namespace {

GroundTruth make_gt(int64_t h, int64_t w, std::vector<int32_t> v) {
  GroundTruth gt;
  gt.labels = LabelMap(1, h, w);
  gt.labels.v = std::move(v);
  return gt;
}

}  // namespace

TEST_CASE("resize_gt: 2x2 to 1x1 picks the stated center sample") {
  // [[A,B],[C,D]] -> [D] since floor(0.5 * 2) = 1 on both axes
  auto gt = make_gt(2, 2, {10, 11, 12, 13});
  auto out = resize_gt(gt, 1, 1);
  CHECK(out.labels.v == std::vector<int32_t>{13});
}

TEST_CASE("resize_gt: identity resize returns the identical map") {
  auto gt = make_gt(4, 2, {0, 1, 2, 3, 4, 5, 6, 7});
  auto out = resize_gt(gt, 4, 2);
  CHECK(out.labels == gt.labels);
}

TEST_CASE("resize_gt: constant map stays constant at any size") {
  auto gt = make_gt(8, 8, std::vector<int32_t>(64, 5));
  for (int64_t s : {8, 4, 2, 1}) {
    auto out = resize_gt(gt, s, s);
    for (int32_t v : out.labels.v) CHECK(v == 5);
  }
}

TEST_CASE("resize_gt: ignore_index propagates like any label") {
  auto gt = make_gt(2, 2, {255, 255, 255, 255});
  auto out = resize_gt(gt, 1, 1);
  CHECK(out.labels.v[0] == 255);
}

TEST_CASE("resize_gt: non-power-of-2 and non-dividing ratios are errors") {
  auto gt = make_gt(6, 6, std::vector<int32_t>(36, 0));
  CHECK_THROWS_AS(resize_gt(gt, 2, 2), ShapeError);   // ratio 3
  CHECK_THROWS_AS(resize_gt(gt, 4, 4), ShapeError);   // does not divide
  auto gt2 = make_gt(8, 4, std::vector<int32_t>(32, 0));
  CHECK_THROWS_AS(resize_gt(gt2, 4, 4), ShapeError);  // axis ratios differ
}

TEST_CASE("resize_gt commutes with class relabeling") {
  Prng rng(31);
  GroundTruth gt;
  gt.labels = LabelMap(1, 8, 8);
  for (auto& v : gt.labels.v) v = static_cast<int32_t>(rng.next_below(4));
  const int32_t perm[4] = {2, 0, 3, 1};

  auto relabel = [&](const GroundTruth& g) {
    GroundTruth out = g;
    for (auto& v : out.labels.v) v = perm[v];
    return out;
  };
  auto a = relabel(resize_gt(gt, 4, 4));
  auto b = resize_gt(relabel(gt), 4, 4);
  CHECK(a.labels == b.labels);
}

TEST_CASE("class_weights: equal counts give unit weights") {
  auto w = class_weights({100, 100, 100, 100});
  for (double v : w) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("class_weights: frequencies {0.5, 0.3, 0.2} give {0.6, 1.0, 1.5}") {
  auto w = class_weights({50, 30, 20});
  CHECK(w[0] == doctest::Approx(0.6));
  CHECK(w[1] == doctest::Approx(1.0));
  CHECK(w[2] == doctest::Approx(1.5));
}

TEST_CASE("class_weights: single present class gets 1, absent get 0") {
  auto w = class_weights({0, 42, 0});
  CHECK(w[0] == 0.0);
  CHECK(w[1] == doctest::Approx(1.0));
  CHECK(w[2] == 0.0);
}

TEST_CASE("class_weights: all-zero counts is an error") {
  CHECK_THROWS_AS(class_weights({0, 0, 0}), DataError);
}

TEST_CASE("count_labels skips ignore and rejects out-of-range") {
  auto gt = make_gt(2, 2, {0, 1, 255, 1});
  auto c = count_labels(gt, 3);
  CHECK(c == std::vector<int64_t>{1, 2, 0});
  auto bad = make_gt(1, 1, {9});
  CHECK_THROWS_AS(count_labels(bad, 3), DataError);
}

TEST_CASE("stage_losses: one loss per stage, resized to each resolution") {
  Graph<Real> g;
  Prng rng(3);
  const int64_t C = 3;
  std::vector<int> maps;
  for (int64_t s : {2, 4, 8}) {
    Tensor t(Shape{1, C, s, s});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(rng.next_double() - 0.5);
    maps.push_back(g.leaf(t));
  }
  GroundTruth gt;
  gt.labels = LabelMap(1, 8, 8);
  for (auto& v : gt.labels.v) v = static_cast<int32_t>(rng.next_below(C));

  auto lb = stage_losses(g, maps, gt, std::vector<Real>(C, 1), {1.0, 1.0, 1.0});
  CHECK(lb.per_stage.size() == 3);
  double sum = 0;
  for (double v : lb.per_stage) {
    CHECK(v > 0);
    sum += v;
  }
  CHECK(lb.total == doctest::Approx(sum).epsilon(1e-6));
}

TEST_CASE("stage_losses: zero weights except the last reduce total to the final stage") {
  Graph<Real> g;
  Prng rng(5);
  std::vector<int> maps;
  for (int64_t s : {2, 4}) {
    Tensor t(Shape{1, 2, s, s});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(rng.next_double());
    maps.push_back(g.leaf(t));
  }
  GroundTruth gt;
  gt.labels = LabelMap(1, 4, 4);
  for (auto& v : gt.labels.v) v = static_cast<int32_t>(rng.next_below(2));

  auto lb = stage_losses(g, maps, gt, std::vector<Real>(2, 1), {0.0, 1.0});
  CHECK(lb.total == doctest::Approx(lb.per_stage[1]).epsilon(1e-7));
}

TEST_CASE("stage_losses: one-hot-aligned logits give near-zero total") {
  Graph<Real> g;
  GroundTruth gt;
  gt.labels = LabelMap(1, 4, 4);
  Prng rng(7);
  for (auto& v : gt.labels.v) v = static_cast<int32_t>(rng.next_below(4));

  std::vector<int> maps;
  for (int64_t s : {2, 4}) {
    auto resized = resize_gt(gt, s, s);
    Tensor t(Shape{1, 4, s, s});
    for (int64_t y = 0; y < s; ++y)
      for (int64_t x = 0; x < s; ++x) t.at(0, resized.labels.at(0, y, x), y, x) = 30;
    maps.push_back(g.leaf(t));
  }
  auto lb = stage_losses(g, maps, gt, std::vector<Real>(4, 1), {1.0, 1.0});
  CHECK(lb.total < 1e-5);
}

TEST_CASE("stage_losses: ignored pixels cannot influence loss or gradients") {
  GroundTruth gt;
  gt.labels = LabelMap(1, 2, 2);
  gt.labels.v = {0, 255, 1, 1};
  Prng rng(9);
  Tensor t(Shape{1, 2, 2, 2});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(rng.next_double());

  Graph<Real> g;
  const int node = g.leaf(t);
  auto lb = stage_losses(g, {node}, gt, std::vector<Real>(2, 1), {1.0});
  g.backward(lb.total_node);
  CHECK(g.grad(node).at(0, 0, 0, 1) == 0);
  CHECK(g.grad(node).at(0, 1, 0, 1) == 0);

  Tensor t2 = t;
  t2.at(0, 0, 0, 1) += 3;
  t2.at(0, 1, 0, 1) -= 2;
  Graph<Real> g2;
  auto lb2 = stage_losses(g2, {g2.leaf(t2)}, gt, std::vector<Real>(2, 1), {1.0});
  CHECK(lb2.total == lb.total);
}

TEST_CASE("scaling class weights by a power of two scales losses and gradients bitwise") {
  Prng rng(11);
  const int64_t C = 3;
  GroundTruth gt;
  gt.labels = LabelMap(1, 4, 4);
  for (auto& v : gt.labels.v) v = static_cast<int32_t>(rng.next_below(C));
  Tensor t(Shape{1, C, 4, 4});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(2 * rng.next_double() - 1);

  const std::vector<Real> wt1 = {Real(0.5), Real(1.25), Real(2)};
  std::vector<Real> wt2;
  for (Real w : wt1) wt2.push_back(2 * w);

  Graph<Real> g1, g2;
  const int n1 = g1.leaf(t), n2 = g2.leaf(t);
  auto lb1 = stage_losses(g1, {n1}, gt, wt1, {1.0});
  auto lb2 = stage_losses(g2, {n2}, gt, wt2, {1.0});
  g1.backward(lb1.total_node);
  g2.backward(lb2.total_node);

  CHECK(lb2.total == 2 * lb1.total);
  CHECK(lb2.per_stage[0] == 2 * lb1.per_stage[0]);
  for (int64_t i = 0; i < t.size(); ++i) CHECK(g2.grad(n2)[i] == 2 * g1.grad(n1)[i]);
}
