#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gfrnet/autodiff.hpp"
#include "gfrnet/gradcheck.hpp"

using namespace gfrnet;
using Td = TensorT<double>;

namespace {

Td scalar_weights(int64_t c, double v) { return Td(Shape{1, c, 1, 1}, v); }

Td random_tensor(Prng& rng, Shape s, double lo = -1, double hi = 1) {
  Td t(s);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.next_double();
  return t;
}

}  // namespace

TEST_CASE("conv3x3: center-delta kernel reproduces the input") {
  Graph<double> g;
  Prng rng(3);
  const int x = g.leaf(random_tensor(rng, {2, 2, 4, 4}));
  Td w(Shape{2, 2, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  w.at(1, 1, 1, 1) = 1.0;
  const int out = g.conv3x3(x, g.leaf(w), g.leaf(scalar_weights(2, 0)));
  for (int64_t i = 0; i < g.value(x).size(); ++i) CHECK(g.value(out)[i] == g.value(x)[i]);
}

TEST_CASE("conv3x3: all-ones kernel on all-ones 3x3 input counts the padded window") {
  Graph<double> g;
  const int x = g.leaf(Td(Shape{1, 1, 3, 3}, 1.0));
  const int out = g.conv3x3(x, g.leaf(Td(Shape{1, 1, 3, 3}, 1.0)), g.leaf(scalar_weights(1, 0)));
  CHECK(g.value(out).at(0, 0, 1, 1) == 9.0);
  CHECK(g.value(out).at(0, 0, 0, 0) == 4.0);
  CHECK(g.value(out).at(0, 0, 0, 2) == 4.0);
  CHECK(g.value(out).at(0, 0, 2, 0) == 4.0);
  CHECK(g.value(out).at(0, 0, 2, 2) == 4.0);
  CHECK(g.value(out).at(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv3x3: channel mismatch is an error") {
  Graph<double> g;
  const int x = g.leaf(Td(Shape{1, 2, 4, 4}));
  const int w = g.leaf(Td(Shape{3, 1, 3, 3}));
  CHECK_THROWS_AS(g.conv3x3(x, w, g.leaf(scalar_weights(3, 0))), ShapeError);
}

TEST_CASE("maxpool2x2: window max and odd-dim error") {
  Graph<double> g;
  const int x = g.leaf(Td(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  const int out = g.maxpool2x2(x);
  CHECK(g.value(out).size() == 1);
  CHECK(g.value(out)[0] == 4.0);

  const int odd = g.leaf(Td(Shape{1, 1, 3, 2}));
  CHECK_THROWS_WITH_AS(g.maxpool2x2(odd), doctest::Contains("pad or crop"), ShapeError);
}

TEST_CASE("maxpool2x2: tie routes gradient to the first window element in row-major scan") {
  Graph<double> g;
  const int x = g.leaf(Td(Shape{1, 1, 4, 4}, 2.5));
  const int out = g.maxpool2x2(x);
  for (int64_t i = 0; i < 4; ++i) CHECK(g.value(out)[i] == 2.5);

  Td seed(Shape{1, 1, 2, 2}, 1.0);
  g.backward(out, &seed);
  const Td& dx = g.grad(x);
  for (int64_t y = 0; y < 4; ++y) {
    for (int64_t xx = 0; xx < 4; ++xx) {
      const double expect = (y % 2 == 0 && xx % 2 == 0) ? 1.0 : 0.0;
      CHECK(dx.at(0, 0, y, xx) == expect);
    }
  }
}

TEST_CASE("relu forward") {
  Graph<double> g;
  const int x = g.leaf(Td(Shape{1, 1, 1, 3}, std::vector<double>{-1, 0, 2}));
  const int out = g.relu(x);
  CHECK(g.value(out)[0] == 0.0);
  CHECK(g.value(out)[1] == 0.0);
  CHECK(g.value(out)[2] == 2.0);

  Graph<double> g2;
  Prng rng(5);
  const int p = g2.leaf(random_tensor(rng, {1, 2, 3, 3}, 0.1, 1.0));
  const int id = g2.relu(p);
  for (int64_t i = 0; i < g2.value(p).size(); ++i) CHECK(g2.value(id)[i] == g2.value(p)[i]);
}

TEST_CASE("batchnorm: constant input with unit gamma maps to zero") {
  Graph<double> g;
  auto state = BatchNormState<double>::make(2);
  const int x = g.leaf(Td(Shape{1, 2, 4, 4}, 3.7));
  const int out = g.batchnorm(x, g.leaf(scalar_weights(2, 1)), g.leaf(scalar_weights(2, 0)), state);
  for (int64_t i = 0; i < g.value(out).size(); ++i) CHECK(g.value(out)[i] == 0.0);
}

TEST_CASE("batchnorm: zero gamma broadcasts beta") {
  Graph<double> g;
  auto state = BatchNormState<double>::make(1);
  Prng rng(8);
  const int x = g.leaf(random_tensor(rng, {2, 1, 2, 2}));
  const int out = g.batchnorm(x, g.leaf(scalar_weights(1, 0)), g.leaf(scalar_weights(1, -0.25)), state);
  for (int64_t i = 0; i < g.value(out).size(); ++i) CHECK(g.value(out)[i] == -0.25);
}

TEST_CASE("batchnorm: channel mismatch is an error") {
  Graph<double> g;
  auto state = BatchNormState<double>::make(2);
  const int x = g.leaf(Td(Shape{1, 2, 2, 2}));
  CHECK_THROWS_AS(g.batchnorm(x, g.leaf(scalar_weights(3, 1)), g.leaf(scalar_weights(3, 0)), state),
                  ShapeError);
}

TEST_CASE("batchnorm: train mode updates running stats with the stated momentum") {
  auto state = BatchNormState<double>::make(1);
  state.momentum = 0.25;
  Graph<double> g;
  // channel values {0, 2}: mean 1, biased var 1
  const int x = g.leaf(Td(Shape{1, 1, 1, 2}, std::vector<double>{0, 2}));
  g.batchnorm(x, g.leaf(scalar_weights(1, 1)), g.leaf(scalar_weights(1, 0)), state);
  CHECK(state.running_mean[0] == doctest::Approx(0.75 * 0.0 + 0.25 * 1.0));
  CHECK(state.running_var[0] == doctest::Approx(0.75 * 1.0 + 0.25 * 1.0));
  CHECK(state.running_var[0] >= 0.0);
}

TEST_CASE("batchnorm: infer mode normalizes with running stats and leaves them unchanged") {
  auto state = BatchNormState<double>::make(1);
  state.running_mean[0] = 2.0;
  state.running_var[0] = 4.0;
  state.epsilon = 0.0;
  state.mode = BnMode::infer;
  Graph<double> g;
  const int x = g.leaf(Td(Shape{1, 1, 1, 2}, std::vector<double>{2, 6}));
  const int out = g.batchnorm(x, g.leaf(scalar_weights(1, 1)), g.leaf(scalar_weights(1, 0)), state);
  CHECK(g.value(out)[0] == doctest::Approx(0.0));
  CHECK(g.value(out)[1] == doctest::Approx(2.0));
  CHECK(state.running_mean[0] == 2.0);
  CHECK(state.running_var[0] == 4.0);
}

TEST_CASE("bilinear_up2x: constant input stays constant and the mean is preserved exactly") {
  Graph<double> g;
  const int x = g.leaf(Td(Shape{2, 3, 3, 5}, 0.731));
  const int out = g.bilinear_up2x(x);
  for (int64_t i = 0; i < g.value(out).size(); ++i) CHECK(g.value(out)[i] == 0.731);
}

TEST_CASE("bilinear_up2x: 2x2 half-pixel-center reference values") {
  Graph<double> g;
  const int x = g.leaf(Td(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  const int out = g.bilinear_up2x(x);
  const double expect[4][4] = {{1, 1.25, 1.75, 2},
                               {1.5, 1.75, 2.25, 2.5},
                               {2.5, 2.75, 3.25, 3.5},
                               {3, 3.25, 3.75, 4}};
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t xx = 0; xx < 4; ++xx)
      CHECK(g.value(out).at(0, 0, y, xx) == doctest::Approx(expect[y][xx]).epsilon(1e-12));
}

TEST_CASE("concat_channels: ordering, empty identity, and gradient split") {
  Graph<double> g;
  Prng rng(12);
  Td a = random_tensor(rng, {1, 3, 2, 2});
  Td b = random_tensor(rng, {1, 3, 2, 2});
  const int na = g.leaf(a), nb = g.leaf(b);
  const int out = g.concat_channels(na, nb);
  CHECK(g.value(out).shape() == Shape{1, 6, 2, 2});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 4; ++i) {
      CHECK(g.value(out).at(0, c, i / 2, i % 2) == a.at(0, c, i / 2, i % 2));
      CHECK(g.value(out).at(0, 3 + c, i / 2, i % 2) == b.at(0, c, i / 2, i % 2));
    }

  Td seed = random_tensor(rng, {1, 6, 2, 2});
  g.backward(out, &seed);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 4; ++i) {
      CHECK(g.grad(na).at(0, c, i / 2, i % 2) == seed.at(0, c, i / 2, i % 2));
      CHECK(g.grad(nb).at(0, c, i / 2, i % 2) == seed.at(0, 3 + c, i / 2, i % 2));
    }

  Graph<double> g2;
  const int x = g2.leaf(a);
  const int empty = g2.leaf(Td(Shape{1, 0, 2, 2}));
  const int same = g2.concat_channels(x, empty);
  CHECK(g2.value(same).shape() == a.shape());
  for (int64_t i = 0; i < a.size(); ++i) CHECK(g2.value(same)[i] == a[i]);

  const int mismatched = g2.leaf(Td(Shape{1, 3, 4, 2}));
  CHECK_THROWS_AS(g2.concat_channels(x, mismatched), ShapeError);
}

TEST_CASE("gate_combine: multiplicative veto vs additive residue") {
  Graph<double> g;
  Prng rng(4);
  Td u = random_tensor(rng, {1, 2, 3, 3});
  const int nu = g.leaf(u);
  const int zero = g.leaf(Td(Shape{1, 2, 3, 3}));

  const int vetoed = g.gate_combine(nu, zero, GateMode::mul);
  for (int64_t i = 0; i < u.size(); ++i) CHECK(g.value(vetoed)[i] == 0.0);

  const int kept = g.gate_combine(nu, zero, GateMode::add);
  for (int64_t i = 0; i < u.size(); ++i) CHECK(g.value(kept)[i] == u[i]);

  // dM/du = v elementwise in mul mode
  Graph<double> g3;
  Td v = random_tensor(rng, {1, 2, 3, 3});
  const int a = g3.leaf(u), b = g3.leaf(v);
  const int m = g3.gate_combine(a, b, GateMode::mul);
  Td seed(Shape{1, 2, 3, 3}, 1.0);
  g3.backward(m, &seed);
  for (int64_t i = 0; i < u.size(); ++i) {
    CHECK(g3.grad(a)[i] == v[i]);
    CHECK(g3.grad(b)[i] == u[i]);
  }
}

TEST_CASE("softmax channel sums are 1 at every pixel") {
  Prng rng(6);
  Td s = random_tensor(rng, {2, 5, 3, 4}, -4, 4);
  Td p = softmax_channels(s);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t x = 0; x < 4; ++x) {
        double sum = 0;
        for (int64_t c = 0; c < 5; ++c) sum += p.at(n, c, y, x);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
}

TEST_CASE("softmax_xent: uniform logits over 4 classes give ln 4") {
  Graph<double> g;
  const int s = g.leaf(Td(Shape{1, 4, 2, 2}, 0.37));
  LabelMap t(1, 2, 2);
  t.v = {0, 1, 2, 3};
  const int loss = g.softmax_xent(s, t, std::vector<double>(4, 1.0), 255);
  CHECK(g.value(loss)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("softmax_xent: +20 logit on the target class is near-zero loss") {
  Graph<double> g;
  Td sc(Shape{1, 3, 1, 2});
  sc.at(0, 1, 0, 0) = 20.0;
  sc.at(0, 2, 0, 1) = 20.0;
  LabelMap t(1, 1, 2);
  t.v = {1, 2};
  const int loss = g.softmax_xent(g.leaf(sc), t, std::vector<double>(3, 1.0), 255);
  CHECK(g.value(loss)[0] < 1e-6);
}

TEST_CASE("softmax_xent: 2x2 hand case matches a brute-force per-pixel oracle") {
  const int64_t C = 3;
  Td sc(Shape{1, C, 2, 2});
  const double logits[3][4] = {{0.2, -1.4, 3.0, 0.0}, {1.1, 0.4, -2.0, 0.5}, {-0.7, 2.2, 0.1, 0.9}};
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < 4; ++i) sc.at(0, c, i / 2, i % 2) = logits[c][i];
  LabelMap t(1, 2, 2);
  t.v = {2, 0, 255, 1};
  const std::vector<double> w = {0.5, 2.0, 1.25};

  // independent route: direct exp/sum per pixel, no max subtraction
  double expect = 0;
  int64_t valid = 0;
  for (int64_t i = 0; i < 4; ++i) {
    if (t.v[i] == 255) continue;
    double z = 0;
    for (int64_t c = 0; c < C; ++c) z += std::exp(logits[c][i]);
    expect += w[t.v[i]] * -std::log(std::exp(logits[t.v[i]][i]) / z);
    ++valid;
  }
  expect /= static_cast<double>(valid);

  Graph<double> g;
  const int loss = g.softmax_xent(g.leaf(sc), t, w, 255);
  CHECK(g.value(loss)[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("softmax_xent: ignored pixels contribute nothing to loss or gradient") {
  Prng rng(17);
  Td sc = random_tensor(rng, {1, 3, 2, 2}, -2, 2);
  LabelMap t(1, 2, 2);
  t.v = {0, 255, 2, 1};
  const std::vector<double> w(3, 1.0);

  Graph<double> g;
  const int node = g.leaf(sc);
  const int loss = g.softmax_xent(node, t, w, 255);
  g.backward(loss);
  const double base = g.value(loss)[0];
  for (int64_t c = 0; c < 3; ++c) CHECK(g.grad(node).at(0, c, 0, 1) == 0.0);

  // perturb the ignored pixel's logits: loss delta must be exactly 0
  Td sc2 = sc;
  for (int64_t c = 0; c < 3; ++c) sc2.at(0, c, 0, 1) += 5.0;
  Graph<double> g2;
  const int loss2 = g2.softmax_xent(g2.leaf(sc2), t, w, 255);
  CHECK(g2.value(loss2)[0] == base);
}

TEST_CASE("softmax_xent: all pixels ignored gives zero loss and zero gradient") {
  Graph<double> g;
  Prng rng(19);
  const int node = g.leaf(random_tensor(rng, {1, 2, 2, 2}));
  LabelMap t(1, 2, 2, 255);
  const int loss = g.softmax_xent(node, t, std::vector<double>(2, 1.0), 255);
  CHECK(g.value(loss)[0] == 0.0);
  g.backward(loss);
  for (int64_t i = 0; i < g.grad(node).size(); ++i) CHECK(g.grad(node)[i] == 0.0);
}

TEST_CASE("softmax_xent: out-of-range target names the pixel and value") {
  Graph<double> g;
  const int node = g.leaf(Td(Shape{1, 2, 2, 2}));
  LabelMap t(1, 2, 2);
  t.v = {0, 1, 7, 0};
  try {
    g.softmax_xent(node, t, std::vector<double>(2, 1.0), 255);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("label 7") != std::string::npos);
    CHECK(std::string(e.what()).find("y=1,x=0") != std::string::npos);
  }
}

TEST_CASE("backward touches only ancestors of the loss; others keep exact-zero grads") {
  Graph<double> g;
  Prng rng(23);
  const int used_a = g.leaf(random_tensor(rng, {1, 1, 2, 2}));
  const int used_b = g.leaf(random_tensor(rng, {1, 1, 2, 2}));
  const int unused = g.leaf(random_tensor(rng, {1, 1, 2, 2}));
  const int side = g.relu(unused);  // not on the loss path
  LabelMap t(1, 2, 2);
  const int loss =
      g.softmax_xent(g.concat_channels(used_a, used_b), t, std::vector<double>(2, 1.0), 255);
  g.backward(loss);
  CHECK(g.value(side).size() == 4);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(g.grad(unused)[i] == 0.0);
    CHECK(g.grad(side)[i] == 0.0);
  }
  double nonzero = 0;
  for (int64_t i = 0; i < 4; ++i) nonzero += std::abs(g.grad(used_a)[i]);
  CHECK(nonzero > 0.0);
}

TEST_CASE("gradient suite: every op passes central finite differences at 1e-4") {
  const auto results = run_gradient_checks(20240901, 20, 1e-4);
  CHECK(results.size() == 10);
  for (const auto& r : results) {
    INFO(r.op, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.instances == 20);
  }
  // every differentiable op appears exactly once
  for (const char* name : {"conv3x3", "maxpool2x2", "relu", "batchnorm", "bilinear_up2x",
                           "concat_channels", "gate_combine_mul", "gate_combine_add",
                           "softmax_xent", "weighted_sum"}) {
    int count = 0;
    for (const auto& r : results)
      if (r.op == name) ++count;
    CHECK(count == 1);
  }
}

TEST_CASE("gradient suite: a deliberately corrupted gradient is reported as failing") {
  const auto results = run_gradient_checks(20240901, 5, 1e-4, "relu");
  bool relu_failed = false;
  for (const auto& r : results) {
    if (r.op == "relu") {
      relu_failed = !r.pass;
    } else {
      CHECK(r.pass);
    }
  }
  CHECK(relu_failed);
}
