#include "gfrnet/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "gfrnet/autodiff.hpp"

namespace gfrnet {

namespace {

using Td = TensorT<double>;
using Builder = std::function<int(Graph<double>&, const std::vector<int>&)>;

struct Instance {
  std::vector<Td> inputs;  // differentiable leaves, in the order they are checked
  Builder build;           // appends the op under test, returns its node id
};

Td urand(Prng& rng, Shape s, double lo, double hi) {
  Td t(s);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.next_double();
  return t;
}

Td eval_forward(const Instance& inst, const std::vector<Td>& inputs) {
  Graph<double> g;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Td& t : inputs) ids.push_back(g.leaf(t));
  const int out = inst.build(g, ids);
  return g.value(out);
}

// max over all inputs/elements of the relative error between analytic and
// central-difference gradients of the readout sum_i r_i * out_i.
double check_instance(const Instance& inst, Prng& rng, bool corrupt) {
  Graph<double> g;
  std::vector<int> ids;
  for (const Td& t : inst.inputs) ids.push_back(g.leaf(t));
  const int out = inst.build(g, ids);

  // Random positive readout weights; a plain sum would let transposed
  // spatial contributions cancel in the interior.
  Td seed = urand(rng, g.value(out).shape(), 0.5, 1.5);
  g.backward(out, &seed);

  std::vector<Td> analytic;
  for (int id : ids) analytic.push_back(g.grad(id));
  if (corrupt && !analytic.empty() && analytic[0].size() > 0) analytic[0][0] += 0.01;

  const double h = 1e-5;
  double worst = 0.0;
  std::vector<Td> probe = inst.inputs;
  for (size_t k = 0; k < probe.size(); ++k) {
    for (int64_t i = 0; i < probe[k].size(); ++i) {
      const double x0 = probe[k][i];
      probe[k][i] = x0 + h;
      const Td fp = eval_forward(inst, probe);
      probe[k][i] = x0 - h;
      const Td fm = eval_forward(inst, probe);
      probe[k][i] = x0;
      double fd = 0.0;
      for (int64_t j = 0; j < fp.size(); ++j) fd += seed[j] * (fp[j] - fm[j]);
      fd /= 2.0 * h;
      const double a = analytic[k][i];
      const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-2});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

Instance make_conv3x3(Prng& rng) {
  const int64_t n = 1 + static_cast<int64_t>(rng.next_below(2));
  const int64_t ci = 1 + static_cast<int64_t>(rng.next_below(3));
  const int64_t co = 1 + static_cast<int64_t>(rng.next_below(3));
  const int64_t h = 2 + static_cast<int64_t>(rng.next_below(3));
  const int64_t w = 2 + static_cast<int64_t>(rng.next_below(3));
  Instance inst;
  inst.inputs = {urand(rng, {n, ci, h, w}, -1, 1), urand(rng, {co, ci, 3, 3}, -1, 1),
                 urand(rng, {1, co, 1, 1}, -1, 1)};
  inst.build = [](Graph<double>& g, const std::vector<int>& ids) {
    return g.conv3x3(ids[0], ids[1], ids[2]);
  };
  return inst;
}

Instance make_maxpool(Prng& rng) {
  const int64_t n = 1 + static_cast<int64_t>(rng.next_below(2));
  const int64_t c = 1 + static_cast<int64_t>(rng.next_below(3));
  const int64_t h = 2 * (1 + static_cast<int64_t>(rng.next_below(2)));
  const int64_t w = 2 * (1 + static_cast<int64_t>(rng.next_below(2)));
  Instance inst;
  // Regenerate until every window's max is clear of the runner-up, so the
  // finite-difference step cannot flip the argmax.
  for (;;) {
    Td x = urand(rng, {n, c, h, w}, -1, 1);
    bool clear = true;
    for (int64_t b = 0; b < n && clear; ++b) {
      for (int64_t ch = 0; ch < c && clear; ++ch) {
        for (int64_t oy = 0; oy < h / 2 && clear; ++oy) {
          for (int64_t ox = 0; ox < w / 2 && clear; ++ox) {
            double top = -2, second = -2;
            for (int64_t dy = 0; dy < 2; ++dy) {
              for (int64_t dx = 0; dx < 2; ++dx) {
                const double v = x.at(b, ch, 2 * oy + dy, 2 * ox + dx);
                if (v > top) {
                  second = top;
                  top = v;
                } else if (v > second) {
                  second = v;
                }
              }
            }
            if (top - second < 1e-2) clear = false;
          }
        }
      }
    }
    if (clear) {
      inst.inputs = {std::move(x)};
      break;
    }
  }
  inst.build = [](Graph<double>& g, const std::vector<int>& ids) { return g.maxpool2x2(ids[0]); };
  return inst;
}

Instance make_relu(Prng& rng) {
  const int64_t c = 1 + static_cast<int64_t>(rng.next_below(3));
  Td x = urand(rng, {1, c, 4, 4}, -1, 1);
  for (int64_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) < 0.05) x[i] += x[i] >= 0 ? 0.05 : -0.05;
  }
  Instance inst;
  inst.inputs = {std::move(x)};
  inst.build = [](Graph<double>& g, const std::vector<int>& ids) { return g.relu(ids[0]); };
  return inst;
}

Instance make_batchnorm(Prng& rng) {
  const int64_t n = 1 + static_cast<int64_t>(rng.next_below(2));
  const int64_t c = 1 + static_cast<int64_t>(rng.next_below(3));
  const int64_t h = 2 + static_cast<int64_t>(rng.next_below(3));
  const int64_t w = 2 + static_cast<int64_t>(rng.next_below(3));
  Instance inst;
  for (;;) {
    Td x = urand(rng, {n, c, h, w}, -1, 1);
    bool ok = true;
    const int64_t m = n * h * w;
    for (int64_t ch = 0; ch < c && ok; ++ch) {
      double mu = 0, var = 0;
      for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < h * w; ++i) mu += (&x.at(b, ch, 0, 0))[i];
      mu /= static_cast<double>(m);
      for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < h * w; ++i) {
          const double d = (&x.at(b, ch, 0, 0))[i] - mu;
          var += d * d;
        }
      if (var / static_cast<double>(m) < 0.02) ok = false;
    }
    if (ok) {
      inst.inputs = {std::move(x), urand(rng, {1, c, 1, 1}, 0.5, 1.5),
                     urand(rng, {1, c, 1, 1}, -0.5, 0.5)};
      break;
    }
  }
  inst.build = [c](Graph<double>& g, const std::vector<int>& ids) {
    auto state = BatchNormState<double>::make(c);
    return g.batchnorm(ids[0], ids[1], ids[2], state);
  };
  return inst;
}

Instance make_bilinear(Prng& rng) {
  const int64_t c = 1 + static_cast<int64_t>(rng.next_below(3));
  const int64_t h = 1 + static_cast<int64_t>(rng.next_below(4));
  const int64_t w = 1 + static_cast<int64_t>(rng.next_below(4));
  Instance inst;
  inst.inputs = {urand(rng, {1, c, h, w}, -1, 1)};
  inst.build = [](Graph<double>& g, const std::vector<int>& ids) {
    return g.bilinear_up2x(ids[0]);
  };
  return inst;
}

Instance make_concat(Prng& rng) {
  const int64_t ca = 1 + static_cast<int64_t>(rng.next_below(3));
  const int64_t cb = 1 + static_cast<int64_t>(rng.next_below(3));
  const int64_t h = 2 + static_cast<int64_t>(rng.next_below(3));
  Instance inst;
  inst.inputs = {urand(rng, {1, ca, h, h}, -1, 1), urand(rng, {1, cb, h, h}, -1, 1)};
  inst.build = [](Graph<double>& g, const std::vector<int>& ids) {
    return g.concat_channels(ids[0], ids[1]);
  };
  return inst;
}

Instance make_gate(Prng& rng, GateMode mode) {
  const int64_t c = 1 + static_cast<int64_t>(rng.next_below(3));
  const int64_t h = 2 + static_cast<int64_t>(rng.next_below(3));
  Instance inst;
  inst.inputs = {urand(rng, {1, c, h, h}, -1, 1), urand(rng, {1, c, h, h}, -1, 1)};
  inst.build = [mode](Graph<double>& g, const std::vector<int>& ids) {
    return g.gate_combine(ids[0], ids[1], mode);
  };
  return inst;
}

Instance make_softmax_xent(Prng& rng) {
  const int64_t cls = 2 + static_cast<int64_t>(rng.next_below(2));
  const int64_t h = 2 + static_cast<int64_t>(rng.next_below(3));
  const int64_t w = 2 + static_cast<int64_t>(rng.next_below(3));
  LabelMap target(1, h, w);
  for (auto& t : target.v) {
    t = rng.next_below(5) == 0 ? 255 : static_cast<int32_t>(rng.next_below(cls));
  }
  std::vector<double> wts(static_cast<size_t>(cls));
  for (auto& v : wts) v = 0.2 + 1.8 * rng.next_double();
  Instance inst;
  inst.inputs = {urand(rng, {1, cls, h, w}, -2, 2)};
  inst.build = [target = std::move(target), wts = std::move(wts)](Graph<double>& g,
                                                                  const std::vector<int>& ids) {
    return g.softmax_xent(ids[0], target, wts, 255);
  };
  return inst;
}

Instance make_weighted_sum(Prng& rng) {
  const size_t terms = 2 + rng.next_below(2);
  const int64_t c = 1 + static_cast<int64_t>(rng.next_below(3));
  Instance inst;
  std::vector<double> wts;
  for (size_t k = 0; k < terms; ++k) {
    inst.inputs.push_back(urand(rng, {1, c, 2, 2}, -1, 1));
    wts.push_back(-1 + 2 * rng.next_double());
  }
  inst.build = [wts = std::move(wts)](Graph<double>& g, const std::vector<int>& ids) {
    return g.weighted_sum(ids, wts);
  };
  return inst;
}

}  // namespace

std::vector<OpCheckResult> run_gradient_checks(uint64_t seed, int instances, double tolerance,
                                               const std::string& corrupt_op) {
  using Maker = std::function<Instance(Prng&)>;
  const std::vector<std::pair<std::string, Maker>> ops = {
      {"conv3x3", make_conv3x3},
      {"maxpool2x2", make_maxpool},
      {"relu", make_relu},
      {"batchnorm", make_batchnorm},
      {"bilinear_up2x", make_bilinear},
      {"concat_channels", make_concat},
      {"gate_combine_mul", [](Prng& r) { return make_gate(r, GateMode::mul); }},
      {"gate_combine_add", [](Prng& r) { return make_gate(r, GateMode::add); }},
      {"softmax_xent", make_softmax_xent},
      {"weighted_sum", make_weighted_sum},
  };

  const Prng root(seed);
  std::vector<OpCheckResult> results;
  for (const auto& [name, maker] : ops) {
    const Prng op_rng(root.fork(hash64(name)));
    OpCheckResult res{name, instances, 0.0, tolerance, false};
    for (int i = 0; i < instances; ++i) {
      Prng rng = op_rng.fork(static_cast<uint64_t>(i));
      Instance inst = maker(rng);
      res.max_rel_err = std::max(res.max_rel_err, check_instance(inst, rng, corrupt_op == name));
    }
    res.pass = res.max_rel_err <= tolerance;
    results.push_back(std::move(res));
  }
  return results;
}

std::string format_gradcheck_report(const std::vector<OpCheckResult>& results) {
  std::ostringstream os;
  for (const auto& r : results) {
    os << (r.pass ? "PASS" : "FAIL") << "  " << r.op << "  max_rel_err=" << r.max_rel_err
       << "  tol=" << r.tolerance << "  instances=" << r.instances << "\n";
  }
  return os.str();
}

}  // namespace gfrnet
