#include "gfrnet/model.hpp"

#include <string>

namespace gfrnet {

const char* variant_name(Variant v) { return v == Variant::lrn ? "lrn" : "gfrnet"; }
const char* gate_mode_name(GateMode m) { return m == GateMode::mul ? "mul" : "add"; }

void ArchConfig::validate() const {
  if (depth < 3) throw ConfigError("depth must be >= 3, got " + std::to_string(depth));
  if (static_cast<int>(stage_channels.size()) != depth) {
    throw ConfigError("stage_channels has " + std::to_string(stage_channels.size()) +
                      " entries for depth " + std::to_string(depth));
  }
  for (int c : stage_channels) {
    if (c < 1) throw ConfigError("stage_channels entries must be positive");
  }
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (gate_channels < 0) throw ConfigError("gate_channels must be >= 0");
  if (in_channels < 1) throw ConfigError("in_channels must be positive");
  if (skip_offset != 0 && skip_offset != 1) throw ConfigError("skip_offset must be 0 or 1");
}

int ModelParams::param_index(const std::string& name) const {
  const auto it = param_idx_.find(name);
  if (it == param_idx_.end()) throw std::invalid_argument("unknown parameter " + name);
  return it->second;
}

int ModelParams::bn_index(const std::string& name) const {
  const auto it = bn_idx_.find(name);
  if (it == bn_idx_.end()) throw std::invalid_argument("unknown batch-norm state " + name);
  return it->second;
}

void ModelParams::rebuild_index() {
  param_idx_.clear();
  bn_idx_.clear();
  for (size_t i = 0; i < learnable.size(); ++i) param_idx_[learnable[i].name] = static_cast<int>(i);
  for (size_t i = 0; i < bn.size(); ++i) bn_idx_[bn[i].name] = static_cast<int>(i);
}

namespace {

// Index of the encoder feature consumed by refinement unit k (1-based).
int skip_feature_index(const ArchConfig& cfg, int k) { return cfg.depth - k - cfg.skip_offset; }

int gate_channels_for(const ArchConfig& cfg, int k) {
  const int shallow = cfg.stage_channels[skip_feature_index(cfg, k) - 1];
  return cfg.gate_channels > 0 ? cfg.gate_channels : shallow;
}

struct ParamBuilder {
  ModelParams& out;
  uint64_t seed;
  bool init;

  void conv(const std::string& name, int64_t c_out, int64_t c_in, const std::string& group) {
    add(name + ".w", Shape{c_out, c_in, 3, 3}, /*decay=*/true, group, c_in * 9, c_out * 9);
    add(name + ".b", Shape{1, c_out, 1, 1}, /*decay=*/false, group, 0, 0);
  }

  void batchnorm(const std::string& name, int64_t channels, const std::string& group) {
    add(name + ".gamma", Shape{1, channels, 1, 1}, /*decay=*/false, group, 0, 0, Real(1));
    add(name + ".beta", Shape{1, channels, 1, 1}, /*decay=*/false, group, 0, 0, Real(0));
    out.bn.push_back(BnEntry{name, BatchNormState<Real>::make(channels)});
  }

  void add(const std::string& name, Shape shape, bool decay, const std::string& group,
           int64_t fan_in, int64_t fan_out, Real fill = Real(0)) {
    Tensor value;
    if (init && fan_in > 0) {
      Prng rng = Prng(seed).fork(hash64(name));
      value = xavier_init<Real>(fan_in, fan_out, shape, rng);
    } else {
      value = Tensor(shape, fill);
    }
    out.learnable.push_back(ParamEntry{name, std::move(value), decay, group});
  }
};

ModelParams make_params_impl(const ArchConfig& cfg, uint64_t seed, bool init) {
  cfg.validate();
  ModelParams params;
  ParamBuilder b{params, seed, init};

  for (int s = 1; s <= cfg.depth; ++s) {
    const int64_t c_in = s == 1 ? cfg.in_channels : cfg.stage_channels[s - 2];
    const int64_t c_out = cfg.stage_channels[s - 1];
    const std::string base = "enc" + std::to_string(s);
    b.conv(base + ".conv1", c_out, c_in, "encoder");
    b.batchnorm(base + ".bn1", c_out, "encoder");
    b.conv(base + ".conv2", c_out, c_out, "encoder");
    b.batchnorm(base + ".bn2", c_out, "encoder");
  }

  b.conv("head", cfg.num_classes, cfg.stage_channels[cfg.depth - 1], "decoder");

  for (int k = 1; k <= cfg.num_refinements(); ++k) {
    const int idx = skip_feature_index(cfg, k);
    const int64_t shallow_ch = cfg.stage_channels[idx - 1];
    const std::string ru = "ru" + std::to_string(k);
    if (cfg.variant == Variant::gfrnet) {
      const int64_t deep_ch = cfg.stage_channels[idx];
      const int64_t cg = gate_channels_for(cfg, k);
      const std::string gate = "gate" + std::to_string(k);
      // each gate owns two independent transforms, shallow and deep
      b.conv(gate + ".shallow.conv", cg, shallow_ch, "decoder");
      b.batchnorm(gate + ".shallow.bn", cg, "decoder");
      b.conv(gate + ".deep.conv", cg, deep_ch, "decoder");
      b.batchnorm(gate + ".deep.bn", cg, "decoder");
      b.conv(ru + ".m.conv", cfg.num_classes, cg, "decoder");
      b.batchnorm(ru + ".m.bn", cfg.num_classes, "decoder");
      b.conv(ru + ".out", cfg.num_classes, 2 * cfg.num_classes, "decoder");
    } else {
      b.conv(ru + ".out", cfg.num_classes, cfg.num_classes + shallow_ch, "decoder");
    }
  }

  params.rebuild_index();
  return params;
}

// Graph-building helper bound to one forward pass.
struct Net {
  Graph<Real>& g;
  ModelParams& params;
  const ArchConfig& cfg;
  std::vector<int> param_nodes;

  int p(const std::string& name) { return param_nodes[params.param_index(name)]; }
  BatchNormState<Real>& bn_state(const std::string& name) {
    return params.bn[params.bn_index(name)].state;
  }

  int conv_bn_relu(int x, const std::string& conv, const std::string& bn) {
    const int c = g.conv3x3(x, p(conv + ".w"), p(conv + ".b"));
    const int n = g.batchnorm(c, p(bn + ".gamma"), p(bn + ".beta"), bn_state(bn));
    return g.relu(n);
  }

  int gate_unit(int f_shallow, int f_deep, int k) {
    const Shape ss = g.value(f_shallow).shape();
    const Shape ds = g.value(f_deep).shape();
    if (ds.h * 2 != ss.h || ds.w * 2 != ss.w) {
      throw ShapeError("gate_unit: deep feature " + ds.str() + " must be half the resolution of " +
                       ss.str());
    }
    const std::string gate = "gate" + std::to_string(k);
    const int u = conv_bn_relu(f_shallow, gate + ".shallow.conv", gate + ".shallow.bn");
    const int v = g.bilinear_up2x(conv_bn_relu(f_deep, gate + ".deep.conv", gate + ".deep.bn"));
    return g.gate_combine(u, v, cfg.gate_mode);
  }

  int gated_refinement_unit(int r_up, int gated, int k) {
    const std::string ru = "ru" + std::to_string(k);
    const int c = g.conv3x3(gated, p(ru + ".m.conv.w"), p(ru + ".m.conv.b"));
    const int m = g.batchnorm(c, p(ru + ".m.bn.gamma"), p(ru + ".m.bn.beta"), bn_state(ru + ".m.bn"));
    const int cat = g.concat_channels(m, r_up);
    return g.conv3x3(cat, p(ru + ".out.w"), p(ru + ".out.b"));
  }

  int lrn_refinement_unit(int r_up, int f_skip, int k) {
    const std::string ru = "ru" + std::to_string(k);
    const int cat = g.concat_channels(r_up, f_skip);
    return g.conv3x3(cat, p(ru + ".out.w"), p(ru + ".out.b"));
  }
};

}  // namespace

ModelParams make_params(const ArchConfig& cfg, uint64_t seed) {
  return make_params_impl(cfg, seed, /*init=*/true);
}

ModelParams make_param_shapes(const ArchConfig& cfg) {
  return make_params_impl(cfg, 0, /*init=*/false);
}

ForwardPass run_forward(Graph<Real>& g, const Tensor& image, ModelParams& params,
                        const ArchConfig& cfg, Mode mode) {
  cfg.validate();
  const auto [N, C, H, W] = image.shape();
  if (C != cfg.in_channels) {
    throw ShapeError("forward: image has " + std::to_string(C) + " channels, expected " +
                     std::to_string(cfg.in_channels));
  }
  const int64_t stride = int64_t(1) << cfg.depth;
  if (H % stride != 0 || W % stride != 0) {
    throw ShapeError("forward: input " + image.shape().str() + " not divisible by 2^depth = " +
                     std::to_string(stride) + "; crop or pad the input");
  }

  for (auto& bn : params.bn) {
    bn.state.mode = mode == Mode::train ? BnMode::train : BnMode::infer;
  }

  ForwardPass fp;
  Net net{g, params, cfg, {}};
  net.param_nodes.reserve(params.learnable.size());
  for (const auto& entry : params.learnable) net.param_nodes.push_back(g.leaf(entry.value));
  fp.param_nodes = net.param_nodes;

  int x = g.leaf(image);
  for (int s = 1; s <= cfg.depth; ++s) {
    const std::string base = "enc" + std::to_string(s);
    x = net.conv_bn_relu(x, base + ".conv1", base + ".bn1");
    x = net.conv_bn_relu(x, base + ".conv2", base + ".bn2");
    x = g.maxpool2x2(x);
    fp.features.push_back(x);
  }

  int map = g.conv3x3(fp.features[cfg.depth - 1], net.p("head.w"), net.p("head.b"));
  fp.stage_maps.push_back(map);

  for (int k = 1; k <= cfg.num_refinements(); ++k) {
    int r_up = g.bilinear_up2x(map);
    if (k == 1) {
      for (int extra = 0; extra < cfg.skip_offset; ++extra) r_up = g.bilinear_up2x(r_up);
    }
    const int idx = skip_feature_index(cfg, k);
    const int f_skip = fp.features[idx - 1];
    if (cfg.variant == Variant::gfrnet) {
      const int gated = net.gate_unit(f_skip, fp.features[idx], k);
      map = net.gated_refinement_unit(r_up, gated, k);
    } else {
      map = net.lrn_refinement_unit(r_up, f_skip, k);
    }
    fp.stage_maps.push_back(map);
  }
  return fp;
}

InferResult run_inference(const Tensor& image, ModelParams& params, const ArchConfig& cfg,
                          bool keep_stage_scores) {
  Graph<Real> g;
  const ForwardPass fp = run_forward(g, image, params, cfg, Mode::infer);
  const int64_t H = image.shape().h, W = image.shape().w;

  auto to_full = [&](Tensor scores) {
    while (scores.shape().h < H || scores.shape().w < W) {
      scores = bilinear_up2x_tensor(scores);
    }
    if (scores.shape().h != H || scores.shape().w != W) {
      throw ShapeError("inference: stage map " + scores.shape().str() +
                       " cannot reach input resolution by doubling");
    }
    return scores;
  };

  InferResult out;
  if (keep_stage_scores) {
    for (int id : fp.stage_maps) out.stage_scores.push_back(to_full(g.value(id)));
    out.labels = argmax_channels(out.stage_scores.back());
  } else {
    out.labels = argmax_channels(to_full(g.value(fp.stage_maps.back())));
  }
  return out;
}

}  // namespace gfrnet
