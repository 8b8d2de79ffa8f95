#include "gfrnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gfrnet {

namespace {

using nlohmann::json;

void require_keys(const json& doc, const std::set<std::string>& required,
                  const std::set<std::string>& optional, const std::string& where) {
  for (const auto& [key, _] : doc.items()) {
    if (!required.count(key) && !optional.count(key)) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
  for (const auto& key : required) {
    if (!doc.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  }
}

template <typename T>
T get(const json& doc, const std::string& key, const std::string& where) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
  }
}

DatasetSpec parse_dataset(const json& doc) {
  DatasetSpec spec;
  if (doc.contains("generator")) {
    require_keys(doc, {"generator", "size", "n_train", "n_test"}, {}, "dataset");
    const std::string name = get<std::string>(doc, "generator", "dataset");
    if (name == "shapes") {
      spec.kind = DatasetSpec::Kind::shapes;
    } else if (name == "ambiguous") {
      spec.kind = DatasetSpec::Kind::ambiguous;
    } else {
      throw ConfigError("dataset: unknown generator '" + name + "'");
    }
    spec.size = get<int>(doc, "size", "dataset");
    spec.n_train = get<int>(doc, "n_train", "dataset");
    spec.n_test = get<int>(doc, "n_test", "dataset");
  } else if (doc.contains("train_manifest")) {
    require_keys(doc, {"train_manifest"}, {"test_manifest"}, "dataset");
    spec.kind = DatasetSpec::Kind::manifest;
    spec.train_manifest = get<std::string>(doc, "train_manifest", "dataset");
    if (doc.contains("test_manifest")) {
      spec.test_manifest = get<std::string>(doc, "test_manifest", "dataset");
    }
  } else {
    throw ConfigError("dataset: needs either 'generator' or 'train_manifest'");
  }
  return spec;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  const std::set<std::string> required = {
      "seed",          "variant",    "gate_mode",     "depth",
      "stage_channels", "num_classes", "gate_channels", "crop",
      "base_lr",       "momentum",   "weight_decay",  "power",
      "max_iter",      "stage_weights", "class_balancing", "dataset",
      "output_dir"};
  require_keys(doc, required, {"seeds", "skip_offset"}, "config");

  RunConfig cfg;
  cfg.seed = get<uint64_t>(doc, "seed", "config");

  const std::string variant = get<std::string>(doc, "variant", "config");
  if (variant == "lrn") {
    cfg.arch.variant = Variant::lrn;
  } else if (variant == "gfrnet") {
    cfg.arch.variant = Variant::gfrnet;
  } else {
    throw ConfigError("config: variant must be 'lrn' or 'gfrnet', got '" + variant + "'");
  }

  const std::string mode = get<std::string>(doc, "gate_mode", "config");
  if (mode == "mul") {
    cfg.arch.gate_mode = GateMode::mul;
  } else if (mode == "add") {
    cfg.arch.gate_mode = GateMode::add;
  } else {
    throw ConfigError("config: gate_mode must be 'mul' or 'add', got '" + mode + "'");
  }

  cfg.arch.depth = get<int>(doc, "depth", "config");
  cfg.arch.stage_channels = get<std::vector<int>>(doc, "stage_channels", "config");
  cfg.arch.num_classes = get<int>(doc, "num_classes", "config");
  cfg.arch.gate_channels = get<int>(doc, "gate_channels", "config");
  if (doc.contains("skip_offset")) cfg.arch.skip_offset = get<int>(doc, "skip_offset", "config");

  const auto crop = get<std::vector<int64_t>>(doc, "crop", "config");
  if (crop.size() != 2) throw ConfigError("config: crop must be [h, w]");
  cfg.crop_h = static_cast<int>(crop[0]);
  cfg.crop_w = static_cast<int>(crop[1]);

  cfg.base_lr = get<double>(doc, "base_lr", "config");
  cfg.momentum = get<double>(doc, "momentum", "config");
  cfg.weight_decay = get<double>(doc, "weight_decay", "config");
  cfg.power = get<double>(doc, "power", "config");
  cfg.max_iter = get<int64_t>(doc, "max_iter", "config");
  cfg.stage_weights = get<std::vector<double>>(doc, "stage_weights", "config");
  cfg.class_balancing = get<bool>(doc, "class_balancing", "config");
  cfg.dataset = parse_dataset(doc.at("dataset"));
  cfg.output_dir = get<std::string>(doc, "output_dir", "config");
  if (doc.contains("seeds")) cfg.seeds = get<std::vector<uint64_t>>(doc, "seeds", "config");

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_run_config(buf.str());
}

void RunConfig::validate() const {
  try {
    arch.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const int64_t stride = int64_t(1) << arch.depth;
  if (crop_h < 1 || crop_w < 1 || crop_h % stride != 0 || crop_w % stride != 0) {
    throw ConfigError("config: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                      " must be positive and divisible by 2^depth = " + std::to_string(stride));
  }
  if (!(base_lr > 0)) throw ConfigError("config: base_lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("config: momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("config: weight_decay must be >= 0");
  if (!(power > 0)) throw ConfigError("config: power must be positive");
  if (max_iter < 0) throw ConfigError("config: max_iter must be >= 0");
  if (static_cast<int>(stage_weights.size()) != arch.num_stage_maps()) {
    throw ConfigError("config: stage_weights needs depth-1 = " +
                      std::to_string(arch.num_stage_maps()) + " entries, got " +
                      std::to_string(stage_weights.size()));
  }
  for (double w : stage_weights) {
    if (!(w >= 0)) throw ConfigError("config: stage_weights must be non-negative");
  }
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");

  if (dataset.kind != DatasetSpec::Kind::manifest) {
    if (dataset.n_train < 0 || dataset.n_test < 0) {
      throw ConfigError("config: dataset sample counts must be >= 0");
    }
    if (dataset.size < 8 || dataset.size % stride != 0) {
      throw ConfigError("config: dataset size " + std::to_string(dataset.size) +
                        " not divisible by 2^depth = " + std::to_string(stride));
    }
    if (crop_h > dataset.size || crop_w > dataset.size) {
      throw ConfigError("config: crop exceeds the generated image size");
    }
    if (dataset.kind == DatasetSpec::Kind::ambiguous && arch.num_classes != 3) {
      throw ConfigError("config: the ambiguous generator requires num_classes = 3");
    }
    if (dataset.kind == DatasetSpec::Kind::shapes && arch.num_classes < 2) {
      throw ConfigError("config: the shapes generator requires num_classes >= 2");
    }
  } else if (dataset.train_manifest.empty()) {
    throw ConfigError("config: train_manifest must not be empty");
  }
}

}  // namespace gfrnet
