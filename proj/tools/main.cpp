#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "gfrnet/config.hpp"
#include "gfrnet/data.hpp"
#include "gfrnet/eval.hpp"
#include "gfrnet/gradcheck.hpp"
#include "gfrnet/train.hpp"

namespace fs = std::filesystem;
using namespace gfrnet;

namespace {

std::string g10(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
};

RunConfig load_config(const CommonOpts& opts) {
  RunConfig cfg = load_run_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  return cfg;
}

fs::path ensure_out_dir(const RunConfig& cfg) {
  fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  return dir;
}

Tensor colorize(const LabelMap& labels, const Palette& palette) {
  Tensor img(Shape{1, 3, labels.h, labels.w});
  for (int64_t y = 0; y < labels.h; ++y) {
    for (int64_t x = 0; x < labels.w; ++x) {
      const auto& e = palette.entry(labels.at(0, y, x));
      img.at(0, 0, y, x) = static_cast<Real>(e.r) / Real(255);
      img.at(0, 1, y, x) = static_cast<Real>(e.g) / Real(255);
      img.at(0, 2, y, x) = static_cast<Real>(e.b) / Real(255);
    }
  }
  return img;
}

int cmd_gen_data(const CommonOpts& opts) {
  const RunConfig cfg = load_config(opts);
  if (cfg.dataset.kind == DatasetSpec::Kind::manifest) {
    throw ConfigError("gen-data: config must name a generator dataset");
  }
  const Dataset data = build_dataset(cfg.dataset, cfg.seed, cfg.arch.num_classes);
  const fs::path dir = ensure_out_dir(cfg);

  auto dump = [&](const std::vector<Sample>& samples, const std::string& split) {
    std::vector<std::pair<std::string, std::string>> rows;
    for (size_t i = 0; i < samples.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "%s_%04zu", split.c_str(), i);
      const std::string img = std::string(stem) + ".ppm";
      const std::string lbl = std::string(stem) + ".pgm";
      write_ppm((dir / img).string(), samples[i].image);
      write_pgm((dir / lbl).string(), samples[i].gt.labels);
      rows.emplace_back(img, lbl);
    }
    write_manifest((dir / ("manifest_" + split + ".txt")).string(), rows);
  };
  dump(data.train, "train");
  dump(data.test, "test");
  write_palette((dir / "palette.txt").string(), data.palette);
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size()
            << " test samples to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  const RunConfig cfg = load_config(opts);
  const Dataset data = build_dataset(cfg.dataset, cfg.seed, cfg.arch.num_classes);
  const fs::path dir = ensure_out_dir(cfg);

  const int64_t every = std::max<int64_t>(1, cfg.max_iter / 4);
  std::ofstream csv(dir / "loss.csv");
  csv << "iter";
  for (int k = 1; k <= cfg.arch.num_stage_maps(); ++k) csv << ",l" << k;
  csv << ",total,lr\n";
  // rows stream out as training runs, so a numeric failure keeps the curve
  IterCallback after_iter = [&](int64_t iter, const TrainLogRow& row, const ModelParams& params) {
    csv << row.iter;
    for (double v : row.stage_losses) csv << "," << g10(v);
    csv << "," << g10(row.total) << "," << g10(row.lr) << "\n";
    if (iter % every == 0 && iter != cfg.max_iter) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%06lld.ckpt", static_cast<long long>(iter));
      save_checkpoint((dir / name).string(), cfg.arch, params);
      csv.flush();
    }
  };

  const TrainResult result = train_model(cfg, data, after_iter);
  save_checkpoint((dir / "checkpoint.ckpt").string(), cfg.arch, result.params);
  std::cout << "trained " << cfg.max_iter << " iterations; checkpoint and loss.csv in "
            << dir.string() << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path) {
  const RunConfig cfg = load_config(opts);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (!(ckpt.config.depth == cfg.arch.depth &&
        ckpt.config.stage_channels == cfg.arch.stage_channels &&
        ckpt.config.num_classes == cfg.arch.num_classes &&
        ckpt.config.variant == cfg.arch.variant)) {
    throw ConfigError("eval: checkpoint architecture does not match the config");
  }
  const Dataset data = build_dataset(cfg.dataset, cfg.seed, cfg.arch.num_classes);
  if (data.test.empty()) throw DataError("eval: dataset has no test samples");
  data.palette.validate(cfg.arch.num_classes);

  const unsigned hw = std::thread::hardware_concurrency();
  const EvalReport report =
      evaluate_model(ckpt.config, ckpt.params, data.test, hw > 0 ? static_cast<int>(hw) : 1);
  const fs::path dir = ensure_out_dir(cfg);

  std::ofstream stages(dir / "stage_report.csv");
  stages << "stage,mean_iou,pixel_acc\n";
  for (const StageRow& row : report.stages) {
    stages << row.stage << "," << g10(row.mean_iou) << "," << g10(row.pixel_acc) << "\n";
  }

  std::ofstream per_class(dir / "per_class.csv");
  per_class << "class,name,iou\n";
  for (int c = 0; c < cfg.arch.num_classes; ++c) {
    per_class << c << "," << data.palette.entry(c).name << ","
              << g10(report.final_stage.per_class_iou[static_cast<size_t>(c)]) << "\n";
  }

  for (const StageRow& row : report.stages) {
    std::cout << row.stage << "  mean_iou=" << g10(row.mean_iou)
              << "  pixel_acc=" << g10(row.pixel_acc) << "\n";
  }
  return 0;
}

int cmd_infer(const std::string& checkpoint_path, const std::string& image_path,
              const std::string& out_dir, const std::string& palette_path, bool dump_stages) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Tensor image = load_image_ppm(image_path);
  Palette palette = palette_path.empty() ? default_palette(ckpt.config.num_classes)
                                         : load_palette(palette_path);
  palette.validate(ckpt.config.num_classes);

  ModelParams params = ckpt.params;
  const InferResult result = run_inference(image, params, ckpt.config, dump_stages);

  fs::path dir(out_dir.empty() ? "." : out_dir);
  fs::create_directories(dir);
  write_pgm((dir / "labels.pgm").string(), result.labels);
  write_ppm((dir / "labels_color.ppm").string(), colorize(result.labels, palette));
  if (dump_stages) {
    for (size_t k = 0; k < result.stage_scores.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "stage_%02zu.ppm", k);
      write_ppm((dir / name).string(),
                colorize(argmax_channels(result.stage_scores[k]), palette));
    }
  }
  std::cout << "labels.pgm and labels_color.ppm written to " << dir.string() << "\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed, int instances, const std::string& corrupt) {
  const auto results = run_gradient_checks(seed, instances, 1e-4, corrupt);
  std::cout << format_gradcheck_report(results);
  for (const auto& r : results) {
    if (!r.pass) return 1;
  }
  return 0;
}

int cmd_ablate(const CommonOpts& opts) {
  const RunConfig cfg = load_config(opts);
  const unsigned hw = std::thread::hardware_concurrency();
  const auto rows = run_ablation(cfg, hw > 0 ? static_cast<int>(hw) : 1);
  const fs::path dir = ensure_out_dir(cfg);
  std::ofstream csv(dir / "ablation.csv");
  csv << "cell,ds,seed,stage,mean_iou\n";
  for (const AblationRow& row : rows) {
    csv << row.cell << "," << row.ds << "," << row.seed << "," << row.stage << ","
        << g10(row.mean_iou) << "\n";
  }
  std::cout << "ablation.csv written to " << dir.string() << " (" << rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-to-fine label refinement networks (LRN / G-FRNet)"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string checkpoint_path, image_path, palette_path, corrupt_op;
  bool dump_stages = false;
  uint64_t gc_seed = 4242;
  int gc_instances = 20;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opts.config_path, "run configuration (JSON)");
    if (needs_config) c->required();
    sub->add_option("--out", opts.out_dir, "output directory (overrides config)");
    sub->add_option("--seed", opts.seed, "seed override");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a PPM/PGM dataset with manifests");
  add_common(gen, true);

  auto* train = app.add_subcommand("train", "train a model; writes checkpoints and loss.csv");
  add_common(train, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes metric CSVs");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();

  auto* infer = app.add_subcommand("infer", "label one PPM image with a checkpoint");
  infer->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  infer->add_option("image", image_path, "input image (binary PPM)")->required();
  infer->add_option("--out", opts.out_dir, "output directory");
  infer->add_option("--palette", palette_path, "palette file for colorized output");
  infer->add_flag("--dump-stages", dump_stages, "also write per-stage label maps");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
  gradcheck->add_option("--seed", gc_seed, "seed for the random instances");
  gradcheck->add_option("--instances", gc_instances, "instances per op")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--corrupt", corrupt_op, "perturb this op's gradient (negative control)");

  auto* ablate = app.add_subcommand("ablate", "variant/supervision ablation grid");
  add_common(ablate, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opts);
    if (train->parsed()) return cmd_train(opts);
    if (eval->parsed()) return cmd_eval(opts, checkpoint_path);
    if (infer->parsed()) {
      return cmd_infer(checkpoint_path, image_path, opts.out_dir, palette_path, dump_stages);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_instances, corrupt_op);
    if (ablate->parsed()) return cmd_ablate(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
