#include "gfrnet/train.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <thread>

#include "gfrnet/optimizer.hpp"

namespace gfrnet {

Dataset build_dataset(const DatasetSpec& spec, uint64_t seed, int num_classes) {
  Dataset out;
  if (spec.kind == DatasetSpec::Kind::manifest) {
    out.train = load_manifest_samples(spec.train_manifest, num_classes);
    if (!spec.test_manifest.empty()) {
      out.test = load_manifest_samples(spec.test_manifest, num_classes);
    }
    const auto palette_path =
        std::filesystem::path(spec.train_manifest).parent_path() / "palette.txt";
    if (std::filesystem::exists(palette_path)) {
      out.palette = load_palette(palette_path.string());
      out.palette.validate(num_classes);
    } else {
      out.palette = default_palette(num_classes);
    }
    return out;
  }

  Prng train_rng = Prng(seed).fork(hash64("dataset.train"));
  Prng test_rng = Prng(seed).fork(hash64("dataset.test"));
  if (spec.kind == DatasetSpec::Kind::shapes) {
    out.train = gen_shapes(train_rng, spec.n_train, spec.size, num_classes);
    out.test = gen_shapes(test_rng, spec.n_test, spec.size, num_classes);
    out.palette = default_palette(num_classes);
  } else {
    out.train = gen_ambiguous(train_rng, spec.n_train, spec.size);
    out.test = gen_ambiguous(test_rng, spec.n_test, spec.size);
    out.palette.entries = {PaletteEntry{0, 160, 160, 160, "background"},
                           PaletteEntry{1, 204, 72, 40, "patch_a"},
                           PaletteEntry{2, 40, 88, 204, "patch_b"}};
  }
  return out;
}

TrainResult train_model(const RunConfig& cfg, const Dataset& data, const IterCallback& after_iter) {
  cfg.validate();
  TrainResult result{make_params(cfg.arch, cfg.seed), {}};
  if (cfg.max_iter == 0) return result;
  if (data.train.empty()) throw DataError("train: empty training set");

  std::vector<Real> lambda;
  if (cfg.class_balancing) {
    std::vector<int64_t> counts(static_cast<size_t>(cfg.arch.num_classes), 0);
    for (const Sample& s : data.train) {
      const auto c = count_labels(s.gt, cfg.arch.num_classes);
      for (size_t i = 0; i < counts.size(); ++i) counts[i] += c[i];
    }
    for (double w : class_weights(counts)) lambda.push_back(static_cast<Real>(w));
  } else {
    lambda.assign(static_cast<size_t>(cfg.arch.num_classes), Real(1));
  }

  SgdConfig opt_cfg;
  opt_cfg.base_lr = cfg.base_lr;
  opt_cfg.momentum = cfg.momentum;
  opt_cfg.weight_decay = cfg.weight_decay;
  opt_cfg.power = cfg.power;
  opt_cfg.max_iter = cfg.max_iter;
  Sgd<Real> opt(opt_cfg);

  Prng train_rng = Prng(cfg.seed).fork(hash64("train"));
  std::vector<size_t> order(data.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  result.log.reserve(static_cast<size_t>(cfg.max_iter));
  for (int64_t iter = 0; iter < cfg.max_iter; ++iter) {
    if (iter % static_cast<int64_t>(order.size()) == 0) {
      for (size_t k = 0; k + 1 < order.size(); ++k) {
        const size_t j = k + train_rng.next_below(order.size() - k);
        std::swap(order[k], order[j]);
      }
    }
    const Sample& picked = data.train[order[iter % static_cast<int64_t>(order.size())]];
    const bool needs_crop =
        picked.image.shape().h != cfg.crop_h || picked.image.shape().w != cfg.crop_w;
    const Sample cropped =
        needs_crop ? random_crop(picked, cfg.crop_h, cfg.crop_w, train_rng) : Sample{};
    const Sample& sample = needs_crop ? cropped : picked;

    const double lr = poly_lr(cfg.base_lr, iter, cfg.max_iter, cfg.power);
    Graph<Real> g;
    const ForwardPass fp = run_forward(g, sample.image, result.params, cfg.arch, Mode::train);
    const LossBreakdown lb = stage_losses(g, fp.stage_maps, sample.gt, lambda, cfg.stage_weights);
    if (!std::isfinite(lb.total)) throw NumericError("train: non-finite loss at iteration " +
                                                     std::to_string(iter));
    g.backward(lb.total_node);

    std::vector<SgdParam<Real>> params;
    params.reserve(result.params.learnable.size());
    for (size_t i = 0; i < result.params.learnable.size(); ++i) {
      ParamEntry& e = result.params.learnable[i];
      params.push_back(SgdParam<Real>{&e.value, &g.grad(fp.param_nodes[i]), e.decay,
                                      opt_cfg.group_scale(e.group)});
    }
    opt.step(params);

    result.log.push_back(TrainLogRow{iter, lb.per_stage, lb.total, lr});
    if (after_iter) after_iter(iter + 1, result.log.back(), result.params);
  }
  return result;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, int threads) {
  base.validate();
  if (base.seeds.empty()) throw ConfigError("ablate: config needs a non-empty 'seeds' list");
  if (base.dataset.kind != DatasetSpec::Kind::manifest && base.dataset.n_test < 1) {
    throw ConfigError("ablate: dataset needs test samples");
  }
  if (!(base.stage_weights.back() > 0)) {
    throw ConfigError("ablate: the final stage weight must be positive");
  }

  struct Cell {
    const char* name;
    Variant variant;
    GateMode mode;
  };
  const Cell cells[] = {{"gfrnet-mul", Variant::gfrnet, GateMode::mul},
                        {"gfrnet-add", Variant::gfrnet, GateMode::add},
                        {"lrn", Variant::lrn, GateMode::mul}};
  const char* ds_names[] = {"with", "without"};

  // one dataset per seed, shared by all cells of that seed
  std::vector<Dataset> datasets;
  datasets.reserve(base.seeds.size());
  for (uint64_t seed : base.seeds) {
    datasets.push_back(build_dataset(base.dataset, seed, base.arch.num_classes));
  }

  struct Job {
    size_t seed_idx;
    int cell;
    int ds;
  };
  std::vector<Job> jobs;
  for (size_t s = 0; s < base.seeds.size(); ++s) {
    for (int c = 0; c < 3; ++c) {
      for (int d = 0; d < 2; ++d) jobs.push_back(Job{s, c, d});
    }
  }

  std::vector<std::vector<AblationRow>> rows_per_job(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<size_t> next{0};

  auto worker = [&] {
    for (;;) {
      const size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      try {
        const Job& job = jobs[j];
        RunConfig cfg = base;
        cfg.seed = base.seeds[job.seed_idx];
        cfg.arch.variant = cells[job.cell].variant;
        cfg.arch.gate_mode = cells[job.cell].mode;
        if (job.ds == 1) {
          // without deep supervision: only the final stage keeps its weight
          std::vector<double> w(cfg.stage_weights.size(), 0.0);
          w.back() = cfg.stage_weights.back();
          cfg.stage_weights = std::move(w);
        }
        const TrainResult trained = train_model(cfg, datasets[job.seed_idx]);
        const EvalReport report =
            evaluate_model(cfg.arch, trained.params, datasets[job.seed_idx].test, 1);
        for (const StageRow& row : report.stages) {
          rows_per_job[j].push_back(AblationRow{cells[job.cell].name, ds_names[job.ds], cfg.seed,
                                                row.stage, row.mean_iou});
        }
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };

  const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<AblationRow> rows;
  for (const auto& chunk : rows_per_job) {
    rows.insert(rows.end(), chunk.begin(), chunk.end());
  }
  return rows;
}

}  // namespace gfrnet
