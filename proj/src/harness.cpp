#include "anyway/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "anyway/errors.hpp"
#include "anyway/synth.hpp"

namespace anyway {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::uint64_t kInitStream = 41;
constexpr std::uint64_t kEvalSeedStream = 42;

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

json stalls_json(const std::vector<StallRecord>& stalls) {
  json out = json::array();
  for (const auto& s : stalls) {
    out.push_back({{"N", s.N},
                   {"step", s.step},
                   {"warning", "validation accuracy stayed at chance level (start-up stall)"}});
  }
  return out;
}

/// Accuracy of one trained checkpoint at N with the default all-J original ensemble.
Accuracy quick_eval(const Checkpoint& ckpt, const MotherDataset& ds, const ExperimentConfig& cfg,
                    std::size_t N, std::uint64_t seed) {
  if (ckpt.backend == Backend::protonet) {
    return evaluate_proto(ckpt.proto.encoder, ds, N, cfg.shots, cfg.queries, cfg.eval_episodes, seed);
  }
  return evaluate(ckpt.maml, ds, N, cfg.shots, cfg.queries, cfg.eval_episodes, 0,
                  EnsembleMethod::original, cfg.inner_config(), seed);
}

bool same_data(const ExperimentConfig& a, const ExperimentConfig& b) {
  static const char* keys[] = {"train_data",  "val_data",    "test_data",  "data_dim",
                               "train_classes", "val_classes", "test_classes", "per_class",
                               "mean_scale",  "noise_sigma", "data_seed",  "test_rotation_seed",
                               "test_sigma_scale"};
  const auto ma = a.to_map();
  const auto mb = b.to_map();
  for (const char* k : keys) {
    if (ma.at(k) != mb.at(k)) return false;
  }
  return true;
}

}  // namespace

std::string default_output_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env != nullptr && *env != '\0' ? std::string(env) : std::string("runs");
}

std::uint64_t evaluation_seed(std::uint64_t seed) { return derive_seed(seed, kEvalSeedStream); }

DataSplits build_data(const ExperimentConfig& cfg) {
  DataSplits out;
  if (!cfg.train_data.empty()) {
    out.train = load_features(cfg.train_data);
    if (!cfg.val_data.empty()) out.val = load_features(cfg.val_data);
    out.test = cfg.test_data.empty() ? out.val : load_features(cfg.test_data);
    out.test_label = cfg.test_data.empty() ? "val" : fs::path(cfg.test_data).stem().string();
  } else {
    SynthSpec spec;
    spec.classes = cfg.train_classes + cfg.val_classes + cfg.test_classes;
    spec.dim = cfg.data_dim;
    spec.per_class = cfg.per_class;
    spec.mean_scale = cfg.mean_scale;
    spec.noise_sigma = cfg.noise_sigma;
    spec.seed = cfg.data_seed;
    const MotherDataset all = make_gaussian_mother(spec);
    out.train = slice_classes(all, 0, cfg.train_classes);
    out.val = slice_classes(all, cfg.train_classes, cfg.val_classes);
    if (cfg.test_rotation_seed != 0 || cfg.test_sigma_scale != 1.0) {
      const MotherDataset shifted = make_shifted(
          spec, cfg.test_rotation_seed != 0 ? cfg.test_rotation_seed : cfg.data_seed,
          cfg.test_sigma_scale);
      out.test = slice_classes(shifted, cfg.train_classes + cfg.val_classes, cfg.test_classes);
      out.test_label = "shifted";
    } else {
      out.test = slice_classes(all, cfg.train_classes + cfg.val_classes, cfg.test_classes);
    }
  }
  if (out.train.class_count() == 0) throw ConfigError("train split has no classes");
  return out;
}

Checkpoint initial_checkpoint(const ExperimentConfig& cfg, const DataSplits& data) {
  Rng rng = make_rng(cfg.seed, kInitStream);
  Checkpoint ckpt;
  ckpt.backend = cfg.backend;
  ckpt.mode = cfg.mode;
  if (cfg.backend == Backend::maml) {
    ModelShape shape;
    shape.input_dim = data.train.feature_dim;
    shape.hidden = cfg.hidden;
    shape.feature_dim = cfg.feature_dim;
    shape.output_width = cfg.effective_output_width();
    shape.semantic_classes = cfg.semantic_enabled ? data.train.class_count() : 0;
    ckpt.maml = MetaModel::create(shape, rng);
  } else {
    std::vector<std::size_t> dims{data.train.feature_dim};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(cfg.feature_dim);
    ckpt.proto.encoder = MlpEncoder::create(dims, rng);
    ckpt.proto.memory = PrototypeMemory::create(data.train.class_count(), cfg.feature_dim,
                                                cfg.effective_ema_rate());
  }
  return ckpt;
}

TrainedRun train_from_config(const ExperimentConfig& cfg, const DataSplits& data) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const EpisodeSpec spec = cfg.episode_spec();
  const MotherDataset* validation = data.val.class_count() > 0 ? &data.val : nullptr;
  if (validation != nullptr && validation->class_count() < spec.max_cardinality()) {
    throw ConfigError("val_classes: validation split has " +
                      std::to_string(validation->class_count()) + " classes, episodes need " +
                      std::to_string(spec.max_cardinality()));
  }
  const Checkpoint init = initial_checkpoint(cfg, data);

  TrainedRun run;
  run.best = init;
  run.final = init;
  if (cfg.backend == Backend::maml) {
    TrainSettings s;
    s.spec = spec;
    s.mode = cfg.mode;
    s.inner = cfg.inner_config();
    s.outer = cfg.outer_config();
    s.semantic = cfg.semantic_config(data.train.class_count());
    s.stall_window = cfg.stall_window;
    s.stall_eps = cfg.stall_eps;
    s.seed = cfg.seed;
    TrainResult r = train(data.train, validation, init.maml, s);
    run.final.maml = std::move(r.final_model);
    run.best.maml = std::move(r.best_model);
    run.curve = std::move(r.curve);
    run.stalls = std::move(r.stalls);
    run.best_step = r.best_step;
    run.best_val_sum = r.best_val_sum;
  } else {
    ProtoTrainSettings s;
    s.spec = spec;
    s.outer = cfg.outer_config();
    s.lambda = cfg.semantic_enabled ? cfg.effective_lambda() : 0.0;
    s.stall_window = cfg.stall_window;
    s.stall_eps = cfg.stall_eps;
    s.seed = cfg.seed;
    ProtoTrainResult r = train_proto(data.train, validation, init.proto, s);
    run.final.proto = std::move(r.final_model);
    run.best.proto = std::move(r.best_model);
    run.curve = std::move(r.curve);
    run.stalls = std::move(r.stalls);
    run.best_step = r.best_step;
    run.best_val_sum = r.best_val_sum;
  }
  run.best.step = run.best_step;
  run.final.step = cfg.episodes;
  run.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return run;
}

EvalPlan eval_plan_from(const ExperimentConfig& cfg) {
  EvalPlan plan;
  plan.ns = cfg.eval_ns;
  plan.shots = cfg.shots;
  plan.queries = cfg.queries;
  plan.episodes = cfg.eval_episodes;
  plan.j_repeats = cfg.j_repeats;
  plan.methods = cfg.methods();
  plan.inner = cfg.inner_config();
  plan.seed = evaluation_seed(cfg.seed);
  return plan;
}

std::vector<ReportRow> evaluate_checkpoint(const Checkpoint& ckpt, const MotherDataset& ds,
                                           const std::string& dataset_label, const EvalPlan& plan) {
  std::vector<ReportRow> rows;
  for (std::size_t N : plan.ns) {
    if (ckpt.backend == Backend::protonet) {
      const auto acc = evaluate_proto_episodes(ckpt.proto.encoder, ds, N, plan.shots,
                                               plan.queries, plan.episodes, plan.seed);
      rows.push_back({dataset_label, N, plan.shots, "prototype", 1, plan.episodes, mean_of(acc),
                      std_of(acc),
                      acc.empty() ? 0.0 : 1.96 * std_of(acc) / std::sqrt(double(acc.size()))});
      continue;
    }
    if (N > ckpt.maml.output_width()) {
      throw ConfigError("N=" + std::to_string(N) + " exceeds the checkpoint's output width O=" +
                        std::to_string(ckpt.maml.output_width()));
    }
    EvalRequest req;
    req.N = N;
    req.shots = plan.shots;
    req.queries = plan.queries;
    req.episodes = plan.episodes;
    req.ensemble_sets = plan.j_repeats;
    req.methods = plan.methods;
    req.inner = plan.inner;
    req.seed = plan.seed;
    for (const EvalCell& cell : evaluate_grid(ckpt.maml, ds, req)) {
      rows.push_back({dataset_label, N, plan.shots, to_string(cell.method), cell.ensemble_sets,
                      plan.episodes, cell.mean(), cell.stddev(), cell.ci95()});
    }
  }
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{:.6f},{:.6f}\n", r.dataset, r.N, r.K, r.method,
                       r.j_repeats, r.episodes, r.acc_mean, r.acc_std);
  }
  return out;
}

std::string curve_csv(const TrainingCurve& curve) {
  std::string out = "step,train_loss";
  for (std::size_t n : curve.val_ns) out += fmt::format(",val_acc_N{}", n);
  out += ",val_acc_sum\n";
  for (const auto& p : curve.points) {
    out += fmt::format("{},{:.6f}", p.step, p.train_loss);
    if (p.val_acc.empty()) {
      for (std::size_t i = 0; i <= curve.val_ns.size(); ++i) out += ",";
    } else {
      for (double a : p.val_acc) out += fmt::format(",{:.6f}", a);
      out += fmt::format(",{:.6f}", p.val_sum);
    }
    out += "\n";
  }
  return out;
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::string& run_dir) {
  cfg.validate();
  const fs::path dir = ensure_dir(run_dir);
  const DataSplits data = build_data(cfg);
  TrainOutcome out{train_from_config(cfg, data), {}};
  const TrainedRun& run = out.run;

  save_checkpoint(run.best, (dir / "checkpoint_best.bin").string());
  save_checkpoint(run.final, (dir / "checkpoint_final.bin").string());
  write_file(dir / "curve.csv", curve_csv(run.curve));
  write_file(dir / "config.txt", cfg.to_text());

  json manifest;
  manifest["command"] = "train";
  manifest["config"] = cfg.to_map();
  manifest["seed"] = cfg.seed;
  manifest["wall_time_seconds"] = run.seconds;
  manifest["best_step"] = run.best_step;
  manifest["best_val_acc_sum"] = run.best_val_sum;
  json by_n = json::object();
  for (const auto& p : run.curve.points) {
    if (p.step != run.best_step) continue;
    for (std::size_t i = 0; i < p.val_acc.size(); ++i) {
      by_n[std::to_string(run.curve.val_ns[i])] = p.val_acc[i];
    }
  }
  manifest["best_val_acc_by_N"] = by_n;
  if (!run.curve.points.empty() && !run.curve.points.back().val_acc.empty()) {
    json last = json::object();
    const auto& p = run.curve.points.back();
    for (std::size_t i = 0; i < p.val_acc.size(); ++i) {
      last[std::to_string(run.curve.val_ns[i])] = p.val_acc[i];
    }
    manifest["final_val_acc_by_N"] = last;
    manifest["final_val_acc_sum"] = p.val_sum;
  }
  manifest["stall_warnings"] = stalls_json(run.stalls);
  manifest["outputs"] = {"checkpoint_best.bin", "checkpoint_final.bin", "curve.csv", "config.txt"};
  out.manifest_json = manifest.dump(2) + "\n";
  write_file(dir / "manifest.json", out.manifest_json);
  return out;
}

std::vector<ReportRow> cmd_eval(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                                const std::string& run_dir) {
  const fs::path dir = ensure_dir(run_dir);
  const DataSplits data = build_data(cfg);
  const auto rows = evaluate_checkpoint(ckpt, data.test, data.test_label, eval_plan_from(cfg));
  write_file(dir / "report.csv", report_csv(rows));

  json manifest;
  manifest["command"] = "eval";
  manifest["config"] = cfg.to_map();
  json cells = json::array();
  for (const auto& r : rows) {
    cells.push_back({{"N", r.N},
                     {"method", r.method},
                     {"J_repeats", r.j_repeats},
                     {"acc_mean", r.acc_mean},
                     {"acc_std", r.acc_std},
                     {"acc_ci95", r.acc_ci95}});
  }
  manifest["cells"] = cells;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return rows;
}

std::vector<ReportRow> cmd_sweep_ensemble(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                                          std::size_t N, const std::vector<std::size_t>& sets,
                                          const std::vector<EnsembleMethod>& methods,
                                          const std::string& run_dir) {
  if (ckpt.backend != Backend::maml) throw ConfigError("sweep-ensemble needs a maml checkpoint");
  const fs::path dir = ensure_dir(run_dir);
  const DataSplits data = build_data(cfg);
  EvalPlan plan = eval_plan_from(cfg);
  plan.ns = {N};
  plan.j_repeats = sets;
  plan.methods = methods;
  auto rows = evaluate_checkpoint(ckpt, data.test, data.test_label, plan);
  // j-major order: one block of methods per ensemble size
  write_file(dir / "report.csv", report_csv(rows));
  json manifest;
  manifest["command"] = "sweep-ensemble";
  manifest["config"] = cfg.to_map();
  manifest["N"] = N;
  manifest["j_repeats"] = sets;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return rows;
}

std::vector<AblationRow> cmd_ablate_o(const ExperimentConfig& cfg,
                                      const std::vector<std::size_t>& widths,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::string& run_dir) {
  if (cfg.backend != Backend::maml || cfg.mode != TrainMode::anyway) {
    throw ConfigError("ablate-o needs backend=maml and mode=anyway");
  }
  const fs::path dir = ensure_dir(run_dir);
  const DataSplits data = build_data(cfg);
  std::vector<AblationRow> rows;
  json timing = json::array();
  for (std::size_t O : widths) {
    for (std::uint64_t seed : seeds) {
      ExperimentConfig c = cfg;
      c.output_width = O;
      c.seed = seed;
      c.validate();
      const TrainedRun run = train_from_config(c, data);
      timing.push_back({{"O", O}, {"seed", seed}, {"train_seconds", run.seconds}});
      for (std::size_t N : c.eval_ns) {
        const Accuracy acc = quick_eval(run.best, data.test, c, N, evaluation_seed(seed));
        rows.push_back({O, seed, N, acc.mean, acc.stddev});
      }
    }
  }
  write_file(dir / "report.csv", ablation_csv(rows));
  json manifest;
  manifest["command"] = "ablate-o";
  manifest["config"] = cfg.to_map();
  manifest["output_widths"] = widths;
  manifest["seeds"] = seeds;
  manifest["training"] = timing;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "O,seed,N,acc_mean,acc_std\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{:.6f},{:.6f}\n", r.O, r.seed, r.N, r.acc_mean, r.acc_std);
  }
  return out;
}

GradcheckReport cmd_gradcheck(const GradcheckOptions& options, const std::string& run_dir) {
  GradcheckReport report = run_gradcheck(options);
  if (!run_dir.empty()) {
    const fs::path dir = ensure_dir(run_dir);
    write_file(dir / "report.csv", report.to_csv());
  }
  return report;
}

double CompareSummary::pooled_std() const { return std::sqrt((std_a * std_a + std_b * std_b) / 2.0); }

CompareOutcome cmd_compare(const ExperimentConfig& a, const ExperimentConfig& b,
                           const std::vector<std::size_t>& ns,
                           const std::vector<std::uint64_t>& seeds, const std::string& run_dir) {
  if (!same_data(a, b)) throw ConfigError("compare: configs A and B must share the dataset keys");
  if (seeds.empty()) throw ConfigError("compare: need at least one seed");
  const fs::path dir = ensure_dir(run_dir);
  const DataSplits data = build_data(a);
  CompareOutcome out;
  json timing = json::array();
  for (std::uint64_t seed : seeds) {
    ExperimentConfig ca = a;
    ExperimentConfig cb = b;
    ca.seed = seed;
    cb.seed = seed;
    const TrainedRun ra = train_from_config(ca, data);
    const TrainedRun rb = train_from_config(cb, data);
    timing.push_back({{"seed", seed}, {"train_seconds_a", ra.seconds}, {"train_seconds_b", rb.seconds}});
    for (std::size_t N : ns) {
      const std::uint64_t eval_seed = evaluation_seed(seed);
      out.rows.push_back({N, seed, quick_eval(ra.best, data.test, ca, N, eval_seed).mean,
                          quick_eval(rb.best, data.test, cb, N, eval_seed).mean});
    }
  }
  for (std::size_t N : ns) {
    std::vector<double> va;
    std::vector<double> vb;
    std::vector<double> vd;
    for (const auto& r : out.rows) {
      if (r.N != N) continue;
      va.push_back(r.acc_a);
      vb.push_back(r.acc_b);
      vd.push_back(r.delta());
    }
    out.summary.push_back({N, mean_of(va), mean_of(vb), std_of(va), std_of(vb), mean_of(vd), std_of(vd)});
  }
  write_file(dir / "report.csv", compare_csv(out));
  json manifest;
  manifest["command"] = "compare";
  manifest["config_a"] = a.to_map();
  manifest["config_b"] = b.to_map();
  manifest["seeds"] = seeds;
  manifest["training"] = timing;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return out;
}

std::string compare_csv(const CompareOutcome& outcome) {
  std::string out = "N,seed,acc_a,acc_b,delta\n";
  for (const auto& r : outcome.rows) {
    out += fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", r.N, r.seed, r.acc_a, r.acc_b, r.delta());
  }
  out += "N,summary,mean_a,mean_b,mean_delta,std_a,std_b,std_delta\n";
  for (const auto& s : outcome.summary) {
    out += fmt::format("{},all,{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", s.N, s.mean_a,
                       s.mean_b, s.mean_delta, s.std_a, s.std_b, s.std_delta);
  }
  return out;
}

void cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  const fs::path dir = ensure_dir(out_dir);
  const DataSplits data = build_data(cfg);
  save_features(data.train, (dir / "train.awf").string());
  save_features(data.val, (dir / "val.awf").string());
  save_features(data.test, (dir / "test.awf").string());
}

}  // namespace anyway
