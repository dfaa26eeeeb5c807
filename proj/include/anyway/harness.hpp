#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anyway/checkpoint.hpp"
#include "anyway/config.hpp"
#include "anyway/gradcheck.hpp"

namespace anyway {

/// Environment variable naming the default output directory for run directories.
inline constexpr const char* kOutputDirEnv = "ANYWAY_OUT_DIR";
std::string default_output_dir();

struct DataSplits {
  MotherDataset train;
  MotherDataset val;
  MotherDataset test;
  std::string test_label = "test";
};

/// Loads feature files, or slices one synthetic generator into disjoint train/val/test
/// class ranges (the test range optionally rotated and rescaled).
DataSplits build_data(const ExperimentConfig& cfg);

struct TrainedRun {
  Checkpoint best;
  Checkpoint final;
  TrainingCurve curve;
  std::vector<StallRecord> stalls;
  std::size_t best_step = 0;
  double best_val_sum = 0.0;
  double seconds = 0.0;
};

TrainedRun train_from_config(const ExperimentConfig& cfg, const DataSplits& data);
/// Untrained checkpoint for the config's shapes, seeded from cfg.seed.
Checkpoint initial_checkpoint(const ExperimentConfig& cfg, const DataSplits& data);

struct ReportRow {
  std::string dataset;
  std::size_t N = 0;
  std::size_t K = 0;
  std::string method;
  std::size_t j_repeats = 1;
  std::size_t episodes = 0;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  double acc_ci95 = 0.0;
};

struct EvalPlan {
  std::vector<std::size_t> ns;
  std::size_t shots = 5;
  std::size_t queries = 15;
  std::size_t episodes = 600;
  std::vector<std::size_t> j_repeats{1};
  std::vector<EnsembleMethod> methods{EnsembleMethod::original};
  InnerConfig inner;
  std::uint64_t seed = 0;
};

/// Every (N, method, J_repeats) cell on a shared episode stream per N. ProtoNet
/// checkpoints yield one "prototype" row per N.
std::vector<ReportRow> evaluate_checkpoint(const Checkpoint& ckpt, const MotherDataset& ds,
                                           const std::string& dataset_label, const EvalPlan& plan);
EvalPlan eval_plan_from(const ExperimentConfig& cfg);

/// Episode seed shared by every evaluation derived from one config seed.
std::uint64_t evaluation_seed(std::uint64_t seed);

inline constexpr const char* kReportHeader = "dataset,N,K,method,J_repeats,episodes,acc_mean,acc_std";
std::string report_csv(const std::vector<ReportRow>& rows);
/// step,train_loss,val_acc_N<n>...,val_acc_sum
std::string curve_csv(const TrainingCurve& curve);

// Commands. Each writes into `run_dir` (created if missing) and returns what it wrote.

struct TrainOutcome {
  TrainedRun run;
  std::string manifest_json;
};
TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::string& run_dir);

std::vector<ReportRow> cmd_eval(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                                const std::string& run_dir);

std::vector<ReportRow> cmd_sweep_ensemble(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                                          std::size_t N, const std::vector<std::size_t>& sets,
                                          const std::vector<EnsembleMethod>& methods,
                                          const std::string& run_dir);

struct AblationRow {
  std::size_t O = 0;
  std::uint64_t seed = 0;
  std::size_t N = 0;
  double acc_mean = 0.0;
  double acc_std = 0.0;
};
/// Trains one any-way model per (O, seed) and evaluates it at cfg.eval_ns.
std::vector<AblationRow> cmd_ablate_o(const ExperimentConfig& cfg,
                                      const std::vector<std::size_t>& widths,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::string& run_dir);
std::string ablation_csv(const std::vector<AblationRow>& rows);

GradcheckReport cmd_gradcheck(const GradcheckOptions& options, const std::string& run_dir);

struct CompareRow {
  std::size_t N = 0;
  std::uint64_t seed = 0;
  double acc_a = 0.0;
  double acc_b = 0.0;
  double delta() const { return acc_a - acc_b; }
};
struct CompareSummary {
  std::size_t N = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double std_a = 0.0;
  double std_b = 0.0;
  double mean_delta = 0.0;
  double std_delta = 0.0;
  double pooled_std() const;
};
struct CompareOutcome {
  std::vector<CompareRow> rows;
  std::vector<CompareSummary> summary;
};
/// Trains A and B under each seed on the same data and evaluates both on identical
/// episode streams at `ns`.
CompareOutcome cmd_compare(const ExperimentConfig& a, const ExperimentConfig& b,
                           const std::vector<std::size_t>& ns,
                           const std::vector<std::uint64_t>& seeds, const std::string& run_dir);
std::string compare_csv(const CompareOutcome& outcome);

/// Writes train/val/test feature files for the config's data spec.
void cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace anyway
