#pragma once

#include <optional>
#include <string>
#include <vector>

#include "anyway/assignment.hpp"
#include "anyway/episodes.hpp"
#include "anyway/nn.hpp"
#include "anyway/semantic.hpp"

namespace anyway {

enum class TrainMode { anyway, fixed };

TrainMode parse_train_mode(const std::string& name);
std::string to_string(TrainMode mode);

struct ModelShape {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden{32};
  std::size_t feature_dim = 32;
  std::size_t output_width = 30;  // O
  std::size_t semantic_classes = 0;  // C; 0 means no semantic head
};

/// Encoder f, any-way head g_a of width O and optional semantic head g_s of width C.
/// Parameter order: encoder blocks, g_a weight and bias, then g_s weight and bias.
struct MetaModel {
  MlpEncoder encoder;
  LinearHead anyway_head;
  std::optional<LinearHead> semantic_head;

  /// Initialization order is encoder, g_a, g_s, so adding g_s never changes the others.
  static MetaModel create(const ModelShape& shape, Rng& rng);

  std::size_t output_width() const { return anyway_head.out_dim(); }
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  void validate() const;
  bool bit_equal(const MetaModel& other) const;
};

struct InnerConfig {
  std::size_t steps = 5;
  double lr = 0.2;
  /// Disable to adapt only from the semantic loss (used to check the encoder freeze).
  bool use_task_loss = true;
};

struct OuterConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 0.001;
  std::size_t episodes = 2000;  // outer iterations
  std::size_t meta_batch = 4;
  std::size_t eval_interval = 100;
  std::size_t val_episodes = 50;
};

/// A task prepared for one meta-training step: targets over the episode cardinality
/// (N, or N plus mixup labels) and the assignment set shared by inner and outer loops.
struct PreparedEpisode {
  Task task;
  AssignmentSet aset;
  Matrix support_x;
  Matrix support_targets;
  Matrix support_semantic;  // empty when the semantic head is off
  Matrix query_targets;
  Matrix query_semantic;
};

/// Draws assignments (and mixup rows when enabled) for `task`. In fixed mode the single
/// J=1 permutation is the label-to-node map of the width-N head.
PreparedEpisode prepare_episode(Task task, std::size_t output_width, const SemanticConfig& sem,
                                Rng& assign_rng, Rng& mixup_rng);

/// Support/query loss of the task head for the given mode.
LossResult task_loss(TrainMode mode, const AssignmentSet& aset, const Matrix& logits,
                     const Matrix& targets);

/// `steps` SGD steps on the support set. Returns the adapted copy; `model` is untouched.
/// The semantic head learns from detached features; the encoder never sees L_semantic here.
MetaModel inner_adapt(const MetaModel& model, const PreparedEpisode& ep, TrainMode mode,
                      const InnerConfig& cfg, const SemanticConfig& sem);

struct QueryObjective {
  double loss = 0.0;       // L_a_out + lambda * L_semantic
  double task_loss = 0.0;  // L_a_out alone
  double accuracy = 0.0;
  GradientSet grads;  // d loss / d adapted parameters, in MetaModel parameter order
};

/// Query loss at the adapted parameters and its gradient with respect to them.
QueryObjective query_objective(const MetaModel& adapted, const PreparedEpisode& ep,
                               TrainMode mode, const SemanticConfig& sem);

struct OuterStepStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// First-order meta-update: gradients of the query objective at each task's adapted
/// parameters, averaged over the batch, applied to `model`.
OuterStepStats outer_step(MetaModel& model, const std::vector<Task>& tasks, TrainMode mode,
                          const InnerConfig& inner, Optimizer& optimizer, const SemanticConfig& sem,
                          Rng& assign_rng, Rng& mixup_rng);

struct CurvePoint {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::vector<double> val_acc;  // one per validation cardinality
  double val_sum = 0.0;
};

struct TrainingCurve {
  std::vector<std::size_t> val_ns;
  std::vector<CurvePoint> points;
};

struct StallRecord {
  std::size_t N = 0;
  std::size_t step = 0;  // evaluation step at which the stall was flagged
};

struct TrainResult {
  MetaModel final_model;
  MetaModel best_model;
  std::size_t best_step = 0;
  double best_val_sum = 0.0;
  TrainingCurve curve;
  std::vector<StallRecord> stalls;
};

struct TrainSettings {
  EpisodeSpec spec;
  TrainMode mode = TrainMode::anyway;
  InnerConfig inner;
  OuterConfig outer;
  SemanticConfig semantic;
  std::size_t stall_window = 5;
  double stall_eps = 0.02;
  std::uint64_t seed = 0;
};

/// Full meta-training loop. Validation (if `validation` is non-null) runs every
/// eval_interval steps at every pool cardinality; the best checkpoint maximizes the sum.
TrainResult train(const MotherDataset& train_data, const MotherDataset* validation,
                  const MetaModel& init, const TrainSettings& settings);

struct EvalCell {
  std::size_t ensemble_sets = 1;
  EnsembleMethod method = EnsembleMethod::original;
  std::vector<double> episode_acc;

  double mean() const;
  double stddev() const;
  double ci95() const;
};

struct EvalRequest {
  std::size_t N = 5;
  std::size_t shots = 1;
  std::size_t queries = 15;
  std::size_t episodes = 600;
  /// Ensemble sizes in assignment sets. Sizes above J = floor(O/N) repeat assignment
  /// generation and adaptation from the same initialization.
  std::vector<std::size_t> ensemble_sets{0};  // 0 = all J of one adaptation
  std::vector<EnsembleMethod> methods{EnsembleMethod::original};
  InnerConfig inner;
  std::uint64_t seed = 0;
};

/// Every (ensemble size, method) cell is scored on the same episodes and adaptations.
std::vector<EvalCell> evaluate_grid(const MetaModel& model, const MotherDataset& ds,
                                    const EvalRequest& req);

struct Accuracy {
  double mean = 0.0;
  double stddev = 0.0;
};

Accuracy evaluate(const MetaModel& model, const MotherDataset& ds, std::size_t N,
                  std::size_t K, std::size_t Q, std::size_t episodes, std::size_t ensemble_sets,
                  EnsembleMethod method, const InnerConfig& inner, std::uint64_t seed);

/// True when the trailing `window` accuracies all lie within eps of chance.
bool stall_detect(std::span<const double> accuracies, std::size_t window, double eps,
                  double chance);

}  // namespace anyway
