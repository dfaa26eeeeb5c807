#pragma once

#include <span>
#include <vector>

#include "anyway/episodes.hpp"
#include "anyway/maml.hpp"
#include "anyway/nn.hpp"

namespace anyway {

/// Running EMA of per-semantic-class prototypes. Unseen rows stay zero and are ignored.
struct PrototypeMemory {
  Matrix prototypes;  // C x F
  std::vector<bool> seen;
  double ema_rate = 0.05;

  static PrototypeMemory create(std::size_t classes, std::size_t feature_dim, double ema_rate);
  std::size_t class_count() const { return prototypes.rows(); }
  std::size_t feature_dim() const { return prototypes.cols(); }
  bool bit_equal(const PrototypeMemory& other) const;
};

/// Mean feature per label 1..N.
Matrix compute_prototypes(const Matrix& features, std::span<const int> labels, std::size_t N);

/// -||x_q - p_n||^2
Matrix proto_logits(const Matrix& query_features, const Matrix& prototypes);

/// Gradients of a loss w.r.t. query features and prototypes given dLoss/dlogits.
struct ProtoLogitGrads {
  Matrix d_query;
  Matrix d_prototypes;
};
ProtoLogitGrads proto_logits_backward(const Matrix& query_features, const Matrix& prototypes,
                                      const Matrix& dlogits);

/// First sighting copies the prototype; afterwards prototype <- (1-rate)*prototype + rate*p.
void ema_update(PrototypeMemory& mem, std::size_t semantic_class, std::span<const double> prototype);

struct AlignmentResult {
  double loss = 0.0;
  Matrix d_prototypes;  // N x F
};

/// Mean over labels whose semantic class has been seen of ||p_n - memory[sem(n)]||^2.
AlignmentResult semantic_alignment_loss(const Matrix& episode_prototypes,
                                        const PrototypeMemory& mem,
                                        std::span<const std::size_t> numeric_to_semantic);

struct ProtoModel {
  MlpEncoder encoder;
  PrototypeMemory memory;
  bool bit_equal(const ProtoModel& other) const;
};

struct ProtoEpisodeResult {
  double loss = 0.0;
  double ce_loss = 0.0;
  double alignment = 0.0;
  double accuracy = 0.0;
  Matrix prototypes;  // detached, for the memory refresh
  GradientSet grads;  // encoder blocks
};

/// Episode loss CE + lambda * alignment and its encoder gradient.
ProtoEpisodeResult proto_episode(const MlpEncoder& encoder, const PrototypeMemory& memory,
                                 const Task& task, double lambda);

struct ProtoTrainSettings {
  EpisodeSpec spec;
  OuterConfig outer;
  double lambda = 0.1;
  std::size_t stall_window = 5;
  double stall_eps = 0.02;
  std::uint64_t seed = 0;
};

struct ProtoTrainResult {
  ProtoModel final_model;
  ProtoModel best_model;
  std::size_t best_step = 0;
  double best_val_sum = 0.0;
  TrainingCurve curve;
  std::vector<StallRecord> stalls;
};

/// One SGD step per meta-batch on the mean episode loss; memory refreshed per episode
/// after its loss is computed.
ProtoTrainResult train_proto(const MotherDataset& train_data, const MotherDataset* validation,
                             const ProtoModel& init, const ProtoTrainSettings& settings);

std::vector<double> evaluate_proto_episodes(const MlpEncoder& encoder, const MotherDataset& ds,
                                            std::size_t N, std::size_t K, std::size_t Q,
                                            std::size_t episodes, std::uint64_t seed);

Accuracy evaluate_proto(const MlpEncoder& encoder, const MotherDataset& ds, std::size_t N,
                        std::size_t K, std::size_t Q, std::size_t episodes, std::uint64_t seed);

}  // namespace anyway
