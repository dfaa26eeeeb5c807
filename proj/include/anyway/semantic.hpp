#pragma once

#include <optional>
#include <string>
#include <vector>

#include "anyway/episodes.hpp"
#include "anyway/nn.hpp"

namespace anyway {

enum class MixupLabelMode {
  shared,    // every mixed sample of the episode gets numeric label N+1
  per_pair,  // each distinct (a, b) class pair gets its own label N+1, N+2, ...
};

MixupLabelMode parse_mixup_label_mode(const std::string& name);
std::string to_string(MixupLabelMode mode);

struct SemanticConfig {
  bool enabled = false;
  std::size_t classes = 0;  // C, the training-split class count
  double lambda = 0.1;
  bool mixup = false;
  double beta_alpha = 0.5;
  std::size_t mixup_count = 0;  // 0 means one mixed sample per shot
  MixupLabelMode label_mode = MixupLabelMode::shared;
  /// Whether the semantic loss reaches the encoder at the outer step. It never does in the
  /// inner loop.
  bool outer_to_encoder = true;

  void validate() const;
};

struct MixedBatch {
  Matrix inputs;            // count x d
  Matrix semantic_targets;  // count x C
  std::vector<int> numeric_labels;
  std::vector<double> mix_ratios;
  std::vector<std::size_t> source_a;  // support row indices
  std::vector<std::size_t> source_b;
  std::size_t extra_labels = 0;  // numeric labels added beyond N
};

struct SemanticLossResult {
  double loss = 0.0;
  Matrix d_weight;
  Matrix d_bias;
  Matrix d_features;  // only consumed at the outer step
};

/// Soft-target cross-entropy of the semantic head over C classes.
SemanticLossResult semantic_loss(const LinearHead& semantic_head, const Matrix& features,
                                 const Matrix& targets);

/// L_original + lambda * L_semantic
double combine_losses(double original, double semantic, double lambda);

/// Beta(alpha, alpha) draw. alpha = 0.5 uses the arcsine inverse CDF sin^2(pi*u/2).
double sample_symmetric_beta(double alpha, Rng& rng);

/// Blends support rows from two distinct numeric classes. Returns nullopt (and logs a
/// notice) when the task has fewer than two classes.
std::optional<MixedBatch> mixup_batch(const Task& task, std::size_t semantic_classes,
                                      std::size_t count, Rng& rng, double beta_alpha = 0.5,
                                      MixupLabelMode mode = MixupLabelMode::shared);

/// One-hot semantic targets for labelled rows.
Matrix semantic_targets_for(const Task& task, std::span<const int> labels,
                            std::size_t semantic_classes);

}  // namespace anyway
