#include "anyway/semantic.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <numbers>

#include "anyway/errors.hpp"

namespace anyway {

MixupLabelMode parse_mixup_label_mode(const std::string& name) {
  if (name == "shared") return MixupLabelMode::shared;
  if (name == "per-pair" || name == "per_pair") return MixupLabelMode::per_pair;
  throw ConfigError("unknown mixup label mode '" + name + "' (expected shared|per-pair)");
}

std::string to_string(MixupLabelMode mode) {
  return mode == MixupLabelMode::shared ? "shared" : "per-pair";
}

void SemanticConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(beta_alpha > 0.0)) throw ConfigError("beta_alpha must be positive");
  if (enabled && classes == 0) throw ConfigError("semantic head needs a class count");
  if (mixup && !enabled) throw ConfigError("mixup requires the semantic head");
}

SemanticLossResult semantic_loss(const LinearHead& semantic_head, const Matrix& features,
                                 const Matrix& targets) {
  const Matrix logits = head_logits(semantic_head, features);
  LossResult ce = softmax_cross_entropy(logits, targets);
  HeadGradients hg = head_backward(semantic_head, features, ce.dlogits);
  return {ce.loss, std::move(hg.d_weight), std::move(hg.d_bias), std::move(hg.d_features)};
}

double combine_losses(double original, double semantic, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be non-negative");
  return original + lambda * semantic;
}

double sample_symmetric_beta(double alpha, Rng& rng) {
  if (alpha == 0.5) {
    const double s = std::sin(std::numbers::pi * uniform_unit(rng) / 2.0);
    return s * s;
  }
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

std::optional<MixedBatch> mixup_batch(const Task& task, std::size_t semantic_classes,
                                      std::size_t count, Rng& rng, double beta_alpha,
                                      MixupLabelMode mode) {
  if (task.N < 2) {
    std::clog << "mixup skipped: task has " << task.N << " class(es), need two to blend\n";
    return std::nullopt;
  }
  const std::size_t rows = task.support_x.rows();
  const std::size_t shots = rows / task.N;
  MixedBatch mb;
  mb.inputs = Matrix(count, task.support_x.cols());
  mb.semantic_targets = Matrix(count, semantic_classes);
  std::map<std::pair<int, int>, int> pair_labels;

  for (std::size_t i = 0; i < count; ++i) {
    const int a = static_cast<int>(uniform_index(rng, task.N)) + 1;
    int b = static_cast<int>(uniform_index(rng, task.N - 1)) + 1;
    if (b >= a) ++b;
    // support rows are grouped by label, `shots` per label
    const std::size_t row_a = (a - 1) * shots + uniform_index(rng, shots);
    const std::size_t row_b = (b - 1) * shots + uniform_index(rng, shots);
    const double m = sample_symmetric_beta(beta_alpha, rng);

    auto xa = task.support_x.row(row_a);
    auto xb = task.support_x.row(row_b);
    auto out = mb.inputs.row(i);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = m * xa[k] + (1.0 - m) * xb[k];

    const std::size_t sem_a = task.semantic_of(a);
    const std::size_t sem_b = task.semantic_of(b);
    if (sem_a > semantic_classes || sem_b > semantic_classes) {
      throw DomainError("mixup: semantic class outside 1.." + std::to_string(semantic_classes));
    }
    mb.semantic_targets(i, sem_a - 1) += m;
    mb.semantic_targets(i, sem_b - 1) += 1.0 - m;

    int label = static_cast<int>(task.N) + 1;
    if (mode == MixupLabelMode::per_pair) {
      const auto key = std::minmax(a, b);
      auto [it, inserted] =
          pair_labels.emplace(key, static_cast<int>(task.N + pair_labels.size()) + 1);
      label = it->second;
    }
    mb.numeric_labels.push_back(label);
    mb.mix_ratios.push_back(m);
    mb.source_a.push_back(row_a);
    mb.source_b.push_back(row_b);
  }
  mb.extra_labels = mode == MixupLabelMode::shared ? (count > 0 ? 1 : 0) : pair_labels.size();
  return mb;
}

Matrix semantic_targets_for(const Task& task, std::span<const int> labels,
                            std::size_t semantic_classes) {
  Matrix t(labels.size(), semantic_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t sem = task.semantic_of(labels[i]);
    if (sem < 1 || sem > semantic_classes) {
      throw DomainError("semantic class " + std::to_string(sem) + " outside 1.." +
                        std::to_string(semantic_classes));
    }
    t(i, sem - 1) = 1.0;
  }
  return t;
}

}  // namespace anyway
