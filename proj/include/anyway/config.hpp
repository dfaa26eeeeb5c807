#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anyway/assignment.hpp"
#include "anyway/checkpoint.hpp"
#include "anyway/maml.hpp"
#include "anyway/semantic.hpp"

namespace anyway {

/// Every knob of an experiment. Serialized as flat `key=value` lines with `#` comments;
/// list values are comma separated.
struct ExperimentConfig {
  Backend backend = Backend::maml;
  TrainMode mode = TrainMode::anyway;
  std::size_t output_width = 30;
  std::vector<std::size_t> cardinality_pool{3, 5, 7, 9};
  std::optional<std::size_t> fixed_n;
  std::size_t shots = 5;
  std::size_t queries = 15;

  std::vector<std::size_t> hidden{32};
  std::size_t feature_dim = 32;

  double inner_lr = 0.2;
  std::size_t inner_steps = 5;
  OptimizerKind outer_optimizer = OptimizerKind::adam;
  double outer_lr = 0.001;
  std::size_t episodes = 2000;
  std::size_t meta_batch = 4;
  std::size_t eval_interval = 100;
  std::size_t val_episodes = 50;

  bool semantic_enabled = false;
  std::optional<double> lambda;  // unset: backend/shot default
  bool mixup_enabled = false;
  std::string mixup_labels = "shared";
  bool semantic_outer_to_encoder = true;
  std::optional<double> ema_rate;  // unset: shot default

  // data: feature files, or the synthetic generator when train_data is empty
  std::string train_data;
  std::string val_data;
  std::string test_data;
  std::size_t data_dim = 16;
  std::size_t train_classes = 20;
  std::size_t val_classes = 10;
  std::size_t test_classes = 10;
  std::size_t per_class = 40;
  double mean_scale = 3.0;
  double noise_sigma = 0.5;
  std::uint64_t data_seed = 1;
  std::uint64_t test_rotation_seed = 0;  // 0: no shift
  double test_sigma_scale = 1.0;

  std::vector<std::size_t> eval_ns{3, 5, 7, 9, 10};
  std::size_t eval_episodes = 600;
  std::vector<std::size_t> j_repeats{1};
  std::vector<std::string> ensemble_methods{"original"};

  std::size_t stall_window = 5;
  double stall_eps = 0.02;
  std::uint64_t seed = 0;

  /// Sets one key from its text form. Throws ConfigError naming the key.
  void apply(const std::string& key, const std::string& value);
  /// Parses `key=value` lines; `#` starts a comment.
  void apply_text(const std::string& text);
  void apply_file(const std::string& path);

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Every key in a fixed order; apply_text(to_text()) reproduces the config.
  std::string to_text() const;
  std::map<std::string, std::string> to_map() const;

  std::size_t effective_output_width() const;
  double effective_lambda() const;
  double effective_ema_rate() const;

  EpisodeSpec episode_spec() const;
  InnerConfig inner_config() const;
  OuterConfig outer_config() const;
  SemanticConfig semantic_config(std::size_t semantic_classes) const;
  std::vector<EnsembleMethod> methods() const;
};

/// Lambda defaults: MAML 0.1 (1-shot) / 0.5 (multi-shot); ProtoNet 0.01 / 0.1.
double default_lambda(Backend backend, std::size_t shots);
/// EMA rate defaults: 0.01 (1-shot) / 0.05 (multi-shot).
double default_ema_rate(std::size_t shots);

}  // namespace anyway
