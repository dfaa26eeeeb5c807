#include "anyway/maml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "anyway/errors.hpp"

namespace anyway {

namespace {

constexpr std::uint64_t kCardinalityStream = 11;
constexpr std::uint64_t kTaskStream = 12;
constexpr std::uint64_t kAssignStream = 13;
constexpr std::uint64_t kMixupStream = 14;
constexpr std::uint64_t kValidationStream = 15;
constexpr std::uint64_t kEvalTaskStream = 21;
constexpr std::uint64_t kEvalAssignStream = 22;

double accuracy_of(const std::vector<int>& predicted, const std::vector<int>& truth) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return truth.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Encoder gradient blocks followed by zero head blocks, sized for `model`.
GradientSet model_gradients(const MetaModel& model, GradientSet encoder_grads,
                            Matrix head_w, Matrix head_b) {
  GradientSet g = std::move(encoder_grads);
  g.blocks.push_back(std::move(head_w));
  g.blocks.push_back(std::move(head_b));
  if (model.semantic_head) {
    g.blocks.emplace_back(model.semantic_head->weight.rows(), model.semantic_head->weight.cols());
    g.blocks.emplace_back(1, model.semantic_head->bias.cols());
  }
  return g;
}

bool semantic_active(const MetaModel& model, const SemanticConfig& sem) {
  return sem.enabled && sem.lambda > 0.0 && model.semantic_head.has_value();
}

}  // namespace

TrainMode parse_train_mode(const std::string& name) {
  if (name == "anyway") return TrainMode::anyway;
  if (name == "fixed") return TrainMode::fixed;
  throw ConfigError("unknown mode '" + name + "' (expected anyway|fixed)");
}

std::string to_string(TrainMode mode) { return mode == TrainMode::anyway ? "anyway" : "fixed"; }

MetaModel MetaModel::create(const ModelShape& shape, Rng& rng) {
  std::vector<std::size_t> dims{shape.input_dim};
  dims.insert(dims.end(), shape.hidden.begin(), shape.hidden.end());
  dims.push_back(shape.feature_dim);
  MetaModel m;
  m.encoder = MlpEncoder::create(dims, rng);
  m.anyway_head = LinearHead::create(shape.feature_dim, shape.output_width, rng);
  if (shape.semantic_classes > 0) {
    m.semantic_head = LinearHead::create(shape.feature_dim, shape.semantic_classes, rng);
  }
  return m;
}

std::vector<Matrix*> MetaModel::parameters() {
  auto p = encoder.parameters();
  p.push_back(&anyway_head.weight);
  p.push_back(&anyway_head.bias);
  if (semantic_head) {
    p.push_back(&semantic_head->weight);
    p.push_back(&semantic_head->bias);
  }
  return p;
}

std::vector<const Matrix*> MetaModel::parameters() const {
  auto p = encoder.parameters();
  p.push_back(&anyway_head.weight);
  p.push_back(&anyway_head.bias);
  if (semantic_head) {
    p.push_back(&semantic_head->weight);
    p.push_back(&semantic_head->bias);
  }
  return p;
}

void MetaModel::validate() const {
  encoder.validate();
  require_shape(anyway_head.weight, encoder.feature_dim(), anyway_head.out_dim(), "any-way head");
  require_shape(anyway_head.bias, 1, anyway_head.out_dim(), "any-way head bias");
  if (semantic_head) {
    require_shape(semantic_head->weight, encoder.feature_dim(), semantic_head->out_dim(),
                  "semantic head");
    require_shape(semantic_head->bias, 1, semantic_head->out_dim(), "semantic head bias");
  }
}

bool MetaModel::bit_equal(const MetaModel& other) const {
  const auto a = parameters();
  const auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i]->bit_equal(*b[i])) return false;
  }
  return true;
}

PreparedEpisode prepare_episode(Task task, std::size_t output_width, const SemanticConfig& sem,
                                Rng& assign_rng, Rng& mixup_rng) {
  PreparedEpisode ep;
  std::size_t cardinality = task.N;
  std::vector<int> support_labels = task.support_y;
  ep.support_x = task.support_x;

  std::optional<MixedBatch> mixed;
  if (sem.enabled && sem.mixup) {
    const std::size_t shots = task.N == 0 ? 0 : task.support_x.rows() / task.N;
    const std::size_t count = sem.mixup_count > 0 ? sem.mixup_count : shots;
    mixed = mixup_batch(task, sem.classes, count, mixup_rng, sem.beta_alpha, sem.label_mode);
    if (mixed) {
      cardinality += mixed->extra_labels;
      ep.support_x = vstack(ep.support_x, mixed->inputs);
      support_labels.insert(support_labels.end(), mixed->numeric_labels.begin(),
                            mixed->numeric_labels.end());
    }
  }
  if (cardinality > output_width) {
    throw ConfigError("episode cardinality " + std::to_string(cardinality) +
                      " exceeds output width " + std::to_string(output_width));
  }
  ep.aset = generate_assignments(output_width, cardinality, assign_rng);
  ep.support_targets = one_hot(support_labels, cardinality);
  ep.query_targets = one_hot(task.query_y, cardinality);
  if (sem.enabled) {
    ep.support_semantic = semantic_targets_for(task, task.support_y, sem.classes);
    if (mixed) ep.support_semantic = vstack(ep.support_semantic, mixed->semantic_targets);
    ep.query_semantic = semantic_targets_for(task, task.query_y, sem.classes);
  }
  ep.task = std::move(task);
  return ep;
}

LossResult task_loss(TrainMode mode, const AssignmentSet& aset, const Matrix& logits,
                     const Matrix& targets) {
  if (mode == TrainMode::anyway) return any_way_loss(aset, logits, targets);
  if (aset.J != 1 || aset.N != aset.O) {
    throw ConfigError("fixed-way loss needs a head as wide as the task (N=" +
                      std::to_string(aset.N) + ", O=" + std::to_string(aset.O) + ")");
  }
  return fixed_way_loss(aset.vectors.front(), logits, targets);
}

MetaModel inner_adapt(const MetaModel& model, const PreparedEpisode& ep, TrainMode mode,
                      const InnerConfig& cfg, const SemanticConfig& sem) {
  if (!(cfg.lr >= 0.0)) throw ConfigError("inner learning rate must be non-negative");
  if (ep.aset.O != model.output_width()) {
    throw ConfigError("assignment width " + std::to_string(ep.aset.O) + " != model O=" +
                      std::to_string(model.output_width()));
  }
  if (ep.aset.N != ep.support_targets.cols()) {
    throw ConfigError("assignment cardinality " + std::to_string(ep.aset.N) +
                      " != task cardinality " + std::to_string(ep.support_targets.cols()));
  }
  MetaModel adapted = model;
  if (cfg.steps == 0 || cfg.lr == 0.0) return adapted;

  const bool with_semantic = semantic_active(adapted, sem);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    EncoderCache cache;
    const Matrix features = forward_encoder(adapted.encoder, ep.support_x, cache);
    GradientSet grads;
    if (cfg.use_task_loss) {
      const Matrix logits = head_logits(adapted.anyway_head, features);
      const LossResult loss = task_loss(mode, ep.aset, logits, ep.support_targets);
      HeadGradients hg = head_backward(adapted.anyway_head, features, loss.dlogits);
      grads = model_gradients(adapted, encoder_backward(adapted.encoder, cache, hg.d_features),
                              std::move(hg.d_weight), std::move(hg.d_bias));
    } else {
      grads = GradientSet::zeros_like(adapted.parameters());
    }
    if (with_semantic) {
      // features are treated as constants: only g_s receives this gradient
      SemanticLossResult sl = semantic_loss(*adapted.semantic_head, features, ep.support_semantic);
      const std::size_t w = grads.blocks.size() - 2;
      axpy(sem.lambda, sl.d_weight, grads.blocks[w]);
      axpy(sem.lambda, sl.d_bias, grads.blocks[w + 1]);
    }
    sgd_step(adapted.parameters(), grads, cfg.lr);
  }
  return adapted;
}

QueryObjective query_objective(const MetaModel& adapted, const PreparedEpisode& ep,
                               TrainMode mode, const SemanticConfig& sem) {
  EncoderCache cache;
  const Matrix features = forward_encoder(adapted.encoder, ep.task.query_x, cache);
  const Matrix logits = head_logits(adapted.anyway_head, features);
  const LossResult loss = task_loss(mode, ep.aset, logits, ep.query_targets);
  HeadGradients hg = head_backward(adapted.anyway_head, features, loss.dlogits);

  QueryObjective out;
  out.task_loss = loss.loss;
  out.loss = loss.loss;
  Matrix dfeatures = std::move(hg.d_features);
  std::optional<SemanticLossResult> sl;
  if (semantic_active(adapted, sem)) {
    sl = semantic_loss(*adapted.semantic_head, features, ep.query_semantic);
    out.loss = combine_losses(loss.loss, sl->loss, sem.lambda);
    if (sem.outer_to_encoder) axpy(sem.lambda, sl->d_features, dfeatures);
  }
  out.grads = model_gradients(adapted, encoder_backward(adapted.encoder, cache, dfeatures),
                              std::move(hg.d_weight), std::move(hg.d_bias));
  if (sl) {
    const std::size_t w = out.grads.blocks.size() - 2;
    axpy(sem.lambda, sl->d_weight, out.grads.blocks[w]);
    axpy(sem.lambda, sl->d_bias, out.grads.blocks[w + 1]);
  }
  out.accuracy =
      accuracy_of(predict(ensembled_logit(ep.aset, logits, EnsembleMethod::original)),
                  ep.task.query_y);
  return out;
}

OuterStepStats outer_step(MetaModel& model, const std::vector<Task>& tasks, TrainMode mode,
                          const InnerConfig& inner, Optimizer& optimizer, const SemanticConfig& sem,
                          Rng& assign_rng, Rng& mixup_rng) {
  if (tasks.empty()) throw UsageError("outer_step needs at least one task");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("outer learning rate must be non-negative");
  GradientSet meta_grad = GradientSet::zeros_like(model.parameters());
  OuterStepStats stats;
  for (const Task& task : tasks) {
    const PreparedEpisode ep =
        prepare_episode(task, model.output_width(), sem, assign_rng, mixup_rng);
    const MetaModel adapted = inner_adapt(model, ep, mode, inner, sem);
    const QueryObjective q = query_objective(adapted, ep, mode, sem);
    meta_grad.add_scaled(q.grads, 1.0);
    stats.loss += q.loss;
    stats.accuracy += q.accuracy;
  }
  const double inv = 1.0 / static_cast<double>(tasks.size());
  meta_grad.scale(inv);
  stats.loss *= inv;
  stats.accuracy *= inv;
  optimizer.step(model.parameters(), meta_grad);
  return stats;
}

TrainResult train(const MotherDataset& train_data, const MotherDataset* validation,
                  const MetaModel& init, const TrainSettings& settings) {
  const std::size_t O = init.output_width();
  const EpisodeSpec& spec = settings.spec;
  spec.validate(O);
  settings.semantic.validate();
  if (settings.mode == TrainMode::fixed) {
    if (!spec.fixed_n) throw ConfigError("fixed mode requires fixed_N");
    if (*spec.fixed_n != O) {
      throw ConfigError("fixed mode requires head width O equal to fixed_N");
    }
  }
  if (settings.semantic.enabled && !init.semantic_head) {
    throw ConfigError("semantic loss enabled but the model has no semantic head");
  }

  Rng card_rng = make_rng(settings.seed, kCardinalityStream);
  Rng task_rng = make_rng(settings.seed, kTaskStream);
  Rng assign_rng = make_rng(settings.seed, kAssignStream);
  Rng mixup_rng = make_rng(settings.seed, kMixupStream);

  TrainResult result{init, init, 0, -std::numeric_limits<double>::infinity(), {}, {}};
  if (spec.fixed_n) {
    result.curve.val_ns = {*spec.fixed_n};
  } else {
    result.curve.val_ns = spec.cardinality_pool;
    std::sort(result.curve.val_ns.begin(), result.curve.val_ns.end());
    result.curve.val_ns.erase(std::unique(result.curve.val_ns.begin(), result.curve.val_ns.end()),
                              result.curve.val_ns.end());
  }
  const auto& val_ns = result.curve.val_ns;
  std::vector<std::vector<double>> val_history(val_ns.size());
  std::vector<bool> stall_seen(val_ns.size(), false);

  MetaModel& model = result.final_model;
  Optimizer optimizer;
  optimizer.kind = settings.outer.optimizer;
  optimizer.lr = settings.outer.lr;
  const std::size_t interval = std::max<std::size_t>(1, settings.outer.eval_interval);
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  bool evaluated = false;
  for (std::size_t step = 1; step <= settings.outer.episodes; ++step) {
    std::vector<Task> tasks;
    tasks.reserve(settings.outer.meta_batch);
    for (std::size_t b = 0; b < settings.outer.meta_batch; ++b) {
      const std::size_t n = sample_cardinality(spec, card_rng);
      tasks.push_back(sample_task(train_data, n, spec.shots, spec.queries, task_rng));
    }
    const OuterStepStats stats = outer_step(model, tasks, settings.mode, settings.inner,
                                            optimizer, settings.semantic, assign_rng,
                                            mixup_rng);
    loss_sum += stats.loss;
    ++loss_count;

    if (step % interval != 0 && step != settings.outer.episodes) continue;
    CurvePoint point;
    point.step = step;
    point.train_loss = loss_sum / static_cast<double>(loss_count);
    loss_sum = 0.0;
    loss_count = 0;
    if (validation != nullptr) {
      for (std::size_t i = 0; i < val_ns.size(); ++i) {
        const Accuracy acc = evaluate(model, *validation, val_ns[i], spec.shots, spec.queries,
                                      settings.outer.val_episodes, 0, EnsembleMethod::original,
                                      settings.inner, derive_seed(settings.seed, kValidationStream));
        point.val_acc.push_back(acc.mean);
        point.val_sum += acc.mean;
        val_history[i].push_back(acc.mean);
        if (!stall_seen[i] &&
            val_history[i].size() >= settings.stall_window &&
            stall_detect(val_history[i], settings.stall_window, settings.stall_eps,
                         1.0 / static_cast<double>(val_ns[i]))) {
          stall_seen[i] = true;
          result.stalls.push_back({val_ns[i], step});
        }
      }
      if (point.val_sum > result.best_val_sum) {
        result.best_val_sum = point.val_sum;
        result.best_model = model;
        result.best_step = step;
      }
      evaluated = true;
    }
    result.curve.points.push_back(std::move(point));
  }
  if (!evaluated) {
    result.best_model = model;
    result.best_step = settings.outer.episodes;
    result.best_val_sum = 0.0;
  }
  return result;
}

double EvalCell::mean() const {
  if (episode_acc.empty()) return 0.0;
  return std::accumulate(episode_acc.begin(), episode_acc.end(), 0.0) /
         static_cast<double>(episode_acc.size());
}

double EvalCell::stddev() const {
  if (episode_acc.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (double a : episode_acc) ss += (a - m) * (a - m);
  return std::sqrt(ss / static_cast<double>(episode_acc.size() - 1));
}

double EvalCell::ci95() const {
  if (episode_acc.empty()) return 0.0;
  return 1.96 * stddev() / std::sqrt(static_cast<double>(episode_acc.size()));
}

std::vector<EvalCell> evaluate_grid(const MetaModel& model, const MotherDataset& ds,
                                    const EvalRequest& req) {
  const std::size_t O = model.output_width();
  if (req.N < 1 || req.N > O) {
    throw ConfigError("evaluation cardinality N=" + std::to_string(req.N) +
                      " is outside 1..O=" + std::to_string(O));
  }
  const std::size_t J = O / req.N;
  std::vector<EvalCell> cells;
  std::size_t max_sets = 1;
  for (std::size_t e : req.ensemble_sets) {
    const std::size_t sets = e == 0 ? J : e;
    max_sets = std::max(max_sets, sets);
    for (EnsembleMethod m : req.methods) cells.push_back({sets, m, {}});
  }
  const std::size_t repeats = (max_sets + J - 1) / J;
  const SemanticConfig no_semantic;

  for (std::size_t e = 0; e < req.episodes; ++e) {
    Rng task_rng = make_rng(req.seed, kEvalTaskStream, e);
    Rng assign_rng = make_rng(req.seed, kEvalAssignStream, e);
    Rng unused_rng(0);
    Task task = sample_task(ds, req.N, req.shots, req.queries, task_rng);
    std::vector<AssignmentSet> asets;
    std::vector<Matrix> logits;
    for (std::size_t r = 0; r < repeats; ++r) {
      PreparedEpisode ep = prepare_episode(task, O, no_semantic, assign_rng, unused_rng);
      const MetaModel adapted = inner_adapt(model, ep, TrainMode::anyway, req.inner, no_semantic);
      logits.push_back(head_logits(adapted.anyway_head,
                                   forward_encoder(adapted.encoder, ep.task.query_x)));
      asets.push_back(std::move(ep.aset));
    }
    for (EvalCell& cell : cells) {
      Matrix acc;
      std::size_t remaining = cell.ensemble_sets;
      for (std::size_t r = 0; r < repeats && remaining > 0; ++r) {
        const std::size_t members = std::min(J, remaining);
        accumulate_ensemble(acc, ensembled_logit(asets[r], logits[r], cell.method, members),
                            cell.method);
        remaining -= members;
      }
      cell.episode_acc.push_back(accuracy_of(predict(acc), task.query_y));
    }
  }
  return cells;
}

Accuracy evaluate(const MetaModel& model, const MotherDataset& ds, std::size_t N,
                  std::size_t K, std::size_t Q, std::size_t episodes, std::size_t ensemble_sets,
                  EnsembleMethod method, const InnerConfig& inner, std::uint64_t seed) {
  EvalRequest req;
  req.N = N;
  req.shots = K;
  req.queries = Q;
  req.episodes = episodes;
  req.ensemble_sets = {ensemble_sets};
  req.methods = {method};
  req.inner = inner;
  req.seed = seed;
  const auto cells = evaluate_grid(model, ds, req);
  return {cells.front().mean(), cells.front().stddev()};
}

bool stall_detect(std::span<const double> accuracies, std::size_t window, double eps,
                  double chance) {
  if (window < 2) throw DomainError("stall window must be at least 2");
  if (accuracies.size() < window) return false;
  return std::all_of(accuracies.end() - static_cast<std::ptrdiff_t>(window), accuracies.end(),
                     [&](double a) { return std::abs(a - chance) <= eps; });
}

}  // namespace anyway
