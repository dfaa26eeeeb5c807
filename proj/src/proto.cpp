#include "anyway/proto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "anyway/errors.hpp"

namespace anyway {

namespace {

constexpr std::uint64_t kTaskStream = 31;
constexpr std::uint64_t kCardinalityStream = 32;
constexpr std::uint64_t kValidationStream = 33;
constexpr std::uint64_t kEvalTaskStream = 21;

Accuracy summarize(const std::vector<double>& acc) {
  Accuracy out;
  if (acc.empty()) return out;
  out.mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
  if (acc.size() > 1) {
    double ss = 0.0;
    for (double a : acc) ss += (a - out.mean) * (a - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(acc.size() - 1));
  }
  return out;
}

}  // namespace

PrototypeMemory PrototypeMemory::create(std::size_t classes, std::size_t feature_dim,
                                        double ema_rate) {
  if (!(ema_rate > 0.0 && ema_rate <= 1.0)) throw ConfigError("EMA rate must lie in (0, 1]");
  return PrototypeMemory{Matrix(classes, feature_dim), std::vector<bool>(classes, false), ema_rate};
}

bool PrototypeMemory::bit_equal(const PrototypeMemory& other) const {
  return prototypes.bit_equal(other.prototypes) && seen == other.seen &&
         ema_rate == other.ema_rate;
}

bool ProtoModel::bit_equal(const ProtoModel& other) const {
  const auto a = encoder.parameters();
  const auto b = other.encoder.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i]->bit_equal(*b[i])) return false;
  }
  return memory.bit_equal(other.memory);
}

Matrix compute_prototypes(const Matrix& features, std::span<const int> labels, std::size_t N) {
  if (labels.size() != features.rows()) throw DimensionError("compute_prototypes: label count");
  Matrix protos(N, features.cols());
  std::vector<std::size_t> counts(N, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || static_cast<std::size_t>(labels[i]) > N) {
      throw DomainError("compute_prototypes: label outside 1..N");
    }
    const std::size_t n = static_cast<std::size_t>(labels[i] - 1);
    ++counts[n];
    auto src = features.row(i);
    auto dst = protos.row(n);
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
  }
  for (std::size_t n = 0; n < N; ++n) {
    if (counts[n] == 0) throw DomainError("compute_prototypes: label " + std::to_string(n + 1) +
                                          " has no examples");
    for (double& v : protos.row(n)) v /= static_cast<double>(counts[n]);
  }
  return protos;
}

Matrix proto_logits(const Matrix& query_features, const Matrix& prototypes) {
  if (query_features.cols() != prototypes.cols()) {
    throw DimensionError("proto_logits: feature widths differ");
  }
  Matrix logits(query_features.rows(), prototypes.rows());
  for (std::size_t q = 0; q < query_features.rows(); ++q) {
    auto x = query_features.row(q);
    for (std::size_t n = 0; n < prototypes.rows(); ++n) {
      auto p = prototypes.row(n);
      double d2 = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) d2 += (x[k] - p[k]) * (x[k] - p[k]);
      logits(q, n) = -d2;
    }
  }
  return logits;
}

ProtoLogitGrads proto_logits_backward(const Matrix& query_features, const Matrix& prototypes,
                                      const Matrix& dlogits) {
  require_shape(dlogits, query_features.rows(), prototypes.rows(), "proto dlogits");
  ProtoLogitGrads g{Matrix(query_features.rows(), query_features.cols()),
                    Matrix(prototypes.rows(), prototypes.cols())};
  // d(-||x-p||^2)/dx = -2(x-p), d/dp = 2(x-p)
  for (std::size_t q = 0; q < query_features.rows(); ++q) {
    auto x = query_features.row(q);
    auto dx = g.d_query.row(q);
    for (std::size_t n = 0; n < prototypes.rows(); ++n) {
      const double w = dlogits(q, n);
      if (w == 0.0) continue;
      auto p = prototypes.row(n);
      auto dp = g.d_prototypes.row(n);
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double diff = 2.0 * w * (x[k] - p[k]);
        dx[k] -= diff;
        dp[k] += diff;
      }
    }
  }
  return g;
}

void ema_update(PrototypeMemory& mem, std::size_t semantic_class,
                std::span<const double> prototype) {
  if (semantic_class < 1 || semantic_class > mem.class_count()) {
    throw DomainError("ema_update: semantic class " + std::to_string(semantic_class) +
                      " outside 1.." + std::to_string(mem.class_count()));
  }
  if (prototype.size() != mem.feature_dim()) throw DimensionError("ema_update: prototype width");
  const std::size_t c = semantic_class - 1;
  auto row = mem.prototypes.row(c);
  if (!mem.seen[c]) {
    std::copy(prototype.begin(), prototype.end(), row.begin());
    mem.seen[c] = true;
    return;
  }
  const double rho = mem.ema_rate;
  for (std::size_t k = 0; k < row.size(); ++k) row[k] = (1.0 - rho) * row[k] + rho * prototype[k];
}

AlignmentResult semantic_alignment_loss(const Matrix& episode_prototypes,
                                        const PrototypeMemory& mem,
                                        std::span<const std::size_t> numeric_to_semantic) {
  if (numeric_to_semantic.size() != episode_prototypes.rows()) {
    throw DimensionError("alignment: map size != prototype count");
  }
  if (episode_prototypes.cols() != mem.feature_dim()) {
    throw DimensionError("alignment: feature width differs from memory");
  }
  AlignmentResult out{0.0, Matrix(episode_prototypes.rows(), episode_prototypes.cols())};
  std::vector<std::size_t> present;
  for (std::size_t n = 0; n < numeric_to_semantic.size(); ++n) {
    const std::size_t sem = numeric_to_semantic[n];
    if (sem < 1 || sem > mem.class_count()) throw DomainError("alignment: semantic id range");
    if (mem.seen[sem - 1]) present.push_back(n);
  }
  if (present.empty()) return out;
  const double inv = 1.0 / static_cast<double>(present.size());
  for (std::size_t n : present) {
    auto p = episode_prototypes.row(n);
    auto m = mem.prototypes.row(numeric_to_semantic[n] - 1);
    auto d = out.d_prototypes.row(n);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double diff = p[k] - m[k];
      out.loss += diff * diff;
      d[k] = 2.0 * diff * inv;
    }
  }
  out.loss *= inv;
  return out;
}

ProtoEpisodeResult proto_episode(const MlpEncoder& encoder, const PrototypeMemory& memory,
                                 const Task& task, double lambda) {
  const std::size_t ns = task.support_x.rows();
  EncoderCache cache;
  const Matrix features = forward_encoder(encoder, vstack(task.support_x, task.query_x), cache);
  std::vector<std::size_t> support_rows(ns);
  std::iota(support_rows.begin(), support_rows.end(), std::size_t{0});
  std::vector<std::size_t> query_rows(task.query_x.rows());
  std::iota(query_rows.begin(), query_rows.end(), ns);
  const Matrix support_f = gather_rows(features, support_rows);
  const Matrix query_f = gather_rows(features, query_rows);

  ProtoEpisodeResult out;
  out.prototypes = compute_prototypes(support_f, task.support_y, task.N);
  const Matrix logits = proto_logits(query_f, out.prototypes);
  const LossResult ce = softmax_cross_entropy(logits, one_hot(task.query_y, task.N));
  ProtoLogitGrads pg = proto_logits_backward(query_f, out.prototypes, ce.dlogits);
  out.ce_loss = ce.loss;
  out.loss = ce.loss;
  if (lambda > 0.0) {
    AlignmentResult al = semantic_alignment_loss(out.prototypes, memory, task.numeric_to_semantic);
    out.alignment = al.loss;
    out.loss = ce.loss + lambda * al.loss;
    axpy(lambda, al.d_prototypes, pg.d_prototypes);
  }

  // prototype n is the mean of its support rows
  std::vector<std::size_t> counts(task.N, 0);
  for (int y : task.support_y) ++counts[static_cast<std::size_t>(y - 1)];
  Matrix dfeatures(features.rows(), features.cols());
  for (std::size_t i = 0; i < ns; ++i) {
    const std::size_t n = static_cast<std::size_t>(task.support_y[i] - 1);
    auto src = pg.d_prototypes.row(n);
    auto dst = dfeatures.row(i);
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k] / static_cast<double>(counts[n]);
  }
  for (std::size_t q = 0; q < query_rows.size(); ++q) {
    auto src = pg.d_query.row(q);
    std::copy(src.begin(), src.end(), dfeatures.row(ns + q).begin());
  }
  out.grads = encoder_backward(encoder, cache, dfeatures);

  std::size_t hits = 0;
  const auto predicted = predict(logits);
  for (std::size_t q = 0; q < predicted.size(); ++q) hits += predicted[q] == task.query_y[q];
  out.accuracy = static_cast<double>(hits) / static_cast<double>(predicted.size());
  return out;
}

std::vector<double> evaluate_proto_episodes(const MlpEncoder& encoder, const MotherDataset& ds,
                                            std::size_t N, std::size_t K, std::size_t Q,
                                            std::size_t episodes, std::uint64_t seed) {
  std::vector<double> acc;
  acc.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng = make_rng(seed, kEvalTaskStream, e);
    const Task task = sample_task(ds, N, K, Q, rng);
    const Matrix protos = compute_prototypes(forward_encoder(encoder, task.support_x),
                                             task.support_y, N);
    const auto predicted = predict(proto_logits(forward_encoder(encoder, task.query_x), protos));
    std::size_t hits = 0;
    for (std::size_t q = 0; q < predicted.size(); ++q) hits += predicted[q] == task.query_y[q];
    acc.push_back(static_cast<double>(hits) / static_cast<double>(predicted.size()));
  }
  return acc;
}

Accuracy evaluate_proto(const MlpEncoder& encoder, const MotherDataset& ds, std::size_t N,
                        std::size_t K, std::size_t Q, std::size_t episodes, std::uint64_t seed) {
  return summarize(evaluate_proto_episodes(encoder, ds, N, K, Q, episodes, seed));
}

ProtoTrainResult train_proto(const MotherDataset& train_data, const MotherDataset* validation,
                             const ProtoModel& init, const ProtoTrainSettings& settings) {
  const EpisodeSpec& spec = settings.spec;
  spec.validate(std::numeric_limits<std::size_t>::max());
  if (!(settings.lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(settings.outer.lr >= 0.0)) throw ConfigError("outer learning rate must be non-negative");
  if (settings.lambda > 0.0 && init.memory.class_count() < train_data.class_count()) {
    throw ConfigError("prototype memory has fewer rows than training classes");
  }

  Rng card_rng = make_rng(settings.seed, kCardinalityStream);
  Rng task_rng = make_rng(settings.seed, kTaskStream);

  ProtoTrainResult result{init, init, 0, -std::numeric_limits<double>::infinity(), {}, {}};
  if (spec.fixed_n) {
    result.curve.val_ns = {*spec.fixed_n};
  } else {
    result.curve.val_ns = spec.cardinality_pool;
    std::sort(result.curve.val_ns.begin(), result.curve.val_ns.end());
    result.curve.val_ns.erase(std::unique(result.curve.val_ns.begin(), result.curve.val_ns.end()),
                              result.curve.val_ns.end());
  }
  const auto& val_ns = result.curve.val_ns;
  std::vector<std::vector<double>> history(val_ns.size());
  std::vector<bool> stall_seen(val_ns.size(), false);

  ProtoModel& model = result.final_model;
  const bool use_memory = settings.lambda > 0.0;
  Optimizer optimizer;
  optimizer.kind = settings.outer.optimizer;
  optimizer.lr = settings.outer.lr;
  const std::size_t interval = std::max<std::size_t>(1, settings.outer.eval_interval);
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  bool evaluated = false;
  for (std::size_t step = 1; step <= settings.outer.episodes; ++step) {
    GradientSet grad = GradientSet::zeros_like(std::as_const(model.encoder).parameters());
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < settings.outer.meta_batch; ++b) {
      const std::size_t n = sample_cardinality(spec, card_rng);
      const Task task = sample_task(train_data, n, spec.shots, spec.queries, task_rng);
      ProtoEpisodeResult ep = proto_episode(model.encoder, model.memory, task, settings.lambda);
      grad.add_scaled(ep.grads, 1.0);
      batch_loss += ep.loss;
      if (use_memory) {
        for (std::size_t k = 0; k < task.N; ++k) {
          ema_update(model.memory, task.numeric_to_semantic[k], ep.prototypes.row(k));
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(1, settings.outer.meta_batch));
    grad.scale(inv);
    optimizer.step(model.encoder.parameters(), grad);
    loss_sum += batch_loss * inv;
    ++loss_count;

    if (step % interval != 0 && step != settings.outer.episodes) continue;
    CurvePoint point;
    point.step = step;
    point.train_loss = loss_sum / static_cast<double>(loss_count);
    loss_sum = 0.0;
    loss_count = 0;
    if (validation != nullptr) {
      for (std::size_t i = 0; i < val_ns.size(); ++i) {
        const Accuracy acc =
            evaluate_proto(model.encoder, *validation, val_ns[i], spec.shots, spec.queries,
                           settings.outer.val_episodes, derive_seed(settings.seed, kValidationStream));
        point.val_acc.push_back(acc.mean);
        point.val_sum += acc.mean;
        history[i].push_back(acc.mean);
        if (!stall_seen[i] && history[i].size() >= settings.stall_window &&
            stall_detect(history[i], settings.stall_window, settings.stall_eps,
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

}  // namespace anyway
