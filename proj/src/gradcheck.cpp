#include "anyway/gradcheck.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "anyway/assignment.hpp"
#include "anyway/maml.hpp"
#include "anyway/proto.hpp"
#include "anyway/semantic.hpp"

namespace anyway {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

Matrix random_targets(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (double& v : t.row(r)) {
      v = 0.05 + uniform_unit(rng);
      sum += v;
    }
    for (double& v : t.row(r)) v /= sum;
  }
  return t;
}

std::size_t draw_dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + uniform_index(rng, hi - lo + 1);
}

/// Randomizes biases so that zero-initialized blocks are exercised too.
void jitter_biases(MlpEncoder& enc, Rng& rng) {
  for (auto& b : enc.biases) b = random_matrix(1, b.cols(), rng);
}

class BlockTracker {
 public:
  BlockTracker(const GradcheckOptions& opt, GradcheckReport& report) : opt_(opt), report_(report) {}

  void compare(const std::string& name, GradientSet analytic, const GradientSet& numeric,
               std::size_t first, std::size_t count) {
    if (opt_.corrupt) opt_.corrupt(name, analytic);
    double worst = 0.0;
    for (std::size_t i = first; i < first + count; ++i) {
      worst = std::max(worst, max_relative_error(analytic.blocks[i], numeric.blocks[i]));
    }
    auto it = std::find_if(report_.blocks.begin(), report_.blocks.end(),
                           [&](const GradcheckBlock& b) { return b.name == name; });
    if (it == report_.blocks.end()) {
      report_.blocks.push_back({name, 0.0, 0, true});
      it = report_.blocks.end() - 1;
    }
    it->max_rel_error = std::max(it->max_rel_error, worst);
    ++it->trials;
    it->passed = it->max_rel_error < opt_.tolerance;
  }

 private:
  const GradcheckOptions& opt_;
  GradcheckReport& report_;
};

}  // namespace

bool GradcheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const GradcheckBlock& b) { return b.passed; });
}

std::string GradcheckReport::to_csv() const {
  std::string out = "block,trials,max_rel_error,status\n";
  for (const auto& b : blocks) {
    out += fmt::format("{},{},{:.3e},{}\n", b.name, b.trials, b.max_rel_error,
                       b.passed ? "pass" : "FAIL");
  }
  return out;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  GradcheckReport report;
  report.tolerance = opt.tolerance;
  BlockTracker tracker(opt, report);
  const std::size_t hi = std::max<std::size_t>(2, opt.max_dim);

  for (std::size_t trial = 0; trial < opt.trials; ++trial) {
    Rng rng = make_rng(opt.seed, 0x67726164, trial);
    const std::size_t d = draw_dim(rng, 1, hi);
    const std::size_t h = draw_dim(rng, 1, hi);
    const std::size_t f = draw_dim(rng, 1, hi);
    const std::size_t O = draw_dim(rng, 2, hi);
    const std::size_t N = draw_dim(rng, 1, O);
    const std::size_t C = draw_dim(rng, 2, hi);
    const std::size_t batch = draw_dim(rng, 1, 4);

    ModelShape shape{d, {h}, f, O, C};
    MetaModel model = MetaModel::create(shape, rng);
    jitter_biases(model.encoder, rng);
    model.anyway_head.bias = random_matrix(1, O, rng);
    const std::size_t enc_blocks = model.encoder.parameters().size();
    const Matrix x = random_matrix(batch, d, rng);

    {  // plain cross-entropy through encoder and head
      const Matrix t = random_targets(batch, O, rng);
      auto loss_fn = [&] {
        return softmax_cross_entropy(head_logits(model.anyway_head, forward_encoder(model.encoder, x)), t)
            .loss;
      };
      EncoderCache cache;
      const Matrix logits = head_logits(model.anyway_head, forward_encoder(model.encoder, x, cache));
      GradientSet analytic =
          backward(model.encoder, model.anyway_head, softmax_cross_entropy(logits, t).dlogits, cache);
      std::vector<Matrix*> params = model.encoder.parameters();
      params.push_back(&model.anyway_head.weight);
      params.push_back(&model.anyway_head.bias);
      const GradientSet numeric = finite_diff_grad(loss_fn, params, opt.eps);
      tracker.compare("encoder", analytic, numeric, 0, enc_blocks);
      tracker.compare("linear_head", analytic, numeric, enc_blocks, 2);
    }

    {  // any-way loss: extraction and scatter
      const AssignmentSet aset = generate_assignments(O, N, rng);
      const Matrix t = random_targets(batch, N, rng);
      auto loss_fn = [&] {
        return any_way_loss(aset, head_logits(model.anyway_head, forward_encoder(model.encoder, x)), t)
            .loss;
      };
      EncoderCache cache;
      const Matrix logits = head_logits(model.anyway_head, forward_encoder(model.encoder, x, cache));
      GradientSet analytic =
          backward(model.encoder, model.anyway_head, any_way_loss(aset, logits, t).dlogits, cache);
      std::vector<Matrix*> params = model.encoder.parameters();
      params.push_back(&model.anyway_head.weight);
      params.push_back(&model.anyway_head.bias);
      const GradientSet numeric = finite_diff_grad(loss_fn, params, opt.eps);
      tracker.compare("anyway_scatter", analytic, numeric, 0, enc_blocks + 2);
    }

    {  // semantic head on fixed features
      const Matrix feats = forward_encoder(model.encoder, x);
      const Matrix t = random_targets(batch, C, rng);
      LinearHead& gs = *model.semantic_head;
      gs.bias = random_matrix(1, C, rng);
      auto loss_fn = [&] { return semantic_loss(gs, feats, t).loss; };
      SemanticLossResult sl = semantic_loss(gs, feats, t);
      GradientSet analytic;
      analytic.blocks = {sl.d_weight, sl.d_bias};
      std::vector<Matrix*> params{&gs.weight, &gs.bias};
      tracker.compare("semantic_head", analytic, finite_diff_grad(loss_fn, params, opt.eps), 0, 2);
    }

    {  // outer objective with semantic gradient routed into the encoder
      Task task;
      task.N = N;
      task.query_x = x;
      for (std::size_t i = 0; i < batch; ++i) {
        task.query_y.push_back(static_cast<int>(uniform_index(rng, N)) + 1);
      }
      for (std::size_t n = 0; n < N; ++n) task.numeric_to_semantic.push_back(1 + n % C);
      PreparedEpisode ep;
      ep.aset = generate_assignments(O, N, rng);
      ep.query_targets = one_hot(task.query_y, N);
      ep.query_semantic = semantic_targets_for(task, task.query_y, C);
      ep.task = task;
      SemanticConfig sem;
      sem.enabled = true;
      sem.classes = C;
      sem.lambda = 0.5;
      auto loss_fn = [&] { return query_objective(model, ep, TrainMode::anyway, sem).loss; };
      GradientSet analytic = query_objective(model, ep, TrainMode::anyway, sem).grads;
      auto params = model.parameters();
      tracker.compare("outer_objective", analytic, finite_diff_grad(loss_fn, params, opt.eps), 0,
                      params.size());
    }

    {  // ProtoNet: distance logits, prototype means and alignment
      const std::size_t k = draw_dim(rng, 1, 3);
      const std::size_t q = draw_dim(rng, 1, 3);
      Task task;
      task.N = N;
      task.support_x = random_matrix(N * k, d, rng);
      task.query_x = random_matrix(N * q, d, rng);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < k; ++i) task.support_y.push_back(static_cast<int>(n + 1));
        for (std::size_t i = 0; i < q; ++i) task.query_y.push_back(static_cast<int>(n + 1));
        task.numeric_to_semantic.push_back(n + 1);
      }
      PrototypeMemory mem = PrototypeMemory::create(N, f, 0.05);
      for (std::size_t n = 0; n < N; n += 2) {  // leave odd rows unseen
        const Matrix p = random_matrix(1, f, rng);
        ema_update(mem, n + 1, p.row(0));
      }
      auto loss_fn = [&] { return proto_episode(model.encoder, mem, task, 0.3).loss; };
      GradientSet analytic = proto_episode(model.encoder, mem, task, 0.3).grads;
      auto params = model.encoder.parameters();
      tracker.compare("proto_distances", analytic, finite_diff_grad(loss_fn, params, opt.eps), 0,
                      params.size());
    }
  }
  return report;
}

}  // namespace anyway
