#include "anyway/nn.hpp"

#include <algorithm>
#include <cmath>

#include "anyway/errors.hpp"

namespace anyway {

namespace {

Matrix uniform_init(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

}  // namespace

MlpEncoder MlpEncoder::create(std::vector<std::size_t> layer_dims, Rng& rng,
                              bool activate_output) {
  if (layer_dims.size() < 2) throw DimensionError("encoder needs at least input and output dims");
  MlpEncoder enc;
  enc.layer_dims = std::move(layer_dims);
  enc.activate_output = activate_output;
  for (std::size_t i = 0; i + 1 < enc.layer_dims.size(); ++i) {
    if (enc.layer_dims[i] == 0 || enc.layer_dims[i + 1] == 0) {
      throw DimensionError("encoder layer dims must be positive");
    }
    enc.weights.push_back(uniform_init(enc.layer_dims[i], enc.layer_dims[i + 1], rng));
    enc.biases.emplace_back(1, enc.layer_dims[i + 1]);
  }
  return enc;
}

void MlpEncoder::validate() const {
  if (layer_dims.size() != weights.size() + 1 || biases.size() != weights.size()) {
    throw DimensionError("encoder layer count mismatch");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    require_shape(weights[i], layer_dims[i], layer_dims[i + 1], "encoder weight");
    require_shape(biases[i], 1, layer_dims[i + 1], "encoder bias");
  }
}

std::vector<Matrix*> MlpEncoder::parameters() {
  std::vector<Matrix*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

std::vector<const Matrix*> MlpEncoder::parameters() const {
  std::vector<const Matrix*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

Matrix forward_encoder(const MlpEncoder& encoder, const Matrix& x, EncoderCache& cache) {
  if (x.cols() != encoder.input_dim()) {
    throw DimensionError("encoder input: expected " + std::to_string(encoder.input_dim()) +
                         " columns, got " + std::to_string(x.cols()));
  }
  cache.inputs.clear();
  cache.outputs.clear();
  Matrix h = x;
  for (std::size_t i = 0; i < encoder.layer_count(); ++i) {
    cache.inputs.push_back(h);
    Matrix z = matmul(h, encoder.weights[i]);
    add_row_vector(z, encoder.biases[i]);
    if (encoder.layer_activated(i)) {
      for (double& v : z.data()) v = std::tanh(v);
    }
    cache.outputs.push_back(z);
    h = std::move(z);
  }
  return h;
}

Matrix forward_encoder(const MlpEncoder& encoder, const Matrix& x) {
  EncoderCache cache;
  return forward_encoder(encoder, x, cache);
}

LinearHead LinearHead::create(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  if (in_dim == 0 || out_dim == 0) throw DimensionError("head dims must be positive");
  return LinearHead{uniform_init(in_dim, out_dim, rng), Matrix(1, out_dim)};
}

Matrix head_logits(const LinearHead& head, const Matrix& features) {
  if (features.cols() != head.in_dim()) {
    throw DimensionError("head input: expected " + std::to_string(head.in_dim()) +
                         " columns, got " + std::to_string(features.cols()));
  }
  Matrix logits = matmul(features, head.weight);
  add_row_vector(logits, head.bias);
  return logits;
}

GradientSet GradientSet::zeros_like(std::span<const Matrix* const> params) {
  GradientSet g;
  for (const Matrix* p : params) g.blocks.emplace_back(p->rows(), p->cols());
  return g;
}

void GradientSet::add_scaled(const GradientSet& other, double alpha) {
  if (other.blocks.size() != blocks.size()) throw DimensionError("gradient set block count");
  for (std::size_t i = 0; i < blocks.size(); ++i) axpy(alpha, other.blocks[i], blocks[i]);
}

void GradientSet::scale(double alpha) {
  for (auto& b : blocks) {
    for (double& v : b.data()) v *= alpha;
  }
}

void GradientSet::append(GradientSet&& other) {
  for (auto& b : other.blocks) blocks.push_back(std::move(b));
}

bool GradientSet::all_finite() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const Matrix& m) { return m.all_finite(); });
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  std::vector<double> terms(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    for (std::size_t k = 0; k < row.size(); ++k) terms[k] = std::exp(row[k] - mx);
    auto out = p.row(i);
    std::copy(terms.begin(), terms.end(), out.begin());
    const double z = sorted_sum(terms);
    for (double& v : out) v /= z;
  }
  return p;
}

LossResult softmax_cross_entropy(const Matrix& logits, const Matrix& targets) {
  if (!logits.same_shape(targets)) {
    throw DimensionError("cross-entropy: logits " + logits.shape_string() + " vs targets " +
                         targets.shape_string());
  }
  if (logits.rows() == 0 || logits.cols() == 0) throw DimensionError("cross-entropy: empty batch");
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();

  LossResult result{0.0, Matrix(batch, classes)};
  std::vector<double> exps(classes);
  std::vector<double> terms;
  terms.reserve(classes);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    auto t = targets.row(i);
    double t_sum = 0.0;
    for (double v : t) {
      if (!(v >= 0.0)) throw ValidationError("cross-entropy: negative or NaN target entry");
      t_sum += v;
    }
    if (std::abs(t_sum - 1.0) > 1e-9) {
      throw ValidationError("cross-entropy: target row " + std::to_string(i) + " sums to " +
                            std::to_string(t_sum));
    }
    auto x = logits.row(i);
    const double mx = *std::max_element(x.begin(), x.end());
    for (std::size_t k = 0; k < classes; ++k) exps[k] = std::exp(x[k] - mx);
    std::vector<double> sorted = exps;
    const double z = sorted_sum(sorted);
    const double log_z = std::log(z);

    terms.clear();
    for (std::size_t k = 0; k < classes; ++k) {
      if (t[k] != 0.0) terms.push_back(t[k] * ((x[k] - mx) - log_z));
    }
    total += -sorted_sum(terms);

    auto d = result.dlogits.row(i);
    for (std::size_t k = 0; k < classes; ++k) {
      d[k] = (exps[k] / z - t[k]) / static_cast<double>(batch);
    }
  }
  result.loss = total / static_cast<double>(batch);
  return result;
}

Matrix one_hot(std::span<const int> labels, std::size_t classes) {
  Matrix t(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || static_cast<std::size_t>(labels[i]) > classes) {
      throw DomainError("label " + std::to_string(labels[i]) + " outside 1.." +
                        std::to_string(classes));
    }
    t(i, static_cast<std::size_t>(labels[i] - 1)) = 1.0;
  }
  return t;
}

HeadGradients head_backward(const LinearHead& head, const Matrix& features,
                            const Matrix& dlogits) {
  require_shape(dlogits, features.rows(), head.out_dim(), "head dlogits");
  if (features.cols() != head.in_dim()) throw DimensionError("head backward: feature width");
  return HeadGradients{matmul_tn(features, dlogits), column_sums(dlogits),
                       matmul_nt(dlogits, head.weight)};
}

GradientSet encoder_backward(const MlpEncoder& encoder, const EncoderCache& cache,
                             const Matrix& dfeatures) {
  const std::size_t layers = encoder.layer_count();
  if (cache.inputs.size() != layers || cache.outputs.size() != layers) {
    throw UsageError("encoder backward: cache does not come from a forward pass of this encoder");
  }
  for (std::size_t i = 0; i < layers; ++i) {
    if (cache.inputs[i].cols() != encoder.layer_dims[i] ||
        cache.outputs[i].cols() != encoder.layer_dims[i + 1] ||
        cache.inputs[i].rows() != dfeatures.rows()) {
      throw UsageError("encoder backward: stale cache (shape mismatch at layer " +
                       std::to_string(i) + ")");
    }
  }
  require_shape(dfeatures, cache.outputs.back().rows(), encoder.feature_dim(), "dfeatures");

  std::vector<Matrix> dw(layers);
  std::vector<Matrix> db(layers);
  Matrix delta = dfeatures;
  for (std::size_t li = layers; li-- > 0;) {
    if (encoder.layer_activated(li)) {
      const auto& y = cache.outputs[li].data();
      auto& dd = delta.data();
      for (std::size_t k = 0; k < dd.size(); ++k) dd[k] *= 1.0 - y[k] * y[k];
    }
    dw[li] = matmul_tn(cache.inputs[li], delta);
    db[li] = column_sums(delta);
    if (li > 0) delta = matmul_nt(delta, encoder.weights[li]);
  }
  GradientSet g;
  for (std::size_t i = 0; i < layers; ++i) {
    g.blocks.push_back(std::move(dw[i]));
    g.blocks.push_back(std::move(db[i]));
  }
  return g;
}

GradientSet backward(const MlpEncoder& encoder, const LinearHead& head, const Matrix& dlogits,
                     const EncoderCache& cache) {
  if (cache.outputs.empty()) throw UsageError("backward called without a forward cache");
  const Matrix& features = cache.outputs.back();
  HeadGradients hg = head_backward(head, features, dlogits);
  GradientSet g = encoder_backward(encoder, cache, hg.d_features);
  g.blocks.push_back(std::move(hg.d_weight));
  g.blocks.push_back(std::move(hg.d_bias));
  return g;
}

GradientSet finite_diff_grad(const std::function<double()>& loss_fn,
                             std::span<Matrix* const> params, double eps) {
  GradientSet g;
  for (Matrix* p : params) {
    Matrix grad(p->rows(), p->cols());
    auto& data = p->data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + eps;
      const double up = loss_fn();
      data[k] = saved - eps;
      const double down = loss_fn();
      data[k] = saved;
      grad.data()[k] = (up - down) / (2.0 * eps);
    }
    g.blocks.push_back(std::move(grad));
  }
  return g;
}

void sgd_step(std::span<Matrix* const> params, const GradientSet& grads, double lr) {
  if (!(lr >= 0.0)) throw DomainError("learning rate must be non-negative");
  if (grads.blocks.size() != params.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameter blocks, " +
                         std::to_string(grads.blocks.size()) + " gradient blocks");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads.blocks[i])) {
      throw DimensionError("sgd_step: block " + std::to_string(i) + " shape " +
                           params[i]->shape_string() + " vs gradient " +
                           grads.blocks[i].shape_string());
    }
  }
  if (lr == 0.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    axpy(-lr, grads.blocks[i], *params[i]);
    if (!params[i]->all_finite()) throw DomainError("sgd_step produced a non-finite parameter");
  }
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd|adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

void Optimizer::step(std::span<Matrix* const> params, const GradientSet& grads) {
  if (kind == OptimizerKind::sgd) {
    sgd_step(params, grads, lr);
    return;
  }
  if (!(lr >= 0.0)) throw DomainError("learning rate must be non-negative");
  if (grads.blocks.size() != params.size()) throw DimensionError("adam: parameter/gradient block count");
  if (m.empty()) {
    for (const Matrix* p : params) {
      m.emplace_back(p->rows(), p->cols());
      v.emplace_back(p->rows(), p->cols());
    }
  }
  if (m.size() != params.size()) throw DimensionError("adam: optimizer state was built for other parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads.blocks[i]) || !params[i]->same_shape(m[i])) {
      throw DimensionError("adam: block " + std::to_string(i) + " shape mismatch");
    }
  }
  if (lr == 0.0) return;
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i]->data();
    const auto& g = grads.blocks[i].data();
    auto& mi = m[i].data();
    auto& vi = v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      mi[k] = beta1 * mi[k] + (1.0 - beta1) * g[k];
      vi[k] = beta2 * vi[k] + (1.0 - beta2) * g[k] * g[k];
      w[k] -= lr * (mi[k] / c1) / (std::sqrt(vi[k] / c2) + eps);
    }
    if (!params[i]->all_finite()) throw DomainError("adam produced a non-finite parameter");
  }
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (!a.same_shape(b)) throw DimensionError("max_relative_error: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, relative_error(a.data()[i], b.data()[i], floor));
  }
  return worst;
}

}  // namespace anyway
