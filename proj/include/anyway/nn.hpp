#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "anyway/matrix.hpp"
#include "anyway/rng.hpp"

namespace anyway {

/// Tanh MLP mapping d-dimensional inputs to F-dimensional features.
/// Hidden layers use tanh; the last layer is linear unless `activate_output` is set.
struct MlpEncoder {
  std::vector<std::size_t> layer_dims;  // d, hidden..., F
  std::vector<Matrix> weights;          // layer i: dims[i] x dims[i+1]
  std::vector<Matrix> biases;           // layer i: 1 x dims[i+1]
  bool activate_output = false;

  /// Weights uniform in ±1/sqrt(fan_in), zero biases.
  static MlpEncoder create(std::vector<std::size_t> layer_dims, Rng& rng,
                           bool activate_output = false);

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t feature_dim() const { return layer_dims.back(); }
  std::size_t layer_count() const { return weights.size(); }
  bool layer_activated(std::size_t layer) const {
    return layer + 1 < layer_count() || activate_output;
  }

  void validate() const;
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
};

/// Per-layer values recorded by forward_encoder for the backward pass.
struct EncoderCache {
  std::vector<Matrix> inputs;   // input of each layer
  std::vector<Matrix> outputs;  // output of each layer (after activation, if any)
};

Matrix forward_encoder(const MlpEncoder& encoder, const Matrix& x, EncoderCache& cache);
Matrix forward_encoder(const MlpEncoder& encoder, const Matrix& x);

struct LinearHead {
  Matrix weight;  // F x out_dim
  Matrix bias;    // 1 x out_dim

  static LinearHead create(std::size_t in_dim, std::size_t out_dim, Rng& rng);

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
  std::vector<Matrix*> parameters() { return {&weight, &bias}; }
  std::vector<const Matrix*> parameters() const { return {&weight, &bias}; }
};

Matrix head_logits(const LinearHead& head, const Matrix& features);

/// One gradient buffer per parameter buffer, in the owner's declaration order.
struct GradientSet {
  std::vector<Matrix> blocks;

  static GradientSet zeros_like(std::span<const Matrix* const> params);

  void add_scaled(const GradientSet& other, double alpha);
  void scale(double alpha);
  void append(GradientSet&& other);
  bool all_finite() const;
};

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;
};

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

/// Mean soft-target cross-entropy over the batch and its gradient (softmax - t) / B.
/// Per-row sums are accumulated over sorted terms, so the result is invariant to
/// any joint permutation of logit and target columns, bit for bit.
LossResult softmax_cross_entropy(const Matrix& logits, const Matrix& targets);

/// One-hot rows for 1-indexed labels.
Matrix one_hot(std::span<const int> labels, std::size_t classes);

struct HeadGradients {
  Matrix d_weight;
  Matrix d_bias;
  Matrix d_features;
};

HeadGradients head_backward(const LinearHead& head, const Matrix& features,
                            const Matrix& dlogits);

/// Gradients for the encoder blocks (W0, b0, W1, b1, ...) given dLoss/dfeatures.
GradientSet encoder_backward(const MlpEncoder& encoder, const EncoderCache& cache,
                             const Matrix& dfeatures);

/// Encoder blocks followed by head weight and bias.
GradientSet backward(const MlpEncoder& encoder, const LinearHead& head, const Matrix& dlogits,
                     const EncoderCache& cache);

/// Central differences (f(θ+ε) − f(θ−ε)) / 2ε for every coordinate of every block.
/// Parameters are perturbed in place and restored exactly.
GradientSet finite_diff_grad(const std::function<double()>& loss_fn,
                             std::span<Matrix* const> params, double eps = 1e-5);

/// θ ← θ − lr·g
void sgd_step(std::span<Matrix* const> params, const GradientSet& grads, double lr);

enum class OptimizerKind { sgd, adam };
OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Stateful parameter update: plain SGD, or Adam with bias-corrected moments.
/// Moment buffers are allocated on the first step; lr == 0 leaves parameters untouched.
struct Optimizer {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  void step(std::span<Matrix* const> params, const GradientSet& grads);
};

/// |a − b| / max(|a|, |b|, floor); the floor keeps near-zero entries from dominating.
double relative_error(double a, double b, double floor = 1e-6);
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-6);

}  // namespace anyway
