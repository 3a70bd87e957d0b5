#pragma once

#include "fedbench/linalg.hpp"

namespace fedbench {

/// Layer sizes of the classifier. hidden == 0 selects plain multinomial
/// logistic regression; hidden > 0 selects a one-hidden-layer ReLU MLP.
struct ModelDims {
  int input = 0;
  int hidden = 0;
  int classes = 0;

  bool operator==(const ModelDims&) const = default;
};

struct Layer {
  Mat w;  // (in x out), row-major
  Vec b;  // (out)

  bool operator==(const Layer&) const = default;
};

/// Classifier parameters: a layered view plus a deterministic flat layout
/// (per layer: weights row-major, then bias).
struct ModelParams {
  ModelDims dims;
  std::vector<Layer> layers;

  static ModelParams zeros(const ModelDims& dims);
  /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  static ModelParams init_uniform(const ModelDims& dims, Rng& rng);

  std::size_t param_count() const;
  bool all_finite() const;

  bool operator==(const ModelParams&) const = default;
};

struct Batch {
  Mat inputs;               // (B x input)
  std::vector<int> labels;  // values in [0, classes)
};

struct ForwardResult {
  double loss = 0.0;   // mean softmax cross-entropy over the batch
  ModelParams grads;   // same shape as params
  Mat logits;          // (B x classes)
};

/// Loss, analytic gradient and logits on one batch.
ForwardResult forward_loss_grad(const ModelParams& params, const Batch& batch);

/// Logits only (evaluation path).
Mat forward_logits(const ModelParams& params, const Mat& inputs);

double forward_loss(const ModelParams& params, const Batch& batch);

/// Heavy-ball SGD with L2 weight decay folded into the gradient:
///   v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
struct MomentumState {
  Vec buf;
};

void sgd_step(ModelParams& params, const ModelParams& grads, double lr, double momentum,
              double weight_decay, MomentumState& state);

/// Flat view of the parameters (deterministic layout, see ModelParams).
Vec param_vector(const ModelParams& params);
ModelParams unflatten(const Vec& flat, const ModelDims& dims);

/// Central finite-difference gradient of the batch loss; the independent
/// oracle for forward_loss_grad.
Vec finite_difference_gradient(const ModelParams& params, const Batch& batch, double step);

/// argmax with ties broken toward the lowest class index.
int argmax_row(const Mat& m, int row);

}  // namespace fedbench
