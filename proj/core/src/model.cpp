#include "fedbench/model.hpp"

#include <cassert>
#include <cmath>
#include <sstream>

namespace fedbench {

namespace {

std::vector<std::pair<int, int>> layer_shapes(const ModelDims& dims) {
  if (dims.input < 1 || dims.classes < 2 || dims.hidden < 0) {
    std::ostringstream os;
    os << "invalid model dims: input=" << dims.input << " hidden=" << dims.hidden
       << " classes=" << dims.classes;
    throw ConfigError(os.str());
  }
  if (dims.hidden == 0) return {{dims.input, dims.classes}};
  return {{dims.input, dims.hidden}, {dims.hidden, dims.classes}};
}

void check_batch(const ModelParams& params, const Batch& batch) {
  if (batch.inputs.rows == 0) throw ConfigError("empty batch");
  if (batch.inputs.cols != params.dims.input) {
    std::ostringstream os;
    os << "batch dim " << batch.inputs.cols << " != model input dim " << params.dims.input;
    throw ConfigError(os.str());
  }
  if (static_cast<int>(batch.labels.size()) != batch.inputs.rows) {
    throw ConfigError("batch label count != row count");
  }
  for (int y : batch.labels) {
    if (y < 0 || y >= params.dims.classes) throw ConfigError("label out of class range");
  }
}

// out = x * w + b, x: (B x in), w: (in x out)
Mat affine(const Mat& x, const Layer& layer) {
  const int out = layer.w.cols;
  Mat r(x.rows, out);
  for (int i = 0; i < x.rows; ++i) {
    for (int j = 0; j < out; ++j) r(i, j) = layer.b[j];
    for (int k = 0; k < x.cols; ++k) {
      const double xv = x(i, k);
      if (xv == 0.0) continue;
      for (int j = 0; j < out; ++j) r(i, j) += xv * layer.w(k, j);
    }
  }
  return r;
}

}  // namespace

ModelParams ModelParams::zeros(const ModelDims& dims) {
  ModelParams p;
  p.dims = dims;
  for (const auto& [in, out] : layer_shapes(dims)) {
    p.layers.push_back({Mat(in, out), Vec(out, 0.0)});
  }
  return p;
}

ModelParams ModelParams::init_uniform(const ModelDims& dims, Rng& rng) {
  ModelParams p = zeros(dims);
  for (Layer& layer : p.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.w.rows));
    for (double& v : layer.w.a) v = rng.uniform(-bound, bound);
    for (double& v : layer.b) v = rng.uniform(-bound, bound);
  }
  return p;
}

std::size_t ModelParams::param_count() const {
  std::size_t n = 0;
  for (const Layer& layer : layers) n += layer.w.size() + layer.b.size();
  return n;
}

bool ModelParams::all_finite() const {
  for (const Layer& layer : layers) {
    if (!fedbench::all_finite(layer.w.a) || !fedbench::all_finite(layer.b)) return false;
  }
  return true;
}

Mat forward_logits(const ModelParams& params, const Mat& inputs) {
  if (inputs.cols != params.dims.input) throw ConfigError("input dim mismatch in forward");
  Mat h = affine(inputs, params.layers[0]);
  if (params.dims.hidden > 0) {
    for (double& v : h.a) v = std::max(0.0, v);
    h = affine(h, params.layers[1]);
  }
  return h;
}

ForwardResult forward_loss_grad(const ModelParams& params, const Batch& batch) {
  check_batch(params, batch);
  const int bsz = batch.inputs.rows;
  const int classes = params.dims.classes;
  const bool mlp = params.dims.hidden > 0;

  Mat pre(0, 0);   // pre-activation of the hidden layer
  Mat act(0, 0);   // post-ReLU activations
  Mat logits(0, 0);
  if (mlp) {
    pre = affine(batch.inputs, params.layers[0]);
    act = pre;
    for (double& v : act.a) v = std::max(0.0, v);
    logits = affine(act, params.layers[1]);
  } else {
    logits = affine(batch.inputs, params.layers[0]);
  }

  // softmax cross-entropy, row-stable
  double loss = 0.0;
  Mat dlogits(bsz, classes);
  for (int i = 0; i < bsz; ++i) {
    double mx = logits(i, 0);
    for (int j = 1; j < classes; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (int j = 0; j < classes; ++j) z += std::exp(logits(i, j) - mx);
    const double logz = std::log(z) + mx;
    loss += logz - logits(i, batch.labels[i]);
    for (int j = 0; j < classes; ++j) {
      dlogits(i, j) = std::exp(logits(i, j) - logz) / bsz;
    }
    dlogits(i, batch.labels[i]) -= 1.0 / bsz;
  }
  loss /= bsz;

  ForwardResult out;
  out.loss = loss;
  out.logits = std::move(logits);
  out.grads = ModelParams::zeros(params.dims);

  const Mat& last_in = mlp ? act : batch.inputs;
  Layer& glast = out.grads.layers.back();
  for (int i = 0; i < bsz; ++i) {
    for (int k = 0; k < last_in.cols; ++k) {
      const double xv = last_in(i, k);
      if (xv == 0.0) continue;
      for (int j = 0; j < classes; ++j) glast.w(k, j) += xv * dlogits(i, j);
    }
    for (int j = 0; j < classes; ++j) glast.b[j] += dlogits(i, j);
  }

  if (mlp) {
    const Layer& w2 = params.layers[1];
    Mat dhidden(bsz, params.dims.hidden);
    for (int i = 0; i < bsz; ++i) {
      for (int k = 0; k < params.dims.hidden; ++k) {
        if (pre(i, k) <= 0.0) continue;  // ReLU gate
        double s = 0.0;
        for (int j = 0; j < classes; ++j) s += dlogits(i, j) * w2.w(k, j);
        dhidden(i, k) = s;
      }
    }
    Layer& gfirst = out.grads.layers[0];
    for (int i = 0; i < bsz; ++i) {
      for (int k = 0; k < batch.inputs.cols; ++k) {
        const double xv = batch.inputs(i, k);
        if (xv == 0.0) continue;
        for (int j = 0; j < params.dims.hidden; ++j) gfirst.w(k, j) += xv * dhidden(i, j);
      }
      for (int j = 0; j < params.dims.hidden; ++j) gfirst.b[j] += dhidden(i, j);
    }
  }
  return out;
}

double forward_loss(const ModelParams& params, const Batch& batch) {
  check_batch(params, batch);
  const Mat logits = forward_logits(params, batch.inputs);
  const int classes = params.dims.classes;
  double loss = 0.0;
  for (int i = 0; i < logits.rows; ++i) {
    double mx = logits(i, 0);
    for (int j = 1; j < classes; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (int j = 0; j < classes; ++j) z += std::exp(logits(i, j) - mx);
    loss += std::log(z) + mx - logits(i, batch.labels[i]);
  }
  return loss / logits.rows;
}

void sgd_step(ModelParams& params, const ModelParams& grads, double lr, double momentum,
              double weight_decay, MomentumState& state) {
  if (lr < 0.0) throw ConfigError("sgd_step: lr must be >= 0");
  if (grads.dims != params.dims) throw ConfigError("sgd_step: gradient shape mismatch");
  if (state.buf.empty()) state.buf.assign(params.param_count(), 0.0);
  if (state.buf.size() != params.param_count()) throw ConfigError("sgd_step: momentum buffer mismatch");

  std::size_t off = 0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Layer& p = params.layers[l];
    const Layer& g = grads.layers[l];
    for (std::size_t i = 0; i < p.w.a.size(); ++i, ++off) {
      double& v = state.buf[off];
      v = momentum * v + g.w.a[i] + weight_decay * p.w.a[i];
      p.w.a[i] -= lr * v;
    }
    for (std::size_t i = 0; i < p.b.size(); ++i, ++off) {
      double& v = state.buf[off];
      v = momentum * v + g.b[i] + weight_decay * p.b[i];
      p.b[i] -= lr * v;
    }
  }
}

Vec param_vector(const ModelParams& params) {
  Vec flat;
  flat.reserve(params.param_count());
  for (const Layer& layer : params.layers) {
    flat.insert(flat.end(), layer.w.a.begin(), layer.w.a.end());
    flat.insert(flat.end(), layer.b.begin(), layer.b.end());
  }
  return flat;
}

ModelParams unflatten(const Vec& flat, const ModelDims& dims) {
  ModelParams p = ModelParams::zeros(dims);
  if (flat.size() != p.param_count()) {
    std::ostringstream os;
    os << "unflatten: vector length " << flat.size() << " != parameter count " << p.param_count();
    throw ConfigError(os.str());
  }
  std::size_t off = 0;
  for (Layer& layer : p.layers) {
    std::copy(flat.begin() + off, flat.begin() + off + layer.w.a.size(), layer.w.a.begin());
    off += layer.w.a.size();
    std::copy(flat.begin() + off, flat.begin() + off + layer.b.size(), layer.b.begin());
    off += layer.b.size();
  }
  return p;
}

Vec finite_difference_gradient(const ModelParams& params, const Batch& batch, double step) {
  Vec flat = param_vector(params);
  Vec grad(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double orig = flat[i];
    flat[i] = orig + step;
    const double up = forward_loss(unflatten(flat, params.dims), batch);
    flat[i] = orig - step;
    const double down = forward_loss(unflatten(flat, params.dims), batch);
    flat[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

int argmax_row(const Mat& m, int row) {
  int best = 0;
  for (int j = 1; j < m.cols; ++j) {
    if (m(row, j) > m(row, best)) best = j;
  }
  return best;
}

}  // namespace fedbench
