#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fedbench/model.hpp"

using namespace fedbench;

namespace {

Batch single_sample(const Vec& x, int label, int classes) {
  Batch b;
  b.inputs = Mat(1, static_cast<int>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) b.inputs(0, static_cast<int>(j)) = x[j];
  b.labels = {label};
  (void)classes;
  return b;
}

Batch random_batch(Rng& rng, int n, int dim, int classes) {
  Batch b;
  b.inputs = Mat(n, dim);
  b.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) b.inputs(i, j) = rng.gaussian();
    b.labels[i] = static_cast<int>(rng.index(classes));
  }
  return b;
}

double max_rel_error(const Vec& a, const Vec& b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max({den, std::abs(a[i]), std::abs(b[i])});
  }
  return num / std::max(den, 1e-12);
}

}  // namespace

TEST_CASE("uniform logits give ln(C) cross-entropy") {
  ModelParams p = ModelParams::zeros({3, 0, 4});
  const Batch b = single_sample({0.5, -1.0, 2.0}, 2, 4);
  const ForwardResult fr = forward_loss_grad(p, b);
  CHECK(fr.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(fr.logits.rows == 1);
  CHECK(fr.logits.cols == 4);
}

TEST_CASE("zero logistic model bias gradient is softmax(0) minus one-hot") {
  ModelParams p = ModelParams::zeros({2, 0, 3});
  Batch b;
  b.inputs = Mat(2, 2);
  b.inputs(0, 0) = 1.0;
  b.inputs(1, 1) = -2.0;
  b.labels = {0, 2};
  const ForwardResult fr = forward_loss_grad(p, b);
  // per sample: (1/3 - onehot) averaged over the batch
  const Vec& bias_grad = fr.grads.layers[0].b;
  CHECK(bias_grad[0] == doctest::Approx((1.0 / 3 - 1 + 1.0 / 3) / 2).epsilon(1e-12));
  CHECK(bias_grad[1] == doctest::Approx((1.0 / 3 + 1.0 / 3) / 2).epsilon(1e-12));
  CHECK(bias_grad[2] == doctest::Approx((1.0 / 3 + 1.0 / 3 - 1) / 2).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(123);
  for (int trial = 0; trial < 10; ++trial) {
    const int hidden = trial % 2 == 0 ? 0 : 6;
    ModelDims dims{5, hidden, 3};
    ModelParams p = ModelParams::init_uniform(dims, rng);
    const Batch b = random_batch(rng, 3, 5, 3);
    const ForwardResult fr = forward_loss_grad(p, b);
    const Vec fd = finite_difference_gradient(p, b, 1e-5);
    CHECK(max_rel_error(param_vector(fr.grads), fd) < 1e-4);
  }
}

TEST_CASE("cross-entropy is non-negative") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams p = ModelParams::init_uniform({4, 3, 3}, rng);
    const Batch b = random_batch(rng, 5, 4, 3);
    CHECK(forward_loss_grad(p, b).loss >= 0.0);
  }
}

TEST_CASE("sgd with lr=0 leaves parameters unchanged") {
  Rng rng(9);
  ModelParams p = ModelParams::init_uniform({3, 0, 2}, rng);
  const ModelParams before = p;
  ModelParams g = ModelParams::init_uniform({3, 0, 2}, rng);
  MomentumState st;
  sgd_step(p, g, 0.0, 0.9, 1e-5, st);
  CHECK(p == before);
}

TEST_CASE("plain sgd step is params minus lr times gradient") {
  Rng rng(10);
  ModelParams p = ModelParams::init_uniform({3, 0, 2}, rng);
  const Vec before = param_vector(p);
  ModelParams g = ModelParams::init_uniform({3, 0, 2}, rng);
  MomentumState st;
  sgd_step(p, g, 0.1, 0.0, 0.0, st);
  const Vec after = param_vector(p);
  const Vec gflat = param_vector(g);
  for (std::size_t i = 0; i < after.size(); ++i) {
    CHECK(after[i] == doctest::Approx(before[i] - 0.1 * gflat[i]).epsilon(1e-15));
  }
}

TEST_CASE("momentum accumulates: two steps displace by g + 1.9g") {
  ModelParams p = ModelParams::zeros({2, 0, 2});
  ModelParams g = ModelParams::zeros({2, 0, 2});
  for (Layer& layer : g.layers) {
    for (double& v : layer.w.a) v = 0.5;
    for (double& v : layer.b) v = 0.5;
  }
  MomentumState st;
  sgd_step(p, g, 1.0, 0.9, 0.0, st);
  sgd_step(p, g, 1.0, 0.9, 0.0, st);
  for (double v : param_vector(p)) CHECK(v == doctest::Approx(-2.9 * 0.5).epsilon(1e-15));
}

TEST_CASE("flat layout: logistic 2x2 has 6 parameters") {
  const ModelParams p = ModelParams::zeros({2, 0, 2});
  CHECK(p.param_count() == 6);
  CHECK(param_vector(p).size() == 6);
}

TEST_CASE("unflatten(flatten(p)) is the identity, bit-exact") {
  Rng rng(42);
  for (const int hidden : {0, 5}) {
    const ModelParams p = ModelParams::init_uniform({4, hidden, 3}, rng);
    const ModelParams q = unflatten(param_vector(p), p.dims);
    CHECK(q == p);
  }
}

TEST_CASE("flat layout is stable across independent constructions") {
  const auto build = [] {
    Rng rng(777);
    return param_vector(ModelParams::init_uniform({6, 4, 3}, rng));
  };
  const Vec a = build();
  const Vec b = build();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("training is deterministic from the seed") {
  const auto train = [] {
    Rng rng(31);
    ModelParams p = ModelParams::init_uniform({3, 0, 2}, rng);
    MomentumState st;
    for (int step = 0; step < 25; ++step) {
      const Batch b = random_batch(rng, 4, 3, 2);
      const ForwardResult fr = forward_loss_grad(p, b);
      sgd_step(p, fr.grads, 0.05, 0.9, 1e-5, st);
    }
    return param_vector(p);
  };
  const Vec a = train();
  const Vec b = train();
  CHECK(a == b);
  CHECK(all_finite(a));
}

TEST_CASE("dimension mismatches are configuration errors") {
  ModelParams p = ModelParams::zeros({3, 0, 2});
  Batch b;
  b.inputs = Mat(1, 5);
  b.labels = {0};
  CHECK_THROWS_AS(forward_loss_grad(p, b), ConfigError);
  CHECK_THROWS_AS(unflatten(Vec(5, 0.0), p.dims), ConfigError);
  Batch empty;
  empty.inputs = Mat(0, 3);
  CHECK_THROWS_AS(forward_loss_grad(p, empty), ConfigError);
}
