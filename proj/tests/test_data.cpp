#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "fedbench/data.hpp"
#include "fedbench/metrics.hpp"

using namespace fedbench;

namespace {

// central (non-federated) training, used as a measurement tool
ModelParams train_logistic(const Dataset& data, int epochs, double lr, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = ModelParams::init_uniform({data.dim(), 0, data.num_classes}, rng);
  MomentumState st;
  const Batch full = data.to_batch();
  for (int e = 0; e < epochs; ++e) {
    const ForwardResult fr = forward_loss_grad(p, full);
    sgd_step(p, fr.grads, lr, 0.0, 0.0, st);
  }
  return p;
}

}  // namespace

TEST_CASE("blobs with sigma=0 sit exactly on their centers") {
  const std::vector<Vec> centers = {{-1.0, 0.0}, {1.0, 0.0}};
  const Dataset d = make_blobs(2, 5, centers, 0.0, 1);
  for (const Sample& s : d.samples) {
    CHECK(s.x == centers[s.label]);
  }
}

TEST_CASE("blobs are reproducible from the seed") {
  const auto centers = circle_centers(3, 4, 2.0);
  const Dataset a = make_blobs(3, 20, centers, 0.7, 99);
  const Dataset b = make_blobs(3, 20, centers, 0.7, 99);
  CHECK(a.samples == b.samples);
}

TEST_CASE("separable blobs train to 99%+ with logistic regression") {
  const std::vector<Vec> centers = {{-1.0, 0.0}, {1.0, 0.0}};
  const Dataset d = make_blobs(2, 200, centers, 0.1, 7);
  const ModelParams p = train_logistic(d, 50, 0.5, 3);
  CHECK(top1_accuracy(p, d) >= 0.99);
}

TEST_CASE("dirichlet partition with one client returns everything") {
  const Dataset d = make_blobs(2, 30, circle_centers(2, 2, 2.0), 0.5, 3);
  const auto parts = partition_dirichlet(d, {1, 0.5, 11});
  REQUIRE(parts.size() == 1);
  CHECK(parts[0].size() == d.size());
}

TEST_CASE("huge beta gives near-uniform client class proportions") {
  const Dataset d = make_blobs(2, 500, circle_centers(2, 2, 2.0), 0.5, 3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto parts = partition_dirichlet(d, {2, 10000.0, seed});
    for (const Dataset& p : parts) {
      const auto h = p.label_histogram();
      const double frac = static_cast<double>(h[0]) / p.size();
      CHECK(frac == doctest::Approx(0.5).epsilon(0.1));  // within +-5 percentage points
    }
  }
}

TEST_CASE("low beta concentrates labels: entropy drops") {
  const Dataset d = make_blobs(4, 250, circle_centers(4, 2, 2.0), 0.5, 17);
  double skewed = 0.0;
  double uniform = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto lo = partition_dirichlet(d, {10, 0.1, seed});
    const auto hi = partition_dirichlet(d, {10, 100.0, seed});
    for (const Dataset& p : lo) skewed += p.label_entropy() / lo.size();
    for (const Dataset& p : hi) uniform += p.label_entropy() / hi.size();
  }
  CHECK(skewed < uniform);
}

TEST_CASE("partition is a disjoint cover of the dataset") {
  const Dataset d = make_blobs(3, 40, circle_centers(3, 2, 2.0), 0.5, 23);
  const auto parts = partition_dirichlet(d, {5, 0.4, 9});
  std::size_t total = 0;
  std::vector<std::size_t> hist(3, 0);
  for (const Dataset& p : parts) {
    CHECK(!p.empty());
    total += p.size();
    for (const Sample& s : p.samples) hist[s.label]++;
  }
  CHECK(total == d.size());
  CHECK(hist == d.label_histogram());
}

TEST_CASE("invalid partition configs are rejected") {
  const Dataset d = make_blobs(2, 10, circle_centers(2, 2, 2.0), 0.5, 2);
  CHECK_THROWS_AS(partition_dirichlet(d, {2, 0.0, 1}), ConfigError);
  CHECK_THROWS_AS(partition_dirichlet(d, {2, -1.0, 1}), ConfigError);
  CHECK_THROWS_AS(partition_dirichlet(d, {100, 1.0, 1}), ConfigError);
}

TEST_CASE("domain suite: held-out domain never reaches a client") {
  BlobSpec base;
  base.classes = 3;
  base.dim = 2;
  base.per_class_train = 30;
  base.per_class_test = 10;
  std::vector<DomainTransform> domains(4);
  for (int i = 0; i < 4; ++i) domains[i].name = "d" + std::to_string(i);
  domains[1].rotate_deg = 90.0;
  domains[2].scale = 1.5;
  domains[3].rotate_deg = 180.0;
  const DomainSuite suite = make_domain_suite(base, domains, 6, std::string("d3"), 77);
  REQUIRE(suite.unseen.has_value());
  CHECK(suite.tests.size() == 3);
  for (const Dataset& c : suite.clients) {
    for (const Sample& s : c.samples) CHECK(s.domain != 3);
  }
  for (const Sample& s : suite.unseen->samples) CHECK(s.domain == 3);
}

TEST_CASE("domain suite keeps label marginals identical across domains") {
  BlobSpec base;
  base.classes = 4;
  base.per_class_train = 50;
  base.per_class_test = 20;
  std::vector<DomainTransform> domains(3);
  for (int i = 0; i < 3; ++i) {
    domains[i].name = "d" + std::to_string(i);
    domains[i].rotate_deg = 45.0 * i;
  }
  const DomainSuite suite = make_domain_suite(base, domains, 3, std::nullopt, 31);
  for (const auto& [name, test] : suite.tests) {
    const auto h = test.label_histogram();
    for (std::size_t c : h) CHECK(c == 20);
  }
}

TEST_CASE("identity transforms reduce the suite to an iid split") {
  BlobSpec base;
  base.classes = 3;
  base.per_class_train = 120;
  base.per_class_test = 60;
  base.sigma = 0.3;
  std::vector<DomainTransform> domains(3);
  for (int i = 0; i < 3; ++i) domains[i].name = "d" + std::to_string(i);
  const DomainSuite suite = make_domain_suite(base, domains, 3, std::nullopt, 41);
  // no shift between domains: a model trained on one client generalizes to
  // every test domain
  const ModelParams model = train_logistic(suite.clients[0], 200, 0.5, 3);
  for (const auto& [name, test] : suite.tests) {
    CHECK(top1_accuracy(model, test) >= 0.9);
  }
}

TEST_CASE("unknown held-out domain is a configuration error") {
  BlobSpec base;
  std::vector<DomainTransform> domains(2);
  domains[0].name = "a";
  domains[1].name = "b";
  CHECK_THROWS_AS(make_domain_suite(base, domains, 2, std::string("zz"), 1), ConfigError);
}

TEST_CASE("rotated domain scores near chance before federation") {
  BlobSpec base;
  base.classes = 4;
  base.dim = 2;
  base.per_class_train = 150;
  base.per_class_test = 100;
  base.sigma = 0.3;
  std::vector<DomainTransform> domains(2);
  domains[0].name = "identity";
  domains[1].name = "rot90";
  domains[1].rotate_deg = 90.0;  // maps each center onto the next class
  const DomainSuite suite = make_domain_suite(base, domains, 2, std::nullopt, 5);
  // train centrally on the identity client, evaluate on both test domains
  const ModelParams model = train_logistic(suite.clients[0], 200, 0.5, 13);
  const double own = top1_accuracy(model, suite.tests[0].second);
  const double cross = top1_accuracy(model, suite.tests[1].second);
  CHECK(own >= 0.9);
  CHECK(cross <= 0.45);
}

TEST_CASE("flip with epsilon=0 is the identity") {
  const Dataset d = make_blobs(3, 20, circle_centers(3, 2, 2.0), 0.5, 4);
  CHECK(flip_labels(d, FlipMode::kSymmetric, 0.0, 8).samples == d.samples);
}

TEST_CASE("symmetric flip matrix row for C=3, eps=0.5") {
  const Vec row = flip_transition_row(FlipMode::kSymmetric, 3, 0.5, 0);
  CHECK(row[0] == doctest::Approx(0.5));
  CHECK(row[1] == doctest::Approx(0.25));
  CHECK(row[2] == doctest::Approx(0.25));
}

TEST_CASE("flip matrices are row-stochastic for any (C, eps)") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = 2 + static_cast<int>(rng.index(12));
    const double eps = rng.uniform(0.0, 0.999);
    for (const FlipMode mode : {FlipMode::kSymmetric, FlipMode::kPair}) {
      for (int from = 0; from < classes; ++from) {
        const Vec row = flip_transition_row(mode, classes, eps, from);
        for (double p : row) CHECK(p >= 0.0);
        CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("pair flips hit only the successor class at the expected rate") {
  Dataset d;
  d.num_classes = 10;
  Rng rng(12);
  for (int i = 0; i < 10000; ++i) {
    Sample s;
    s.x = {0.0};
    s.label = static_cast<int>(rng.index(10));
    d.samples.push_back(s);
  }
  const Dataset f = flip_labels(d, FlipMode::kPair, 0.5, 3);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (f.samples[i].label == d.samples[i].label) {
      CHECK(f.samples[i].flag == PoisonFlag::kClean);
      continue;
    }
    ++flips;
    CHECK(f.samples[i].label == (d.samples[i].label + 1) % 10);
    CHECK(f.samples[i].flag == PoisonFlag::kFlipped);
  }
  const double rate = static_cast<double>(flips) / d.size();
  CHECK(rate > 0.48);
  CHECK(rate < 0.52);
}

TEST_CASE("trigger injection follows the mask formula") {
  BackdoorConfig bd;
  bd.mask = {0.0, 0.0, 0.0};
  bd.pattern = {9.0, 9.0, 9.0};
  const Vec x = {1.0, 2.0, 3.0};
  CHECK(inject_trigger(x, bd) == x);  // all-zero mask
  bd.mask = {1.0, 1.0, 1.0};
  CHECK(inject_trigger(x, bd) == bd.pattern);  // all-one mask
}

TEST_CASE("trigger injection is idempotent and local") {
  BackdoorConfig bd;
  bd.mask = {1.0, 0.0, 1.0, 0.0};
  bd.pattern = {5.0, 0.0, -5.0, 0.0};
  const Vec x = {0.25, -0.5, 0.75, 1.25};
  const Vec once = inject_trigger(x, bd);
  CHECK(inject_trigger(once, bd) == once);
  CHECK(once[1] == x[1]);  // untouched coordinates are bit-identical
  CHECK(once[3] == x[3]);
}

TEST_CASE("pad_features appends exact zeros") {
  const Dataset d = make_blobs(2, 5, circle_centers(2, 2, 2.0), 0.5, 9);
  const Dataset p = pad_features(d, 3);
  CHECK(p.dim() == 5);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(p.samples[i].x[0] == d.samples[i].x[0]);
    CHECK(p.samples[i].x[2] == 0.0);
    CHECK(p.samples[i].x[4] == 0.0);
  }
}

TEST_CASE("dataset csv round trip") {
  Dataset d = make_blobs(3, 8, circle_centers(3, 2, 2.0), 0.5, 21);
  d.samples[0].flag = PoisonFlag::kFlipped;
  d.samples[1].flag = PoisonFlag::kTriggered;
  d.samples[2].domain = 2;
  std::ostringstream out;
  write_dataset_csv(d, out);
  std::istringstream in(out.str());
  const Dataset back = read_dataset_csv(in, 3);
  CHECK(back.samples == d.samples);
}
