#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef FEDBENCH_HAVE_EIGEN
#include <Eigen/Dense>
#endif

#include "fedbench/aggregators.hpp"

using namespace fedbench;

TEST_CASE("weighted mean on the worked example") {
  const std::vector<Vec> updates = {{1.0, 2.0}, {3.0, 4.0}};
  const AggregationOutcome out = agg_weighted_mean(updates, {0.5, 0.5});
  CHECK(out.delta[0] == doctest::Approx(2.0));
  CHECK(out.delta[1] == doctest::Approx(3.0));
}

TEST_CASE("one-hot weights select a single update") {
  const std::vector<Vec> updates = {{1.0}, {5.0}, {9.0}};
  const AggregationOutcome out = agg_weighted_mean(updates, {0.0, 1.0, 0.0});
  CHECK(out.delta[0] == 5.0);
}

TEST_CASE("by-samples and by-clients weights differ as computed") {
  const std::vector<Vec> updates = {{1.0}, {5.0}};
  // N = (30, 10): alpha = (0.75, 0.25)
  const Vec by_samples = agg_weighted_mean(updates, {0.75, 0.25}).delta;
  const Vec by_clients = agg_weighted_mean(updates, {0.5, 0.5}).delta;
  CHECK(by_samples[0] == doctest::Approx(2.0));
  CHECK(by_clients[0] == doctest::Approx(3.0));
}

TEST_CASE("coordinate-wise median and trimmed mean examples") {
  CHECK(agg_median({{1.0}, {2.0}, {100.0}}).delta[0] == doctest::Approx(2.0));
  CHECK(agg_trimmed_mean({{1.0}, {2.0}, {3.0}, {100.0}}, 1).delta[0] == doctest::Approx(2.5));
  // trim 0 equals the plain mean
  CHECK(agg_trimmed_mean({{1.0}, {2.0}, {3.0}, {100.0}}, 0).delta[0] == doctest::Approx(26.5));
  CHECK_THROWS_AS(agg_trimmed_mean({{1.0}, {2.0}}, 1), ConfigError);
}

TEST_CASE("multi-krum worked example") {
  const std::vector<Vec> updates = {{0.0}, {0.1}, {0.2}, {10.0}};
  const Vec scores = krum_scores(updates, 1);
  CHECK(scores[0] == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(scores[1] == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(scores[2] == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(scores[3] == doctest::Approx(96.04).epsilon(1e-9));

  const AggregationOutcome k1 = agg_multi_krum(updates, 1, 1);
  CHECK(k1.selected == std::vector<int>{0});  // tie broken by lowest index
  CHECK(k1.delta[0] == doctest::Approx(0.0));

  const AggregationOutcome k2 = agg_multi_krum(updates, 1, 2);
  CHECK(k2.selected == std::vector<int>{0, 1});
  CHECK(k2.delta[0] == doctest::Approx(0.05));
}

TEST_CASE("multi-krum preconditions") {
  const std::vector<Vec> three(3, Vec{0.0});
  CHECK_THROWS_AS(agg_multi_krum(three, 1, 1), ConfigError);  // needs n >= f+3
}

TEST_CASE("bulyan never selects a far outlier") {
  std::vector<Vec> updates = {{0.0}, {0.1}, {0.2}, {0.3}, {0.15}, {0.25}, {50.0}};
  const AggregationOutcome out = agg_bulyan(updates, 1);
  CHECK(std::find(out.selected.begin(), out.selected.end(), 6) == out.selected.end());
  CHECK(out.delta[0] >= 0.0);
  CHECK(out.delta[0] <= 0.3);
  CHECK_THROWS_AS(agg_bulyan(std::vector<Vec>(6, Vec{0.0}), 1), ConfigError);  // n < 4f+3
}

TEST_CASE("bulyan output stays within the selected coordinate range") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec> updates(8, Vec(3));
    for (Vec& u : updates) {
      for (double& v : u) v = rng.gaussian();
    }
    const AggregationOutcome out = agg_bulyan(updates, 1);
    for (std::size_t d = 0; d < 3; ++d) {
      double lo = 1e300;
      double hi = -1e300;
      for (int i : out.selected) {
        lo = std::min(lo, updates[i][d]);
        hi = std::max(hi, updates[i][d]);
      }
      CHECK(out.delta[d] >= lo - 1e-12);
      CHECK(out.delta[d] <= hi + 1e-12);
    }
  }
}

TEST_CASE("foolsgold crushes sybils and keeps the honest client") {
  const Vec sybil = {1.0, 0.0};
  const Vec honest = {0.0, 1.0};
  const std::vector<Vec> updates = {sybil, sybil, honest};
  const std::vector<Vec> history = {sybil, sybil, honest};
  const AggregationOutcome out = agg_foolsgold(updates, history, 1e-5);
  CHECK(out.weights[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(out.weights[1] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(out.weights[2] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(out.delta[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("foolsgold single client keeps weight 1") {
  const AggregationOutcome out = agg_foolsgold({{2.0, 3.0}}, {{2.0, 3.0}}, 1e-5);
  CHECK(out.weights == Vec{1.0});
  CHECK(out.delta == Vec{2.0, 3.0});
}

TEST_CASE("foolsgold gives near-uniform weights to orthogonal clients") {
  const std::vector<Vec> updates = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
  const AggregationOutcome out = agg_foolsgold(updates, updates, 1e-5);
  for (double w : out.weights) CHECK(w == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("dnc with identical updates keeps everyone") {
  Rng rng(8);
  const std::vector<Vec> updates(6, Vec{1.0, 2.0, 3.0});
  const AggregationOutcome out = agg_dnc(updates, 1000, 1.0, 1, 0, rng);
  CHECK(out.selected.size() == 6);
  CHECK(dist2(out.delta, {1.0, 2.0, 3.0}) < 1e-12);
}

TEST_CASE("dnc removes a distant outlier across seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng data_rng(seed + 100);
    std::vector<Vec> updates(10, Vec(2));
    for (int i = 0; i < 9; ++i) {
      for (double& v : updates[i]) v = 0.1 * data_rng.gaussian();
    }
    updates[9] = {10.0, 0.0};
    Rng rng(seed);
    const AggregationOutcome out = agg_dnc(updates, 1000, 1.0, 1, 1, rng);
    CHECK(std::find(out.selected.begin(), out.selected.end(), 9) == out.selected.end());
  }
}

#ifdef FEDBENCH_HAVE_EIGEN
TEST_CASE("dnc outlier scores match a dense eigensolver") {
  Rng data_rng(55);
  const int n = 7;
  const int dim = 5;
  std::vector<Vec> updates(n, Vec(dim));
  for (Vec& u : updates) {
    for (double& v : u) v = data_rng.gaussian();
  }
  Rng rng(3);
  const AggregationOutcome out = agg_dnc(updates, 1000, 1.0, 1, 0, rng);
  const Vec& got = out.diagnostics.at("dnc_scores_iter0");

  // oracle: mean-center, take the top eigenvector of C^T C
  Eigen::MatrixXd c(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) c(i, j) = updates[i][j];
  }
  c.rowwise() -= c.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.transpose() * c);
  const Eigen::VectorXd v = es.eigenvectors().col(dim - 1);  // largest eigenvalue last
  for (int i = 0; i < n; ++i) {
    const double proj = c.row(i) * v;
    CHECK(got[i] == doctest::Approx(proj * proj).epsilon(1e-8));
  }
}
#endif

TEST_CASE("rfa on identical points returns that point") {
  const std::vector<Vec> pts(4, Vec{3.0, -1.0});
  const Vec alpha(4, 0.25);
  CHECK(agg_rfa(pts, alpha, 3, 1e-6).delta == Vec{3.0, -1.0});
}

TEST_CASE("rfa converges to the 1-d median") {
  const std::vector<Vec> pts = {{0.0}, {0.0}, {10.0}};
  const Vec alpha(3, 1.0 / 3);
  const Vec z = agg_rfa(pts, alpha, 50, 1e-6).delta;
  CHECK(std::abs(z[0]) < 0.1);
}

TEST_CASE("rfa objective is non-increasing across iterations") {
  Rng rng(21);
  std::vector<Vec> pts(6, Vec(3));
  for (Vec& p : pts) {
    for (double& v : p) v = rng.gaussian(0.0, 2.0);
  }
  const Vec alpha(6, 1.0 / 6);
  const auto objective = [&](const Vec& z) {
    double s = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) s += alpha[i] * dist2(z, pts[i]);
    return s;
  };
  double prev = objective(agg_weighted_mean(pts, alpha).delta);
  for (int iters = 1; iters <= 8; ++iters) {
    const double cur = objective(agg_rfa(pts, alpha, iters, 1e-6).delta);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("fltrust trust scoring") {
  const Vec g0 = {1.0, 0.0};
  SUBCASE("clients matching g0 reproduce g0") {
    const std::vector<Vec> updates(3, g0);
    CHECK(agg_fltrust(updates, g0).delta == g0);
  }
  SUBCASE("opposed client is clipped out") {
    const std::vector<Vec> updates = {{1.0, 0.0}, {-1.0, 0.0}};
    const AggregationOutcome out = agg_fltrust(updates, g0);
    CHECK(out.weights[1] == 0.0);
    CHECK(out.delta[0] == doctest::Approx(1.0));
  }
  SUBCASE("scaled client is renormalized to the server norm") {
    const std::vector<Vec> updates = {{2.0, 0.0}};
    const AggregationOutcome out = agg_fltrust(updates, g0);
    CHECK(out.weights[0] == doctest::Approx(1.0));
    CHECK(out.delta[0] == doctest::Approx(1.0));
  }
  SUBCASE("all distrusted falls back to the server update") {
    const std::vector<Vec> updates = {{-1.0, 0.0}, {0.0, 0.0}};
    CHECK(agg_fltrust(updates, g0).delta == g0);
  }
}

TEST_CASE("rlr sign-agreement learning rate") {
  SUBCASE("10 agreeing clients keep the positive rate") {
    const std::vector<Vec> updates(10, Vec{0.5});
    const Vec out = defense_rlr(updates, 4.0, 1.0).delta;
    CHECK(out[0] == doctest::Approx(0.5));
  }
  SUBCASE("disagreement below threshold flips the rate") {
    const std::vector<Vec> updates = {{1.0}, {1.0}, {-1.0}};
    const Vec out = defense_rlr(updates, 4.0, 1.0).delta;
    CHECK(out[0] == doctest::Approx(-1.0 / 3));  // -(mean of {1,1,-1})
  }
  SUBCASE("tau=0 is the plain mean times the server lr") {
    const std::vector<Vec> updates = {{1.0}, {2.0}, {6.0}};
    const Vec out = defense_rlr(updates, 0.0, 0.5).delta;
    CHECK(out[0] == doctest::Approx(1.5));
  }
}

TEST_CASE("crfl clipping and smoothing") {
  Rng rng(2);
  Vec params(16, 5.0);  // norm 20
  const Vec clipped = defense_crfl(params, 15.0, 0.0, true, rng);
  CHECK(norm2(clipped) == doctest::Approx(15.0).epsilon(1e-12));
  Vec small(4, 0.5);
  CHECK(defense_crfl(small, 15.0, 0.0, true, rng) == small);

  // noise sample std matches sigma
  Vec zeros(20000, 0.0);
  const Vec noisy = defense_crfl(zeros, 15.0, 0.01, true, rng);
  double var = 0.0;
  for (double v : noisy) var += v * v;
  var /= noisy.size();
  CHECK(std::sqrt(var) == doctest::Approx(0.01).epsilon(0.05));
}

TEST_CASE("afl reweighting") {
  SUBCASE("equal losses leave lambda unchanged") {
    const Vec out = afl_reweight({0.3, 0.7}, {2.0, 2.0}, 0.1);
    CHECK(out[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.7).epsilon(1e-12));
  }
  SUBCASE("gamma=0 leaves lambda unchanged") {
    const Vec out = afl_reweight({0.25, 0.75}, {9.0, 1.0}, 0.0);
    CHECK(out[0] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("hand-computed projection") {
    const Vec out = afl_reweight({0.5, 0.5}, {1.0, 0.0}, 0.1);
    CHECK(out[0] == doctest::Approx(0.55).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.45).epsilon(1e-12));
  }
}

TEST_CASE("server optimizer step") {
  SUBCASE("unit lr without momentum is the plain update") {
    ServerOptState st;
    const Vec out = server_opt_step({1.0, 1.0}, {0.5, -0.5}, 1.0, 0.0, st);
    CHECK(out == Vec{1.5, 0.5});
  }
  SUBCASE("half lr takes a half step") {
    ServerOptState st;
    const Vec out = server_opt_step({0.0}, {1.0}, 0.5, 0.0, st);
    CHECK(out[0] == doctest::Approx(0.5));
  }
  SUBCASE("momentum compounds on a constant delta") {
    ServerOptState st;
    Vec params = {0.0};
    params = server_opt_step(params, {1.0}, 0.5, 0.9, st);
    const Vec second = server_opt_step(params, {1.0}, 0.5, 0.9, st);
    CHECK(second[0] - params[0] == doctest::Approx(0.5 * 1.9).epsilon(1e-12));
  }
}

TEST_CASE("selection-based outputs stay within the per-coordinate input range") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec> updates(8, Vec(4));
    for (Vec& u : updates) {
      for (double& v : u) v = rng.gaussian();
    }
    std::vector<Vec> outputs;
    outputs.push_back(agg_multi_krum(updates, 1, 3).delta);
    outputs.push_back(agg_bulyan(updates, 1).delta);
    Rng r2(trial);
    outputs.push_back(agg_dnc(updates, 1000, 1.0, 1, 2, r2).delta);
    for (const Vec& out : outputs) {
      for (int d = 0; d < 4; ++d) {
        double lo = 1e300;
        double hi = -1e300;
        for (const Vec& u : updates) {
          lo = std::min(lo, u[d]);
          hi = std::max(hi, u[d]);
        }
        CHECK(out[d] >= lo - 1e-12);
        CHECK(out[d] <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("crfl skips the noise on the final round") {
  AggregatorConfig cfg;
  cfg.kind = AggregatorKind::kCrfl;
  cfg.crfl_norm_bound = 15.0;
  cfg.crfl_noise = 0.5;
  const ServerAggregator agg(cfg);
  const Vec params(9, 1.0);
  ServerContext ctx;
  Rng r1(5);
  ctx.rng = &r1;
  ctx.final_round = true;
  CHECK(agg.post_process_params(params, ctx) == params);  // within bound, no noise
  ctx.final_round = false;
  Rng r2(5);
  ctx.rng = &r2;
  CHECK(agg.post_process_params(params, ctx) != params);
}

TEST_CASE("krum selection is canonical under permutation") {
  // shuffling the clients changes only the index labels of the selected set
  const std::vector<Vec> updates = {{0.0}, {0.1}, {0.2}, {10.0}, {0.15}};
  const AggregationOutcome a = agg_multi_krum(updates, 1, 3);
  std::vector<Vec> shuffled = {updates[4], updates[3], updates[2], updates[1], updates[0]};
  const AggregationOutcome b = agg_multi_krum(shuffled, 1, 3);
  CHECK(a.delta[0] == doctest::Approx(b.delta[0]).epsilon(1e-12));
}

TEST_CASE("stateful dispatcher routes and validates") {
  AggregatorConfig cfg;
  cfg.kind = AggregatorKind::kTrimmedMean;
  cfg.trim_fraction = 0.6;
  CHECK_THROWS_AS(validate_aggregator(cfg, 10), ConfigError);
  cfg.trim_fraction = 0.2;
  validate_aggregator(cfg, 10);

  cfg.kind = AggregatorKind::kMean;
  ServerAggregator agg(cfg);
  ServerContext ctx;
  const AggregationOutcome out = agg.aggregate({{2.0}, {4.0}}, {0.5, 0.5}, ctx);
  CHECK(out.delta[0] == doctest::Approx(3.0));
}

TEST_CASE("foolsgold dispatcher accumulates history across rounds") {
  AggregatorConfig cfg;
  cfg.kind = AggregatorKind::kFoolsGold;
  ServerAggregator agg(cfg);
  ServerContext ctx;
  // two sybils move identically each round; the honest client differs
  const std::vector<Vec> round1 = {{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
  const std::vector<Vec> round2 = {{1.0, 0.1}, {1.0, 0.1}, {0.1, 1.0}};
  agg.aggregate(round1, {1.0 / 3, 1.0 / 3, 1.0 / 3}, ctx);
  const AggregationOutcome out = agg.aggregate(round2, {1.0 / 3, 1.0 / 3, 1.0 / 3}, ctx);
  CHECK(out.weights[0] < 0.01);
  CHECK(out.weights[2] > 0.9);
}
