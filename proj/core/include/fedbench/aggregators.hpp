#pragma once

#include <map>
#include <optional>

#include "fedbench/linalg.hpp"

namespace fedbench {

enum class AggregatorKind {
  kMean,
  kMedian,
  kTrimmedMean,
  kMultiKrum,
  kBulyan,
  kFoolsGold,
  kDnc,
  kRfa,
  kFlTrust,
  kRlr,
  kCrfl,   // mean aggregation + post-step clip/smooth on the global params
  kAfl,    // mean aggregation with min-max reweighting of alpha
};

struct AggregatorConfig {
  AggregatorKind kind = AggregatorKind::kMean;
  int expected_malicious = 0;     // f
  int multi_krum_k = 5;           // Top-K
  double trim_fraction = 0.1;     // per side, < 0.5
  int dnc_sub_dim = 1000;         // b
  double dnc_filter_ratio = 1.0;  // c
  int dnc_iterations = 1;
  int rfa_iterations = 3;
  double rfa_smoothing = 1e-6;    // nu
  int fltrust_public_epochs = 20;
  double rlr_threshold = 4.0;     // tau
  double rlr_server_lr = 1.0;
  double crfl_norm_bound = 15.0;  // rho
  double crfl_noise = 0.01;       // sigma
  double afl_step = 0.01;         // gamma
  double foolsgold_epsilon = 1e-5;
};

/// What the server learned this round: the aggregated delta plus an audit
/// surface (per-client weights, the selected subset, named score series).
struct AggregationOutcome {
  Vec delta;
  Vec weights;                       // per client; empty if selection-based
  std::vector<int> selected;         // empty if weight-based
  std::map<std::string, Vec> diagnostics;
  std::vector<std::string> notes;
};

// ---- pure aggregation rules ------------------------------------------------

/// sum_i alpha_i * delta_i, alpha on the simplex.
AggregationOutcome agg_weighted_mean(const std::vector<Vec>& updates, const Vec& alpha);

/// Coordinate-wise median.
AggregationOutcome agg_median(const std::vector<Vec>& updates);

/// Coordinate-wise mean after dropping trim_count smallest and largest
/// values per coordinate. Requires n >= 2*trim_count + 1.
AggregationOutcome agg_trimmed_mean(const std::vector<Vec>& updates, int trim_count);

/// Krum scores: sum of squared distances to the n-f-2 nearest peers.
Vec krum_scores(const std::vector<Vec>& updates, int f);

/// Unweighted mean of the k lowest-score updates (ties by lower index).
AggregationOutcome agg_multi_krum(const std::vector<Vec>& updates, int f, int k);

/// Two-step meta-aggregation: n-2f iterative Krum selections, then a
/// per-coordinate trimmed mean around the coordinate median.
AggregationOutcome agg_bulyan(const std::vector<Vec>& updates, int f);

/// Similarity-based reweighting over accumulated per-client histories.
AggregationOutcome agg_foolsgold(const std::vector<Vec>& updates, const std::vector<Vec>& history,
                                 double epsilon);

/// Spectral outlier filtering: project mean-centered updates (on a random
/// coordinate subset) onto the top right singular vector; drop the
/// ceil(c*f) highest squared projections; repeat; average the survivors.
AggregationOutcome agg_dnc(const std::vector<Vec>& updates, int sub_dim, double filter_ratio,
                           int iterations, int f, Rng& rng);

/// Smoothed Weiszfeld geometric median, initialized at the weighted mean.
AggregationOutcome agg_rfa(const std::vector<Vec>& updates, const Vec& alpha, int iterations,
                           double smoothing);

/// Trust-scored aggregation against the server's own root-data update g0:
/// TS_i = relu(cos(g_i, g0)); every update is rescaled to ||g0||.
AggregationOutcome agg_fltrust(const std::vector<Vec>& updates, const Vec& server_update);

/// Sign-agreement learning rate: coordinates where |sum_i sign(delta_i)| < tau
/// get a negated server lr; output is lr (.) uniform mean.
AggregationOutcome defense_rlr(const std::vector<Vec>& updates, double tau, double server_lr);

/// Norm clipping + optional Gaussian smoothing of the global parameter
/// vector (post server step). Noise is skipped when add_noise is false
/// (final round).
Vec defense_crfl(const Vec& params, double norm_bound, double noise_sigma, bool add_noise, Rng& rng);

/// lambda' = simplex projection of (lambda + gamma * losses).
Vec afl_reweight(const Vec& lambda, const Vec& losses, double gamma);

/// params' = params + eta_g * (momentum-accumulated delta).
struct ServerOptState {
  Vec momentum_buf;
};
Vec server_opt_step(const Vec& params, const Vec& aggregated_delta, double eta_g,
                    double momentum, ServerOptState& state);

// ---- stateful dispatcher ----------------------------------------------------

/// Extra inputs some rules need; the round loop fills what applies.
struct ServerContext {
  int round = 0;
  bool final_round = false;
  Rng* rng = nullptr;                 // DnC sampling, CRFL noise
  const Vec* server_update = nullptr; // FLTrust g0
  const Vec* client_losses = nullptr; // AFL
};

/// Owns the per-run server state (FoolsGold history, AFL mixture weights)
/// and routes to the rule above. CRFL's parameter post-processing is exposed
/// separately since it acts on the stepped global model, not the deltas.
class ServerAggregator {
 public:
  explicit ServerAggregator(const AggregatorConfig& config) : config_(config) {}

  AggregationOutcome aggregate(const std::vector<Vec>& updates, const Vec& alpha,
                               const ServerContext& ctx);

  /// Applies CRFL clip/smooth when configured; identity otherwise.
  Vec post_process_params(const Vec& params, const ServerContext& ctx) const;

  const AggregatorConfig& config() const { return config_; }
  const Vec& afl_lambda() const { return afl_lambda_; }

 private:
  AggregatorConfig config_;
  std::vector<Vec> history_;  // FoolsGold accumulated update sums
  Vec afl_lambda_;
};

/// Validates structural preconditions (client counts vs f, trim bounds).
void validate_aggregator(const AggregatorConfig& config, int num_clients);

}  // namespace fedbench
