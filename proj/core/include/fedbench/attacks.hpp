#pragma once

#include <optional>

#include "fedbench/linalg.hpp"

namespace fedbench {

enum class ByzantineKind { kNone, kRandomNoise, kLie, kMinMax, kMinSum };

enum class PerturbationKind { kNegUnitMean, kNegSign, kUnitStd };

struct ByzantineAttackConfig {
  ByzantineKind kind = ByzantineKind::kNone;
  double noise_scale = 1.0;           // random noise stddev
  std::optional<double> lie_z;        // default: quantile construction from (n, attackers)
  PerturbationKind perturbation = PerturbationKind::kNegUnitMean;
  double gamma_max = 1e6;             // search bracket cap
  double gamma_tol = 1e-5;            // bisection tolerance
};

/// Replaces the update with i.i.d. Gaussian(0, scale^2) of the same length.
Vec attack_random_noise(const Vec& update, Rng& rng, double scale);

/// mu + z * sigma over the benign updates (population sigma). Needs >= 2.
Vec attack_lie(const std::vector<Vec>& benign, double z);

/// The standard quantile construction for the LIE coefficient given the
/// total client count and the attacker count.
double lie_default_z(int num_clients, int num_attackers);

struct GammaSearchResult {
  Vec update;
  double gamma = 0.0;
};

/// Largest gamma (by exponential bracketing + bisection to config.gamma_tol)
/// such that max_i ||grad_k - grad_i|| <= max pairwise benign distance, with
/// grad_k = mean(benign) + gamma * perturbation.
GammaSearchResult attack_min_max(const std::vector<Vec>& benign, const ByzantineAttackConfig& config);

/// Same search with the constraint
/// sum_i ||grad_k - grad_i||^2 <= max_i sum_j ||grad_i - grad_j||^2.
GammaSearchResult attack_min_sum(const std::vector<Vec>& benign, const ByzantineAttackConfig& config);

/// The perturbation direction used by Min-Max / Min-Sum.
Vec perturbation_vector(const std::vector<Vec>& benign, PerturbationKind kind);

/// Feasibility predicates for the two constraints (used by the search and
/// exposed for the post-checks in debug/selftest paths).
bool min_max_feasible(const std::vector<Vec>& benign, const Vec& candidate);
bool min_sum_feasible(const std::vector<Vec>& benign, const Vec& candidate);

/// Inverse standard normal CDF (Acklam's rational approximation).
double normal_quantile(double p);

}  // namespace fedbench
