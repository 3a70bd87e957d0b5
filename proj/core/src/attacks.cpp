#include "fedbench/attacks.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace fedbench {

Vec attack_random_noise(const Vec& update, Rng& rng, double scale) {
  Vec out(update.size());
  for (double& v : out) v = scale * rng.gaussian();
  return out;
}

Vec attack_lie(const std::vector<Vec>& benign, double z) {
  if (benign.size() < 2) throw ConfigError("lie attack: needs >= 2 benign updates");
  const Vec mu = mean_of(benign);
  const Vec sigma = stddev_of(benign);
  Vec out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = mu[i] + z * sigma[i];
  return out;
}

double lie_default_z(int num_clients, int num_attackers) {
  // supporters needed for a majority once the attackers collude
  const int n = num_clients;
  const int m = num_attackers;
  const int s = n / 2 + 1 - m;
  const double phi = static_cast<double>(n - m - s) / static_cast<double>(n - m);
  return normal_quantile(std::clamp(phi, 1e-9, 1.0 - 1e-9));
}

Vec perturbation_vector(const std::vector<Vec>& benign, PerturbationKind kind) {
  const Vec mu = mean_of(benign);
  Vec p(mu.size(), 0.0);
  switch (kind) {
    case PerturbationKind::kNegUnitMean: {
      const double n = norm2(mu);
      if (n > 0.0) p = vscale(mu, -1.0 / n);
      break;
    }
    case PerturbationKind::kNegSign: {
      for (std::size_t i = 0; i < mu.size(); ++i) {
        p[i] = mu[i] > 0.0 ? -1.0 : (mu[i] < 0.0 ? 1.0 : 0.0);
      }
      break;
    }
    case PerturbationKind::kUnitStd: {
      p = stddev_of(benign);
      const double n = norm2(p);
      if (n > 0.0) p = vscale(p, 1.0 / n);
      break;
    }
  }
  return p;
}

bool min_max_feasible(const std::vector<Vec>& benign, const Vec& candidate) {
  double bound = 0.0;
  for (std::size_t i = 0; i < benign.size(); ++i) {
    for (std::size_t j = i + 1; j < benign.size(); ++j) {
      bound = std::max(bound, dist2(benign[i], benign[j]));
    }
  }
  double worst = 0.0;
  for (const Vec& b : benign) worst = std::max(worst, dist2(candidate, b));
  return worst <= bound;
}

bool min_sum_feasible(const std::vector<Vec>& benign, const Vec& candidate) {
  double bound = 0.0;
  for (const Vec& bi : benign) {
    double row = 0.0;
    for (const Vec& bj : benign) {
      const double d = dist2(bi, bj);
      row += d * d;
    }
    bound = std::max(bound, row);
  }
  double total = 0.0;
  for (const Vec& b : benign) {
    const double d = dist2(candidate, b);
    total += d * d;
  }
  return total <= bound;
}

namespace {

GammaSearchResult search_gamma(const std::vector<Vec>& benign, const ByzantineAttackConfig& config,
                               bool (*feasible)(const std::vector<Vec>&, const Vec&)) {
  if (benign.size() < 2) throw ConfigError("gamma attack: needs >= 2 benign updates");
  if (config.gamma_tol <= 0.0) throw ConfigError("gamma attack: tolerance must be > 0");
  const Vec mu = mean_of(benign);
  const Vec pert = perturbation_vector(benign, config.perturbation);

  const auto candidate = [&](double gamma) {
    Vec c = mu;
    axpy(gamma, pert, c);
    return c;
  };

  // degenerate cases: identical benign updates (bound 0) or a vanishing
  // perturbation direction leave the mean as the only sensible answer
  if (norm2(pert) == 0.0 || !feasible(benign, candidate(config.gamma_tol))) {
    return {mu, 0.0};
  }

  double lo = config.gamma_tol;  // known feasible
  double hi = lo;
  while (hi < config.gamma_max && feasible(benign, candidate(hi))) {
    lo = hi;
    hi *= 2.0;
  }
  hi = std::min(hi, config.gamma_max);
  if (feasible(benign, candidate(hi))) {
    return {candidate(hi), hi};  // capped by gamma_max
  }
  while (hi - lo > config.gamma_tol) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(benign, candidate(mid))) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {candidate(lo), lo};
}

}  // namespace

GammaSearchResult attack_min_max(const std::vector<Vec>& benign, const ByzantineAttackConfig& config) {
  return search_gamma(benign, config, &min_max_feasible);
}

GammaSearchResult attack_min_sum(const std::vector<Vec>& benign, const ByzantineAttackConfig& config) {
  return search_gamma(benign, config, &min_sum_feasible);
}

double normal_quantile(double p) {
  assert(p > 0.0 && p < 1.0);
  // Acklam's rational approximation, |relative error| < 1.15e-9
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  const double phigh = 1 - plow;
  double q;
  double r;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p <= phigh) {
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  }
  q = std::sqrt(-2 * std::log(1 - p));
  return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
         ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
}

}  // namespace fedbench
