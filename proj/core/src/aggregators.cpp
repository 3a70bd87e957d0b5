#include "fedbench/aggregators.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fedbench {

namespace {

void check_nonempty(const std::vector<Vec>& updates) {
  if (updates.empty()) throw ConfigError("aggregator: no updates");
  for (const Vec& u : updates) {
    if (u.size() != updates[0].size()) throw ConfigError("aggregator: update length mismatch");
  }
}

}  // namespace

AggregationOutcome agg_weighted_mean(const std::vector<Vec>& updates, const Vec& alpha) {
  check_nonempty(updates);
  if (alpha.size() != updates.size()) throw ConfigError("weighted mean: alpha size mismatch");
  AggregationOutcome out;
  out.delta.assign(updates[0].size(), 0.0);
  for (std::size_t i = 0; i < updates.size(); ++i) axpy(alpha[i], updates[i], out.delta);
  out.weights = alpha;
  return out;
}

AggregationOutcome agg_median(const std::vector<Vec>& updates) {
  check_nonempty(updates);
  const std::size_t n = updates.size();
  AggregationOutcome out;
  out.delta.resize(updates[0].size());
  Vec column(n);
  for (std::size_t d = 0; d < out.delta.size(); ++d) {
    for (std::size_t i = 0; i < n; ++i) column[i] = updates[i][d];
    std::sort(column.begin(), column.end());
    out.delta[d] = (n % 2 == 1) ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
  }
  return out;
}

AggregationOutcome agg_trimmed_mean(const std::vector<Vec>& updates, int trim_count) {
  check_nonempty(updates);
  const int n = static_cast<int>(updates.size());
  if (trim_count < 0) throw ConfigError("trimmed mean: trim count must be >= 0");
  if (n < 2 * trim_count + 1) throw ConfigError("trimmed mean: needs n >= 2*trim+1 clients");
  AggregationOutcome out;
  out.delta.resize(updates[0].size());
  Vec column(n);
  for (std::size_t d = 0; d < out.delta.size(); ++d) {
    for (int i = 0; i < n; ++i) column[i] = updates[i][d];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (int i = trim_count; i < n - trim_count; ++i) s += column[i];
    out.delta[d] = s / (n - 2 * trim_count);
  }
  return out;
}

Vec krum_scores(const std::vector<Vec>& updates, int f) {
  const int n = static_cast<int>(updates.size());
  if (n < f + 3) throw ConfigError("krum: needs n >= f+3 clients");
  const int neighbors = n - f - 2;
  Vec scores(n, 0.0);
  for (int i = 0; i < n; ++i) {
    Vec dists;
    dists.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = dist2(updates[i], updates[j]);
      dists.push_back(d * d);
    }
    std::sort(dists.begin(), dists.end());
    for (int k = 0; k < neighbors; ++k) scores[i] += dists[k];
  }
  return scores;
}

AggregationOutcome agg_multi_krum(const std::vector<Vec>& updates, int f, int k) {
  check_nonempty(updates);
  const int n = static_cast<int>(updates.size());
  if (k < 1 || k > n) throw ConfigError("multi-krum: k out of range");
  const Vec scores = krum_scores(updates, f);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] < scores[b]; });

  AggregationOutcome out;
  out.selected.assign(order.begin(), order.begin() + k);
  std::sort(out.selected.begin(), out.selected.end());
  out.delta.assign(updates[0].size(), 0.0);
  for (int i : out.selected) axpy(1.0 / k, updates[i], out.delta);
  out.diagnostics["krum_scores"] = scores;
  return out;
}

AggregationOutcome agg_bulyan(const std::vector<Vec>& updates, int f) {
  check_nonempty(updates);
  const int n = static_cast<int>(updates.size());
  if (n < 4 * f + 3) throw ConfigError("bulyan: needs n >= 4f+3 clients");
  const int theta = n - 2 * f;
  const int beta = theta - 2 * f;

  std::vector<bool> alive(n, true);
  std::vector<int> selected;
  for (int s = 0; s < theta; ++s) {
    std::vector<Vec> pool;
    std::vector<int> pool_ids;
    for (int i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      pool.push_back(updates[i]);
      pool_ids.push_back(i);
    }
    // score each pool member against its nearest peers; the neighbor count
    // is clamped to >= 1 for the smallest pools
    const int pn = static_cast<int>(pool.size());
    const int neighbors = std::max(1, pn - f - 2);
    Vec scores(pn, 0.0);
    for (int i = 0; i < pn; ++i) {
      Vec dists;
      for (int j = 0; j < pn; ++j) {
        if (j == i) continue;
        const double d = dist2(pool[i], pool[j]);
        dists.push_back(d * d);
      }
      std::sort(dists.begin(), dists.end());
      for (int t = 0; t < std::min<int>(neighbors, dists.size()); ++t) scores[i] += dists[t];
    }
    int best = 0;
    for (int i = 1; i < pn; ++i) {
      if (scores[i] < scores[best]) best = i;
    }
    selected.push_back(pool_ids[best]);
    alive[pool_ids[best]] = false;
  }
  std::sort(selected.begin(), selected.end());

  AggregationOutcome out;
  out.selected = selected;
  out.delta.resize(updates[0].size());
  Vec column(theta);
  std::vector<int> idx(theta);
  for (std::size_t d = 0; d < out.delta.size(); ++d) {
    for (int i = 0; i < theta; ++i) column[i] = updates[selected[i]][d];
    Vec sorted = column;
    std::sort(sorted.begin(), sorted.end());
    const double median = (theta % 2 == 1) ? sorted[theta / 2]
                                           : 0.5 * (sorted[theta / 2 - 1] + sorted[theta / 2]);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return std::abs(column[a] - median) < std::abs(column[b] - median);
    });
    double s = 0.0;
    for (int i = 0; i < beta; ++i) s += column[idx[i]];
    out.delta[d] = s / beta;
  }
  return out;
}

AggregationOutcome agg_foolsgold(const std::vector<Vec>& updates, const std::vector<Vec>& history,
                                 double epsilon) {
  check_nonempty(updates);
  if (history.size() != updates.size()) throw ConfigError("foolsgold: history size mismatch");
  const int n = static_cast<int>(updates.size());

  AggregationOutcome out;
  if (n == 1) {
    out.delta = updates[0];
    out.weights = {1.0};
    return out;
  }

  // pairwise cosine over accumulated histories; zero-history vectors get 0
  Mat cs(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) cs(i, j) = (i == j) ? 0.0 : cosine(history[i], history[j]);
  }
  Vec maxsim(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double mx = -1.0;
    for (int j = 0; j < n; ++j) {
      if (j != i) mx = std::max(mx, cs(i, j));
    }
    maxsim[i] = mx;
  }
  // pardoning: scale down similarity toward clients that look more benign
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (maxsim[j] > maxsim[i] && maxsim[j] > 0.0) {
        cs(i, j) *= maxsim[i] / maxsim[j];
      }
    }
  }
  Vec wv(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double mx = -1.0;
    for (int j = 0; j < n; ++j) {
      if (j != i) mx = std::max(mx, cs(i, j));
    }
    wv[i] = std::clamp(1.0 - mx, 0.0, 1.0);
  }
  const double wmax = *std::max_element(wv.begin(), wv.end());
  if (wmax > 0.0) {
    for (double& v : wv) v /= wmax;
  }
  // logit sharpening
  for (double& v : wv) {
    if (v >= 1.0) v = 1.0 - epsilon;
    if (v <= 0.0) {
      v = 0.0;
      continue;
    }
    v = std::log(v / (1.0 - v)) + 0.5;
    v = std::clamp(v, 0.0, 1.0);
  }
  out.diagnostics["foolsgold_weights"] = wv;

  const double wsum = std::accumulate(wv.begin(), wv.end(), 0.0);
  out.delta.assign(updates[0].size(), 0.0);
  if (wsum <= epsilon) {
    // every client looked like a sybil; nothing left to weight
    for (const Vec& u : updates) axpy(1.0 / n, u, out.delta);
    out.weights.assign(n, 1.0 / n);
    out.notes.push_back("foolsgold: all weights zero, fell back to plain mean");
    return out;
  }
  for (int i = 0; i < n; ++i) axpy(wv[i] / wsum, updates[i], out.delta);
  out.weights = wv;
  return out;
}

AggregationOutcome agg_dnc(const std::vector<Vec>& updates, int sub_dim, double filter_ratio,
                           int iterations, int f, Rng& rng) {
  check_nonempty(updates);
  const int n = static_cast<int>(updates.size());
  if (n < 2) throw ConfigError("dnc: needs >= 2 clients");
  const int dim = static_cast<int>(updates[0].size());
  const int remove = static_cast<int>(std::ceil(filter_ratio * f));

  std::vector<bool> survives(n, true);
  AggregationOutcome out;
  for (int it = 0; it < iterations; ++it) {
    const int b = std::min(sub_dim, dim);
    const std::vector<int> coords = rng.sample_without_replacement(dim, b);

    Mat sub(n, b);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < b; ++j) sub(i, j) = updates[i][coords[j]];
    }
    // mean-center columns
    for (int j = 0; j < b; ++j) {
      double m = 0.0;
      for (int i = 0; i < n; ++i) m += sub(i, j);
      m /= n;
      for (int i = 0; i < n; ++i) sub(i, j) -= m;
    }
    // top right singular vector by alternating power iteration
    Vec v(b);
    for (double& x : v) x = rng.gaussian();
    double vn = norm2(v);
    if (vn == 0.0) {
      v[0] = 1.0;
      vn = 1.0;
    }
    for (double& x : v) x /= vn;
    Vec u(n);
    for (int step = 0; step < 100; ++step) {
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < b; ++j) s += sub(i, j) * v[j];
        u[i] = s;
      }
      const double un = norm2(u);
      if (un == 0.0) break;  // centered matrix is zero: no outlier direction
      for (double& x : u) x /= un;
      Vec vnew(b, 0.0);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < b; ++j) vnew[j] += sub(i, j) * u[i];
      }
      const double nn = norm2(vnew);
      if (nn == 0.0) break;
      for (double& x : vnew) x /= nn;
      const double drift = dist2(vnew, v);
      v = std::move(vnew);
      if (drift < 1e-12) break;
    }
    Vec scores(n, 0.0);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < b; ++j) s += sub(i, j) * v[j];
      scores[i] = s * s;
    }
    std::ostringstream key;
    key << "dnc_scores_iter" << it;
    out.diagnostics[key.str()] = scores;

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int bdx) { return scores[a] > scores[bdx]; });
    for (int r = 0; r < std::min(remove, n); ++r) survives[order[r]] = false;
  }

  std::vector<int> kept;
  for (int i = 0; i < n; ++i) {
    if (survives[i]) kept.push_back(i);
  }
  out.delta.assign(updates[0].size(), 0.0);
  if (kept.empty()) {
    for (const Vec& c : updates) axpy(1.0 / n, c, out.delta);
    out.selected.resize(n);
    std::iota(out.selected.begin(), out.selected.end(), 0);
    out.notes.push_back("dnc: every client filtered, fell back to plain mean");
    return out;
  }
  out.selected = kept;
  for (int i : kept) axpy(1.0 / kept.size(), updates[i], out.delta);
  return out;
}

AggregationOutcome agg_rfa(const std::vector<Vec>& updates, const Vec& alpha, int iterations,
                           double smoothing) {
  check_nonempty(updates);
  if (iterations < 1) throw ConfigError("rfa: iterations must be >= 1");
  if (smoothing <= 0.0) throw ConfigError("rfa: smoothing must be > 0");
  if (alpha.size() != updates.size()) throw ConfigError("rfa: alpha size mismatch");

  Vec z = agg_weighted_mean(updates, alpha).delta;
  Vec beta(updates.size());
  for (int it = 0; it < iterations; ++it) {
    double bsum = 0.0;
    for (std::size_t i = 0; i < updates.size(); ++i) {
      beta[i] = alpha[i] / std::max(smoothing, dist2(z, updates[i]));
      bsum += beta[i];
    }
    Vec next(z.size(), 0.0);
    for (std::size_t i = 0; i < updates.size(); ++i) axpy(beta[i] / bsum, updates[i], next);
    z = std::move(next);
  }
  AggregationOutcome out;
  out.delta = std::move(z);
  out.weights = alpha;
  return out;
}

AggregationOutcome agg_fltrust(const std::vector<Vec>& updates, const Vec& server_update) {
  check_nonempty(updates);
  if (server_update.size() != updates[0].size()) throw ConfigError("fltrust: g0 length mismatch");
  const double g0_norm = norm2(server_update);

  AggregationOutcome out;
  Vec trust(updates.size(), 0.0);
  double tsum = 0.0;
  out.delta.assign(updates[0].size(), 0.0);
  for (std::size_t i = 0; i < updates.size(); ++i) {
    trust[i] = std::max(0.0, cosine(updates[i], server_update));
    tsum += trust[i];
  }
  out.diagnostics["trust_scores"] = trust;
  out.weights = trust;
  if (tsum == 0.0) {
    out.delta = server_update;
    out.notes.push_back("fltrust: all clients distrusted, used server update");
    return out;
  }
  for (std::size_t i = 0; i < updates.size(); ++i) {
    if (trust[i] == 0.0) continue;
    const double un = norm2(updates[i]);
    if (un == 0.0) continue;
    axpy(trust[i] / tsum * g0_norm / un, updates[i], out.delta);
  }
  return out;
}

AggregationOutcome defense_rlr(const std::vector<Vec>& updates, double tau, double server_lr) {
  check_nonempty(updates);
  if (tau < 0.0) throw ConfigError("rlr: tau must be >= 0");
  const int n = static_cast<int>(updates.size());
  AggregationOutcome out;
  out.delta.assign(updates[0].size(), 0.0);
  Vec sign_agreement(out.delta.size(), 0.0);
  for (std::size_t d = 0; d < out.delta.size(); ++d) {
    double s = 0.0;
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = updates[i][d];
      s += v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      mean += v / n;
    }
    sign_agreement[d] = s;
    const double lr = std::abs(s) >= tau ? server_lr : -server_lr;
    out.delta[d] = lr * mean;
  }
  out.diagnostics["rlr_sign_sums"] = sign_agreement;
  return out;
}

Vec defense_crfl(const Vec& params, double norm_bound, double noise_sigma, bool add_noise,
                 Rng& rng) {
  if (norm_bound <= 0.0) throw ConfigError("crfl: norm bound must be > 0");
  if (noise_sigma < 0.0) throw ConfigError("crfl: noise sigma must be >= 0");
  Vec out = params;
  const double n = norm2(out);
  if (n > norm_bound) {
    const double s = norm_bound / n;
    for (double& v : out) v *= s;
  }
  if (add_noise && noise_sigma > 0.0) {
    for (double& v : out) v += noise_sigma * rng.gaussian();
  }
  return out;
}

Vec afl_reweight(const Vec& lambda, const Vec& losses, double gamma) {
  if (lambda.size() != losses.size()) throw ConfigError("afl: lambda/losses size mismatch");
  Vec y = lambda;
  axpy(gamma, losses, y);
  return project_simplex(y);
}

Vec server_opt_step(const Vec& params, const Vec& aggregated_delta, double eta_g,
                    double momentum, ServerOptState& state) {
  if (eta_g <= 0.0) throw ConfigError("server step: eta_g must be > 0");
  if (state.momentum_buf.empty()) state.momentum_buf.assign(params.size(), 0.0);
  if (state.momentum_buf.size() != params.size()) throw ConfigError("server step: buffer mismatch");
  Vec out = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.momentum_buf[i] = momentum * state.momentum_buf[i] + aggregated_delta[i];
    out[i] += eta_g * state.momentum_buf[i];
  }
  return out;
}

AggregationOutcome ServerAggregator::aggregate(const std::vector<Vec>& updates, const Vec& alpha,
                                               const ServerContext& ctx) {
  check_nonempty(updates);
  switch (config_.kind) {
    case AggregatorKind::kMean:
    case AggregatorKind::kCrfl:
      return agg_weighted_mean(updates, alpha);
    case AggregatorKind::kMedian:
      return agg_median(updates);
    case AggregatorKind::kTrimmedMean: {
      const int trim = static_cast<int>(std::floor(config_.trim_fraction * updates.size()));
      return agg_trimmed_mean(updates, trim);
    }
    case AggregatorKind::kMultiKrum:
      return agg_multi_krum(updates, config_.expected_malicious,
                            std::min<int>(config_.multi_krum_k, updates.size()));
    case AggregatorKind::kBulyan:
      return agg_bulyan(updates, config_.expected_malicious);
    case AggregatorKind::kFoolsGold: {
      if (history_.size() != updates.size()) {
        history_.assign(updates.size(), Vec(updates[0].size(), 0.0));
      }
      for (std::size_t i = 0; i < updates.size(); ++i) axpy(1.0, updates[i], history_[i]);
      return agg_foolsgold(updates, history_, config_.foolsgold_epsilon);
    }
    case AggregatorKind::kDnc: {
      if (ctx.rng == nullptr) throw ConfigError("dnc: missing rng in server context");
      return agg_dnc(updates, config_.dnc_sub_dim, config_.dnc_filter_ratio,
                     config_.dnc_iterations, config_.expected_malicious, *ctx.rng);
    }
    case AggregatorKind::kRfa:
      return agg_rfa(updates, alpha, config_.rfa_iterations, config_.rfa_smoothing);
    case AggregatorKind::kFlTrust: {
      if (ctx.server_update == nullptr) throw ConfigError("fltrust: missing server update");
      return agg_fltrust(updates, *ctx.server_update);
    }
    case AggregatorKind::kRlr:
      return defense_rlr(updates, config_.rlr_threshold, config_.rlr_server_lr);
    case AggregatorKind::kAfl: {
      if (ctx.client_losses == nullptr) throw ConfigError("afl: missing client losses");
      if (afl_lambda_.size() != alpha.size()) afl_lambda_ = alpha;
      afl_lambda_ = afl_reweight(afl_lambda_, *ctx.client_losses, config_.afl_step);
      AggregationOutcome out = agg_weighted_mean(updates, afl_lambda_);
      out.diagnostics["afl_lambda"] = afl_lambda_;
      return out;
    }
  }
  throw ConfigError("unknown aggregator kind");
}

Vec ServerAggregator::post_process_params(const Vec& params, const ServerContext& ctx) const {
  if (config_.kind != AggregatorKind::kCrfl) return params;
  if (ctx.rng == nullptr) throw ConfigError("crfl: missing rng in server context");
  return defense_crfl(params, config_.crfl_norm_bound, config_.crfl_noise, !ctx.final_round,
                      *ctx.rng);
}

void validate_aggregator(const AggregatorConfig& config, int num_clients) {
  const int n = num_clients;
  const int f = config.expected_malicious;
  switch (config.kind) {
    case AggregatorKind::kMultiKrum:
      if (n < f + 3) throw ConfigError("multi-krum requires n >= f+3 clients");
      if (config.multi_krum_k < 1) throw ConfigError("multi-krum k must be >= 1");
      break;
    case AggregatorKind::kBulyan:
      if (n < 4 * f + 3) throw ConfigError("bulyan requires n >= 4f+3 clients");
      break;
    case AggregatorKind::kTrimmedMean:
      if (config.trim_fraction < 0.0 || config.trim_fraction >= 0.5) {
        throw ConfigError("trimmed mean requires trim fraction in [0, 0.5)");
      }
      break;
    case AggregatorKind::kMedian:
      if (n < 2) throw ConfigError("median requires >= 2 clients");
      break;
    default:
      break;
  }
}

}  // namespace fedbench
