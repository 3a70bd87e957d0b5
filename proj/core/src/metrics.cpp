#include "fedbench/metrics.hpp"

#include <cassert>
#include <cmath>

namespace fedbench {

double top1_accuracy(const ModelParams& model, const Dataset& data) {
  if (data.empty()) throw ConfigError("top1_accuracy: empty dataset");
  const Batch b = data.to_batch();
  const Mat logits = forward_logits(model, b.inputs);
  std::size_t hits = 0;
  for (int i = 0; i < logits.rows; ++i) {
    if (argmax_row(logits, i) == b.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / logits.rows;
}

SuiteMetrics suite_metrics(const ModelParams& model, const EvaluationSuite& suite) {
  if (suite.datasets.empty()) throw ConfigError("suite_metrics: empty test collection");
  SuiteMetrics out;
  for (const auto& [name, data] : suite.datasets) {
    out.per_dataset.push_back(top1_accuracy(model, data));
  }
  double sum = 0.0;
  for (double a : out.per_dataset) sum += a;
  out.mean = sum / out.per_dataset.size();
  double var = 0.0;
  for (double a : out.per_dataset) var += (a - out.mean) * (a - out.mean);
  var /= out.per_dataset.size();  // population variance
  out.deviation_points = 100.0 * std::sqrt(var);
  out.degenerate = out.per_dataset.size() == 1;
  if (suite.unseen) out.out_accuracy = top1_accuracy(model, *suite.unseen);
  return out;
}

double attack_impact(double benign_accuracy, double attacked_accuracy) {
  return benign_accuracy - attacked_accuracy;
}

double attack_success_rate(const ModelParams& model, const Dataset& triggered, int target_label) {
  if (triggered.empty()) throw ConfigError("attack_success_rate: empty triggered set");
  const Batch b = triggered.to_batch();
  const Mat logits = forward_logits(model, b.inputs);
  std::size_t hits = 0;
  for (int i = 0; i < logits.rows; ++i) {
    if (argmax_row(logits, i) == target_label) ++hits;
  }
  return static_cast<double>(hits) / logits.rows;
}

Dataset build_triggered_set(const EvaluationSuite& suite, const BackdoorConfig& config) {
  Dataset out;
  for (const auto& [name, data] : suite.datasets) {
    out.num_classes = data.num_classes;
    for (const Sample& s : data.samples) {
      if (s.label == config.target_label) continue;  // would inflate the rate
      out.samples.push_back(inject_trigger(s, config));
    }
  }
  return out;
}

std::vector<double> shapley_values(int num_clients,
                                   const std::function<double(std::uint32_t)>& value,
                                   double rescale) {
  if (num_clients < 1 || num_clients > 20) throw ConfigError("shapley: client count out of range");
  const std::uint32_t full = (1u << num_clients) - 1u;

  std::vector<double> cache(static_cast<std::size_t>(full) + 1);
  for (std::uint32_t mask = 0; mask <= full; ++mask) cache[mask] = value(mask);

  // binomial table C(num_clients-1, k)
  std::vector<double> choose(num_clients, 1.0);
  for (int k = 1; k < num_clients; ++k) {
    choose[k] = choose[k - 1] * (num_clients - k) / k;
  }

  std::vector<double> nu(num_clients, 0.0);
  for (int i = 0; i < num_clients; ++i) {
    const std::uint32_t bit = 1u << i;
    double acc = 0.0;
    for (std::uint32_t mask = 0; mask <= full; ++mask) {
      if (mask & bit) continue;
      const int size = __builtin_popcount(mask);
      acc += (cache[mask | bit] - cache[mask]) / choose[size];
    }
    nu[i] = rescale / num_clients * acc;
  }
  return nu;
}

std::optional<double> contribution_match_degree(double mean_accuracy,
                                                const std::vector<double>& loo_mean_accuracies,
                                                const Vec& alpha) {
  if (loo_mean_accuracies.size() != alpha.size()) {
    throw ConfigError("contribution match: size mismatch");
  }
  Vec gamma(loo_mean_accuracies.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    gamma[i] = mean_accuracy - loo_mean_accuracies[i];
    sum += gamma[i];
  }
  if (sum == 0.0 || norm2(gamma) == 0.0) return std::nullopt;
  for (double& g : gamma) g /= sum;
  const double c = cosine(gamma, alpha);
  if (norm2(alpha) == 0.0) return std::nullopt;
  return c;
}

}  // namespace fedbench
