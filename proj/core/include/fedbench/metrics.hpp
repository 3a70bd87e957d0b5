#pragma once

#include "fedbench/data.hpp"
#include "fedbench/model.hpp"

namespace fedbench {

/// Named test collection plus the optional unseen-domain and triggered sets.
struct EvaluationSuite {
  std::vector<std::pair<std::string, Dataset>> datasets;  // U = {u}
  std::optional<Dataset> unseen;                          // O
  std::optional<Dataset> triggered;                       // T~, clean labels kept
  int trigger_target = -1;
};

/// Fraction of samples whose argmax logit equals the label (ties toward the
/// lowest class index).
double top1_accuracy(const ModelParams& model, const Dataset& data);

struct SuiteMetrics {
  std::vector<double> per_dataset;   // A^u, fractions
  double mean = 0.0;                 // A^U
  double deviation_points = 0.0;     // population std of {A^u}, percentage points
  std::optional<double> out_accuracy;  // A^O
  bool degenerate = false;           // |U| == 1
};

SuiteMetrics suite_metrics(const ModelParams& model, const EvaluationSuite& suite);

/// Signed accuracy drop, same unit as the inputs (points in, points out).
double attack_impact(double benign_accuracy, double attacked_accuracy);

/// Fraction of triggered samples predicted as the target label.
double attack_success_rate(const ModelParams& model, const Dataset& triggered, int target_label);

/// Builds T~ from the suite's test sets: samples whose clean label differs
/// from the target, with the trigger applied.
Dataset build_triggered_set(const EvaluationSuite& suite, const BackdoorConfig& config);

struct ShapleyConfig {
  double rescale = 1.0;  // rho
  enum class Mode { kRetrainExact, kOneshotAggregate } mode = Mode::kRetrainExact;
  int max_exact = 6;
};

/// Exact Shapley values over all coalitions. value(mask) is the coalition
/// utility; value(0) is the empty-coalition baseline. Cost is 2^n calls.
std::vector<double> shapley_values(int num_clients,
                                   const std::function<double(std::uint32_t)>& value,
                                   double rescale);

/// Gamma_i = mean_acc - mean_u A^u_{-i}; Gamma is normalized by its sum and
/// the result is cos(Gamma, alpha). Undefined (nullopt) when the sum or the
/// norm of Gamma vanishes.
std::optional<double> contribution_match_degree(double mean_accuracy,
                                                const std::vector<double>& loo_mean_accuracies,
                                                const Vec& alpha);

}  // namespace fedbench
