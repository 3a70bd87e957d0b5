#pragma once

#include <nlohmann/json.hpp>

#include "fedbench/federation.hpp"
#include "fedbench/metrics.hpp"

namespace fedbench {

inline constexpr const char* kVersion = "fedbench 0.1.0";

struct SeedSet {
  std::uint64_t data = 17;
  std::uint64_t init = 23;
  std::uint64_t training = 41;
  std::uint64_t attack = 97;
};

struct DataConfig {
  BlobSpec generator;
  double dirichlet_beta = 0.5;
  bool domain_mode = false;
  std::vector<DomainTransform> domains;
  std::optional<std::string> held_out;
};

struct AdversaryConfig {
  enum class Kind { kNone, kRandomNoise, kLie, kMinMax, kMinSum, kSymFlip, kPairFlip, kBackdoor };
  Kind kind = Kind::kNone;
  double ratio = 0.0;  // Upsilon
  ByzantineAttackConfig byzantine;
  double flip_epsilon = 0.5;
  std::vector<int> backdoor_mask_coords;
  Vec backdoor_pattern;
  int backdoor_target = 0;
  double backdoor_varpi = 1.0;
  double backdoor_poison_fraction = 0.5;
};

struct MetricsConfig {
  bool attack_impact = false;
  bool attack_success_rate = false;
  enum class ShapleyMode { kNone, kRetrainExact, kOneshotAggregate };
  ShapleyMode shapley = ShapleyMode::kNone;
  double shapley_rho = 1.0;
  int shapley_max_exact = 6;
  bool contribution_match = false;
};

struct ExperimentConfig {
  int clients = 10;
  SeedSet seeds;
  DataConfig data;
  int model_hidden = 0;  // 0 = logistic regression
  TrainingSchedule schedule;
  StrategyConfig strategy;
  std::string strategy_name = "fedavg";  // fedavg|fedprox|scaffold|fedopt
  WeightMode weight_mode = WeightMode::kBySamples;
  double server_lr = 1.0;
  double server_momentum = 0.0;
  AggregatorConfig aggregator;
  int fltrust_root_per_class = 25;
  AdversaryConfig adversary;
  MetricsConfig metrics;
  double participation = 1.0;
  int threads = 1;

  /// Normalized form: every default the run will use, materialized.
  nlohmann::ordered_json echo() const;
};

/// Strict parse: unknown keys, invalid ranges and partially specified seeds
/// are reported with their key path. Defaults are recorded as explicit
/// values in the returned config.
ExperimentConfig parse_config_json(const nlohmann::json& j);
ExperimentConfig parse_config(const std::string& path);

struct RoundSummary {
  int round = 0;
  double mean_train_loss = 0.0;
  std::vector<double> per_dataset;  // A^u, fractions
  double suite_accuracy = 0.0;      // A^U
  std::optional<double> out_accuracy;
  std::optional<double> asr;
  Vec weights;
  std::vector<int> selected;
  std::map<std::string, Vec> diagnostics;
  std::vector<std::string> notes;
  Vec client_losses;
  Vec update_norms;
};

struct MetricsReport {
  std::vector<std::pair<std::string, double>> per_dataset;  // final A^u
  double suite_accuracy = 0.0;                              // A^U
  std::optional<double> out_accuracy;                       // A^O
  double deviation_points = 0.0;                            // V
  double bias_points = 0.0;                                 // zeta (same statistic)
  std::optional<double> benign_accuracy;                    // baseline for I
  std::optional<double> impact_points;                      // I
  std::optional<double> asr;                                // pooled R
  std::vector<std::pair<std::string, double>> asr_per_dataset;  // R^u
  std::vector<double> shapley;                              // nu per client
  std::vector<double> gamma;                                // leave-one-out drops
  std::optional<double> contribution_match;                 // E
  bool contribution_match_requested = false;
};

struct RunReport {
  nlohmann::ordered_json config_echo;
  std::string version;
  std::vector<RoundSummary> rounds;
  MetricsReport metrics;
  std::optional<SeedSet> benign_twin_seeds;  // echoed when the twin ran
  std::vector<std::string> notes;
  double wall_clock_seconds = 0.0;
};

RunReport run_experiment(const ExperimentConfig& config);

nlohmann::ordered_json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

/// metrics.csv: header "metric,dataset,round,value"; accuracies in
/// percentage points; undefined values as the literal "NA".
std::string metrics_csv(const RunReport& report);

/// Writes report.json and/or metrics.csv into out_dir; returns the paths.
std::vector<std::string> emit_report(const RunReport& report, const std::string& out_dir,
                                     const std::vector<std::string>& formats = {"json", "csv"});

/// The assembled inputs of a run (exposed for tests and coalition replays).
struct ExperimentSetup {
  std::vector<ClientState> clients;
  EvaluationSuite suite;
  ModelParams initial;
  FederationEngine::Options engine_options;
  std::optional<BackdoorConfig> backdoor;
};
ExperimentSetup build_setup(const ExperimentConfig& config);

}  // namespace fedbench
