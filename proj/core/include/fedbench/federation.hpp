#pragma once

#include <functional>

#include "fedbench/aggregators.hpp"
#include "fedbench/attacks.hpp"
#include "fedbench/data.hpp"
#include "fedbench/model.hpp"

namespace fedbench {

enum class ClientRole { kHonest, kByzantine, kBackdoor };

enum class StrategyKind { kFedAvg, kFedProx, kScaffold };

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kFedAvg;
  double prox_mu = 0.01;          // FedProx
  double scaffold_global_lr = 0.25;
};

struct TrainingSchedule {
  int rounds = 50;          // communication epochs E
  int local_epochs = 10;    // local rounds U
  int batch_size = 64;      // B
  double lr = 0.01;         // eta
  double momentum = 0.9;
  double weight_decay = 1e-5;
};

struct ClientState {
  int id = 0;
  Dataset data;
  ClientRole role = ClientRole::kHonest;
  Vec control_variate;                     // SCAFFOLD c_i, lazily sized
  std::optional<BackdoorConfig> backdoor;  // role == kBackdoor only
  std::vector<std::size_t> poison_set;     // sample indices in the backdoor term
};

struct ClientUpdate {
  Vec delta;              // w_i - w, flat
  long sample_count = 0;  // declared N_i
  double train_loss = 0.0;
  ClientRole role = ClientRole::kHonest;  // audit only; aggregators never see it
  Vec variate_delta;      // SCAFFOLD c_i change, empty otherwise
};

/// Runs U local epochs of mini-batch SGD from the distributed parameters and
/// returns the delta. FedProx adds mu*(w_i - w) to each gradient; SCAFFOLD
/// corrects each step by (c - c_i); backdoor clients add the varpi-weighted
/// triggered-batch gradient.
ClientUpdate local_train(const ModelParams& global, const ClientState& client,
                         const TrainingSchedule& schedule, const StrategyConfig& strategy,
                         const Vec& server_variate, Rng rng);

/// w_minus_i = (w - alpha_i * w_i) / (1 - alpha_i), on flat parameter vectors.
Vec leave_one_out(const Vec& aggregated, const Vec& local_model, double alpha_i);

struct RoundRecord {
  int round = 0;
  std::vector<int> participants;      // client indices, ascending
  std::vector<ClientUpdate> updates;  // post-attack, aligned with participants
  AggregationOutcome outcome;
  Vec alpha;                          // aligned with participants
  double mean_train_loss = 0.0;
};

/// Weighting mode of Eq.-style aggregation.
enum class WeightMode { kBySamples, kByClients };

Vec aggregation_weights(const std::vector<ClientState>& clients, WeightMode mode);

struct AdversarySetup {
  ByzantineAttackConfig config;
  std::uint64_t seed = 0;
  int num_clients = 0;
};

/// Rewrites byzantine clients' deltas in place. Statistics-based attacks
/// (LIE, Min-Max, Min-Sum) read the benign updates and submit one shared
/// malicious update; random noise is drawn per client.
void apply_model_attack(std::vector<ClientUpdate>& updates, const std::vector<ClientRole>& roles,
                        const AdversarySetup& adversary, int round);

/// One experiment's federated loop. Owns server-side state; clients train in
/// parallel with per-(round, client) derived streams, so results do not
/// depend on the worker count.
class FederationEngine {
 public:
  struct Options {
    TrainingSchedule schedule;
    StrategyConfig strategy;
    WeightMode weight_mode = WeightMode::kBySamples;
    AggregatorConfig aggregator;
    double server_lr = 1.0;
    double server_momentum = 0.0;
    double participation = 1.0;  // fraction of clients drawn each round
    std::optional<AdversarySetup> adversary;
    std::optional<Dataset> fltrust_root;
    std::uint64_t training_seed = 0;
    int threads = 1;
  };

  FederationEngine(ModelParams initial, std::vector<ClientState> clients, Options options);

  RoundRecord run_round();
  /// Runs `rounds` rounds and returns all records.
  std::vector<RoundRecord> run(int rounds);

  const ModelParams& params() const { return params_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  int round() const { return round_; }
  int total_rounds() const { return options_.schedule.rounds; }
  const Options& options() const { return options_; }

 private:
  Options options_;
  ModelParams params_;
  std::vector<ClientState> clients_;
  ServerAggregator aggregator_;
  ServerOptState server_opt_;
  Vec server_variate_;  // SCAFFOLD c
  int round_ = 0;
};

}  // namespace fedbench
