#include "fedbench/federation.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fedbench {

namespace {

Batch gather_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t end) {
  Batch b;
  const int dim = data.dim();
  b.inputs = Mat(static_cast<int>(end - begin), dim);
  b.labels.resize(end - begin);
  for (std::size_t k = begin; k < end; ++k) {
    const Sample& s = data.samples[order[k]];
    const int row = static_cast<int>(k - begin);
    for (int j = 0; j < dim; ++j) b.inputs(row, j) = s.x[j];
    b.labels[row] = s.label;
  }
  return b;
}

// triggered twin of the batch rows whose source index is in the poison set;
// labels forced to the attack target
Batch gather_triggered(const Dataset& data, const std::vector<std::size_t>& order,
                       std::size_t begin, std::size_t end, const BackdoorConfig& config,
                       const std::vector<bool>& poisoned) {
  Batch b;
  const int dim = data.dim();
  std::vector<std::size_t> rows;
  for (std::size_t k = begin; k < end; ++k) {
    if (poisoned[order[k]]) rows.push_back(order[k]);
  }
  b.inputs = Mat(static_cast<int>(rows.size()), dim);
  b.labels.assign(rows.size(), config.target_label);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Vec x = inject_trigger(data.samples[rows[r]].x, config);
    for (int j = 0; j < dim; ++j) b.inputs(static_cast<int>(r), j) = x[j];
  }
  return b;
}

}  // namespace

ClientUpdate local_train(const ModelParams& global, const ClientState& client,
                         const TrainingSchedule& schedule, const StrategyConfig& strategy,
                         const Vec& server_variate, Rng rng) {
  if (client.data.empty()) throw ConfigError("local_train: client dataset is empty");
  const std::size_t n = client.data.size();
  const Vec global_flat = param_vector(global);

  ModelParams w = global;
  MomentumState momentum;
  const bool scaffold = strategy.kind == StrategyKind::kScaffold;
  const bool prox = strategy.kind == StrategyKind::kFedProx;

  Vec c_i = client.control_variate;
  if (scaffold && c_i.empty()) c_i.assign(global_flat.size(), 0.0);

  std::vector<bool> poisoned(n, false);
  const bool backdoor = client.role == ClientRole::kBackdoor && client.backdoor.has_value();
  if (backdoor) {
    for (std::size_t idx : client.poison_set) poisoned[idx] = true;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double last_epoch_loss = 0.0;
  long steps = 0;
  for (int epoch = 0; epoch < schedule.local_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += schedule.batch_size) {
      const std::size_t end = std::min(n, begin + schedule.batch_size);
      const Batch batch = gather_batch(client.data, order, begin, end);
      ForwardResult fr = forward_loss_grad(w, batch);
      double step_loss = fr.loss;

      if (backdoor) {
        const Batch trig = gather_triggered(client.data, order, begin, end, *client.backdoor,
                                            poisoned);
        if (trig.inputs.rows > 0) {
          const ForwardResult bf = forward_loss_grad(w, trig);
          // scale by the poisoned share of the batch so the term matches
          // varpi * mean-over-batch of the triggered loss
          const double share = static_cast<double>(trig.inputs.rows) / batch.inputs.rows;
          const double weight = client.backdoor->varpi * share;
          Vec g = param_vector(fr.grads);
          axpy(weight, param_vector(bf.grads), g);
          fr.grads = unflatten(g, w.dims);
          step_loss += weight * bf.loss;
        }
      }
      if (prox && strategy.prox_mu != 0.0) {
        Vec g = param_vector(fr.grads);
        const Vec w_flat = param_vector(w);
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += strategy.prox_mu * (w_flat[i] - global_flat[i]);
        }
        fr.grads = unflatten(g, w.dims);
      }
      if (scaffold) {
        Vec g = param_vector(fr.grads);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += server_variate[i] - c_i[i];
        fr.grads = unflatten(g, w.dims);
      }

      sgd_step(w, fr.grads, schedule.lr, schedule.momentum, schedule.weight_decay, momentum);
      epoch_loss += step_loss;
      ++batches;
      ++steps;
    }
    if (batches > 0) last_epoch_loss = epoch_loss / batches;
  }

  if (!w.all_finite()) {
    std::ostringstream os;
    os << "local_train: non-finite parameters on client " << client.id;
    throw NumericError(os.str());
  }

  ClientUpdate up;
  up.delta = vsub(param_vector(w), global_flat);
  up.sample_count = static_cast<long>(n);
  up.train_loss = last_epoch_loss;
  up.role = client.role;
  if (scaffold && steps > 0) {
    // option II variate refresh: c_i+ = c_i - c + (w_global - w_i) / (K * lr)
    Vec c_new(c_i.size());
    const double inv = 1.0 / (static_cast<double>(steps) * schedule.lr);
    for (std::size_t i = 0; i < c_i.size(); ++i) {
      c_new[i] = c_i[i] - server_variate[i] - up.delta[i] * inv;
    }
    up.variate_delta = vsub(c_new, c_i);
  }
  return up;
}

Vec leave_one_out(const Vec& aggregated, const Vec& local_model, double alpha_i) {
  if (alpha_i >= 1.0) throw ConfigError("leave_one_out: alpha_i must be < 1");
  if (aggregated.size() != local_model.size()) throw ConfigError("leave_one_out: length mismatch");
  Vec out(aggregated.size());
  const double denom = 1.0 - alpha_i;
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = (aggregated[k] - alpha_i * local_model[k]) / denom;
  }
  return out;
}

Vec aggregation_weights(const std::vector<ClientState>& clients, WeightMode mode) {
  Vec alpha(clients.size(), 0.0);
  if (mode == WeightMode::kByClients) {
    std::fill(alpha.begin(), alpha.end(), 1.0 / clients.size());
    return alpha;
  }
  double total = 0.0;
  for (const ClientState& c : clients) total += static_cast<double>(c.data.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    alpha[i] = static_cast<double>(clients[i].data.size()) / total;
  }
  return alpha;
}

void apply_model_attack(std::vector<ClientUpdate>& updates, const std::vector<ClientRole>& roles,
                        const AdversarySetup& adversary, int round) {
  const ByzantineAttackConfig& cfg = adversary.config;
  if (cfg.kind == ByzantineKind::kNone) return;

  std::vector<int> malicious;
  std::vector<Vec> benign;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    if (roles[i] == ClientRole::kByzantine) {
      malicious.push_back(static_cast<int>(i));
    } else {
      benign.push_back(updates[i].delta);
    }
  }
  if (malicious.empty()) return;
  // the statistics-based attacks are undefined without at least two benign
  // updates (e.g. coalition replays of mostly-malicious subsets); leave the
  // honestly computed updates in place
  if (benign.size() < 2 && cfg.kind != ByzantineKind::kRandomNoise) return;

  switch (cfg.kind) {
    case ByzantineKind::kRandomNoise: {
      for (int i : malicious) {
        Rng rng = Rng::derive(adversary.seed, static_cast<std::uint64_t>(round),
                              static_cast<std::uint64_t>(i));
        updates[i].delta = attack_random_noise(updates[i].delta, rng, cfg.noise_scale);
      }
      break;
    }
    case ByzantineKind::kLie: {
      const double z = cfg.lie_z.value_or(
          lie_default_z(adversary.num_clients, static_cast<int>(malicious.size())));
      const Vec forged = attack_lie(benign, z);
      for (int i : malicious) updates[i].delta = forged;
      break;
    }
    case ByzantineKind::kMinMax: {
      const Vec forged = attack_min_max(benign, cfg).update;
      assert(min_max_feasible(benign, forged));
      assert(all_finite(forged));
      for (int i : malicious) updates[i].delta = forged;
      break;
    }
    case ByzantineKind::kMinSum: {
      const Vec forged = attack_min_sum(benign, cfg).update;
      assert(min_sum_feasible(benign, forged));
      assert(all_finite(forged));
      for (int i : malicious) updates[i].delta = forged;
      break;
    }
    case ByzantineKind::kNone:
      break;
  }
}

FederationEngine::FederationEngine(ModelParams initial, std::vector<ClientState> clients,
                                   Options options)
    : options_(std::move(options)),
      params_(std::move(initial)),
      clients_(std::move(clients)),
      aggregator_(options_.aggregator) {
  if (clients_.empty()) throw ConfigError("federation: needs at least 1 client");
  validate_aggregator(options_.aggregator, static_cast<int>(clients_.size()));
  if (options_.strategy.kind == StrategyKind::kScaffold) {
    server_variate_.assign(params_.param_count(), 0.0);
    for (ClientState& c : clients_) c.control_variate.assign(params_.param_count(), 0.0);
  }
  if (options_.aggregator.kind == AggregatorKind::kFlTrust && !options_.fltrust_root) {
    throw ConfigError("fltrust: root dataset required");
  }
}

RoundRecord FederationEngine::run_round() {
  const int m = static_cast<int>(clients_.size());
  RoundRecord rec;
  rec.round = round_;

  // full participation unless the config dials it down
  rec.participants.resize(m);
  std::iota(rec.participants.begin(), rec.participants.end(), 0);
  if (options_.participation < 1.0) {
    const int k = std::max(1, static_cast<int>(std::ceil(options_.participation * m)));
    Rng draw = Rng::derive(options_.training_seed, 0x9A37u, static_cast<std::uint64_t>(round_));
    rec.participants = draw.sample_without_replacement(m, k);
    std::sort(rec.participants.begin(), rec.participants.end());
  }
  const int active = static_cast<int>(rec.participants.size());

  rec.alpha.assign(active, 0.0);
  if (options_.weight_mode == WeightMode::kByClients) {
    std::fill(rec.alpha.begin(), rec.alpha.end(), 1.0 / active);
  } else {
    double total = 0.0;
    for (int idx : rec.participants) total += static_cast<double>(clients_[idx].data.size());
    for (int i = 0; i < active; ++i) {
      rec.alpha[i] = static_cast<double>(clients_[rec.participants[i]].data.size()) / total;
    }
  }

  rec.updates.resize(active);
  try {
    parallel_for(static_cast<std::size_t>(active), options_.threads, [&](std::size_t i) {
      const ClientState& client = clients_[rec.participants[i]];
      Rng stream = Rng::derive(options_.training_seed, static_cast<std::uint64_t>(round_),
                               static_cast<std::uint64_t>(client.id));
      rec.updates[i] =
          local_train(params_, client, options_.schedule, options_.strategy, server_variate_,
                      stream);
    });
  } catch (const NumericError& e) {
    std::ostringstream os;
    os << "round " << round_ << ": " << e.what();
    throw NumericError(os.str());
  }

  std::vector<ClientRole> roles(active);
  for (int i = 0; i < active; ++i) roles[i] = clients_[rec.participants[i]].role;
  if (options_.adversary) apply_model_attack(rec.updates, roles, *options_.adversary, round_);

  double loss_sum = 0.0;
  Vec losses(active);
  std::vector<Vec> deltas(active);
  for (int i = 0; i < active; ++i) {
    deltas[i] = rec.updates[i].delta;
    losses[i] = rec.updates[i].train_loss;
    loss_sum += losses[i];
  }
  rec.mean_train_loss = loss_sum / active;

  ServerContext ctx;
  ctx.round = round_;
  ctx.final_round = (round_ + 1 >= options_.schedule.rounds);
  Rng server_rng = Rng::derive(options_.training_seed, 0x5E4Fu, static_cast<std::uint64_t>(round_));
  ctx.rng = &server_rng;
  ctx.client_losses = &losses;

  Vec g0;
  if (options_.aggregator.kind == AggregatorKind::kFlTrust) {
    ClientState root;
    root.id = -1;
    root.data = *options_.fltrust_root;
    TrainingSchedule pub = options_.schedule;
    pub.local_epochs = options_.aggregator.fltrust_public_epochs;
    Rng stream = Rng::derive(options_.training_seed, static_cast<std::uint64_t>(round_),
                             0xF17Au);
    const StrategyConfig plain;  // the server trains plain FedAvg-style
    g0 = local_train(params_, root, pub, plain, {}, stream).delta;
    ctx.server_update = &g0;
  }

  rec.outcome = aggregator_.aggregate(deltas, rec.alpha, ctx);
  if (!all_finite(rec.outcome.delta)) {
    std::ostringstream os;
    os << "round " << round_ << ": aggregator produced a non-finite update";
    throw NumericError(os.str());
  }

  Vec stepped = server_opt_step(param_vector(params_), rec.outcome.delta, options_.server_lr,
                                options_.server_momentum, server_opt_);
  stepped = aggregator_.post_process_params(stepped, ctx);
  if (!all_finite(stepped)) {
    std::ostringstream os;
    os << "round " << round_ << ": non-finite parameters after server step";
    throw NumericError(os.str());
  }
  params_ = unflatten(stepped, params_.dims);

  if (options_.strategy.kind == StrategyKind::kScaffold) {
    Vec shift(server_variate_.size(), 0.0);
    for (int i = 0; i < active; ++i) {
      if (rec.updates[i].variate_delta.empty()) continue;
      axpy(1.0, rec.updates[i].variate_delta, clients_[rec.participants[i]].control_variate);
      axpy(1.0 / m, rec.updates[i].variate_delta, shift);
    }
    axpy(1.0, shift, server_variate_);
  }

  ++round_;
  return rec;
}

std::vector<RoundRecord> FederationEngine::run(int rounds) {
  std::vector<RoundRecord> records;
  records.reserve(rounds);
  for (int r = 0; r < rounds; ++r) records.push_back(run_round());
  return records;
}

}  // namespace fedbench
