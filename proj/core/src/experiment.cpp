#include "fedbench/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fedbench {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

void check_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
}

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) fail(path + "." + key, "unknown key");
  }
}

double get_number(const json& obj, const std::string& path, const std::string& key, double def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  return v.get<double>();
}

int get_int(const json& obj, const std::string& path, const std::string& key, int def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
  return v.get<int>();
}

bool get_bool(const json& obj, const std::string& path, const std::string& key, bool def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_boolean()) fail(path + "." + key, "expected a boolean");
  return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& path, const std::string& key,
                       const std::string& def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_string()) fail(path + "." + key, "expected a string");
  return v.get<std::string>();
}

void require_range(double v, double lo, double hi, const std::string& path, bool lo_open = false,
                   bool hi_open = false) {
  const bool ok = (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
  if (!ok) {
    std::ostringstream os;
    os << "value " << v << " outside " << (lo_open ? "(" : "[") << lo << ", " << hi
       << (hi_open ? ")" : "]");
    fail(path, os.str());
  }
}

SeedSet parse_seeds(const json& root) {
  SeedSet seeds;  // documented defaults
  if (!root.contains("seeds")) return seeds;
  const json& j = root.at("seeds");
  check_object(j, "seeds");
  check_keys(j, "seeds", {"data", "init", "training", "attack"});
  for (const char* name : {"data", "init", "training", "attack"}) {
    if (!j.contains(name)) fail(std::string("seeds.") + name, "missing seed");
    if (!j.at(name).is_number_unsigned() && !j.at(name).is_number_integer()) {
      fail(std::string("seeds.") + name, "expected an unsigned integer");
    }
  }
  seeds.data = j.at("data").get<std::uint64_t>();
  seeds.init = j.at("init").get<std::uint64_t>();
  seeds.training = j.at("training").get<std::uint64_t>();
  seeds.attack = j.at("attack").get<std::uint64_t>();
  return seeds;
}

DataConfig parse_data(const json& root) {
  if (!root.contains("data")) fail("data", "section is required");
  const json& j = root.at("data");
  check_object(j, "data");
  check_keys(j, "data", {"generator", "partition", "domains", "held_out"});

  DataConfig d;
  if (j.contains("generator")) {
    const json& g = j.at("generator");
    check_object(g, "data.generator");
    check_keys(g, "data.generator",
               {"classes", "dim", "pad_dims", "per_class_train", "per_class_test", "sigma",
                "radius"});
    d.generator.classes = get_int(g, "data.generator", "classes", d.generator.classes);
    d.generator.dim = get_int(g, "data.generator", "dim", d.generator.dim);
    d.generator.pad_dims = get_int(g, "data.generator", "pad_dims", d.generator.pad_dims);
    d.generator.per_class_train =
        get_int(g, "data.generator", "per_class_train", d.generator.per_class_train);
    d.generator.per_class_test =
        get_int(g, "data.generator", "per_class_test", d.generator.per_class_test);
    d.generator.sigma = get_number(g, "data.generator", "sigma", d.generator.sigma);
    d.generator.radius = get_number(g, "data.generator", "radius", d.generator.radius);
    if (d.generator.classes < 2) fail("data.generator.classes", "need at least 2 classes");
    if (d.generator.dim < 1) fail("data.generator.dim", "need dim >= 1");
    if (d.generator.pad_dims < 0) fail("data.generator.pad_dims", "need >= 0");
    if (d.generator.per_class_train < 1) fail("data.generator.per_class_train", "need >= 1");
    if (d.generator.per_class_test < 1) fail("data.generator.per_class_test", "need >= 1");
    if (d.generator.sigma <= 0.0) fail("data.generator.sigma", "need sigma > 0");
  }
  if (j.contains("partition")) {
    const json& p = j.at("partition");
    check_object(p, "data.partition");
    check_keys(p, "data.partition", {"kind", "beta"});
    const std::string kind = get_string(p, "data.partition", "kind", "dirichlet");
    if (kind != "dirichlet") fail("data.partition.kind", "unknown partition kind '" + kind + "'");
    d.dirichlet_beta = get_number(p, "data.partition", "beta", d.dirichlet_beta);
    if (d.dirichlet_beta <= 0.0) fail("data.partition.beta", "need beta > 0");
  }
  if (j.contains("domains")) {
    const json& ds = j.at("domains");
    if (!ds.is_array() || ds.size() < 2) fail("data.domains", "expected an array of >= 2 domains");
    d.domain_mode = true;
    int idx = 0;
    for (const json& dom : ds) {
      const std::string path = "data.domains[" + std::to_string(idx) + "]";
      check_object(dom, path);
      check_keys(dom, path, {"name", "rotate_deg", "scale", "shift", "noise"});
      DomainTransform t;
      t.name = get_string(dom, path, "name", "d" + std::to_string(idx));
      t.rotate_deg = get_number(dom, path, "rotate_deg", 0.0);
      t.scale = get_number(dom, path, "scale", 1.0);
      if (t.scale == 0.0) fail(path + ".scale", "scale must be non-zero (invertible map)");
      t.noise = get_number(dom, path, "noise", 0.0);
      if (t.noise < 0.0) fail(path + ".noise", "noise must be >= 0");
      if (dom.contains("shift")) {
        const json& sh = dom.at("shift");
        if (sh.is_number()) {
          t.shift.assign(d.generator.dim, sh.get<double>());
        } else if (sh.is_array()) {
          t.shift = sh.get<Vec>();
          if (static_cast<int>(t.shift.size()) != d.generator.dim) {
            fail(path + ".shift", "length must equal data.generator.dim");
          }
        } else {
          fail(path + ".shift", "expected number or array");
        }
      }
      d.domains.push_back(std::move(t));
      ++idx;
    }
    std::set<std::string> names;
    for (const DomainTransform& t : d.domains) {
      if (!names.insert(t.name).second) fail("data.domains", "duplicate domain name '" + t.name + "'");
    }
  }
  if (j.contains("held_out")) {
    if (!d.domain_mode) fail("data.held_out", "requires data.domains");
    if (!j.at("held_out").is_null()) {
      d.held_out = get_string(j, "data", "held_out", "");
      bool known = false;
      for (const DomainTransform& t : d.domains) known |= (t.name == *d.held_out);
      if (!known) fail("data.held_out", "unknown domain '" + *d.held_out + "'");
    }
  }
  return d;
}

AdversaryConfig parse_adversary(const json& root, const DataConfig& data) {
  AdversaryConfig a;
  if (!root.contains("adversary")) return a;
  const json& j = root.at("adversary");
  check_object(j, "adversary");
  check_keys(j, "adversary",
             {"kind", "ratio", "noise_scale", "lie_z", "perturbation", "gamma_max", "gamma_tol",
              "flip_epsilon", "backdoor"});
  const std::string kind = get_string(j, "adversary", "kind", "none");
  if (kind == "none") {
    a.kind = AdversaryConfig::Kind::kNone;
  } else if (kind == "random_noise") {
    a.kind = AdversaryConfig::Kind::kRandomNoise;
    a.byzantine.kind = ByzantineKind::kRandomNoise;
  } else if (kind == "lie") {
    a.kind = AdversaryConfig::Kind::kLie;
    a.byzantine.kind = ByzantineKind::kLie;
  } else if (kind == "min_max") {
    a.kind = AdversaryConfig::Kind::kMinMax;
    a.byzantine.kind = ByzantineKind::kMinMax;
  } else if (kind == "min_sum") {
    a.kind = AdversaryConfig::Kind::kMinSum;
    a.byzantine.kind = ByzantineKind::kMinSum;
  } else if (kind == "sym_flip") {
    a.kind = AdversaryConfig::Kind::kSymFlip;
  } else if (kind == "pair_flip") {
    a.kind = AdversaryConfig::Kind::kPairFlip;
  } else if (kind == "backdoor") {
    a.kind = AdversaryConfig::Kind::kBackdoor;
  } else {
    fail("adversary.kind", "unknown attack kind '" + kind + "'");
  }
  a.ratio = get_number(j, "adversary", "ratio", a.kind == AdversaryConfig::Kind::kNone ? 0.0 : 0.2);
  require_range(a.ratio, 0.0, 1.0, "adversary.ratio", false, true);
  a.byzantine.noise_scale = get_number(j, "adversary", "noise_scale", 1.0);
  if (j.contains("lie_z") && !j.at("lie_z").is_null()) {
    a.byzantine.lie_z = get_number(j, "adversary", "lie_z", 0.0);
  }
  const std::string pert = get_string(j, "adversary", "perturbation", "neg_unit_mean");
  if (pert == "neg_unit_mean") {
    a.byzantine.perturbation = PerturbationKind::kNegUnitMean;
  } else if (pert == "neg_sign") {
    a.byzantine.perturbation = PerturbationKind::kNegSign;
  } else if (pert == "unit_std") {
    a.byzantine.perturbation = PerturbationKind::kUnitStd;
  } else {
    fail("adversary.perturbation", "unknown perturbation '" + pert + "'");
  }
  a.byzantine.gamma_max = get_number(j, "adversary", "gamma_max", 1e6);
  a.byzantine.gamma_tol = get_number(j, "adversary", "gamma_tol", 1e-5);
  if (a.byzantine.gamma_tol <= 0.0) fail("adversary.gamma_tol", "must be > 0");
  a.flip_epsilon = get_number(j, "adversary", "flip_epsilon", 0.5);
  require_range(a.flip_epsilon, 0.0, 1.0, "adversary.flip_epsilon", false, true);

  if (j.contains("backdoor")) {
    const json& b = j.at("backdoor");
    check_object(b, "adversary.backdoor");
    check_keys(b, "adversary.backdoor",
               {"mask_coords", "pattern", "target_label", "varpi", "poison_fraction"});
    if (!b.contains("mask_coords") || !b.at("mask_coords").is_array()) {
      fail("adversary.backdoor.mask_coords", "expected an array of feature indices");
    }
    a.backdoor_mask_coords = b.at("mask_coords").get<std::vector<int>>();
    for (int c : a.backdoor_mask_coords) {
      if (c < 0 || c >= data.generator.total_dim()) {
        fail("adversary.backdoor.mask_coords", "index outside feature dimension");
      }
    }
    if (!b.contains("pattern") || !b.at("pattern").is_array()) {
      fail("adversary.backdoor.pattern", "expected an array of values");
    }
    a.backdoor_pattern = b.at("pattern").get<Vec>();
    if (a.backdoor_pattern.size() != a.backdoor_mask_coords.size()) {
      fail("adversary.backdoor.pattern", "length must match mask_coords");
    }
    a.backdoor_target = get_int(b, "adversary.backdoor", "target_label", 0);
    if (a.backdoor_target < 0 || a.backdoor_target >= data.generator.classes) {
      fail("adversary.backdoor.target_label", "outside class range");
    }
    a.backdoor_varpi = get_number(b, "adversary.backdoor", "varpi", 1.0);
    if (a.backdoor_varpi < 0.0) fail("adversary.backdoor.varpi", "must be >= 0");
    a.backdoor_poison_fraction = get_number(b, "adversary.backdoor", "poison_fraction", 0.5);
    require_range(a.backdoor_poison_fraction, 0.0, 1.0, "adversary.backdoor.poison_fraction");
  } else if (a.kind == AdversaryConfig::Kind::kBackdoor) {
    fail("adversary.backdoor", "required for kind 'backdoor'");
  }
  return a;
}

const char* aggregator_name(AggregatorKind k) {
  switch (k) {
    case AggregatorKind::kMean: return "mean";
    case AggregatorKind::kMedian: return "median";
    case AggregatorKind::kTrimmedMean: return "trimmed_mean";
    case AggregatorKind::kMultiKrum: return "multi_krum";
    case AggregatorKind::kBulyan: return "bulyan";
    case AggregatorKind::kFoolsGold: return "foolsgold";
    case AggregatorKind::kDnc: return "dnc";
    case AggregatorKind::kRfa: return "rfa";
    case AggregatorKind::kFlTrust: return "fltrust";
    case AggregatorKind::kRlr: return "rlr";
    case AggregatorKind::kCrfl: return "crfl";
    case AggregatorKind::kAfl: return "afl";
  }
  return "mean";
}

AggregatorKind aggregator_from(const std::string& name) {
  static const std::map<std::string, AggregatorKind> table = {
      {"mean", AggregatorKind::kMean},           {"median", AggregatorKind::kMedian},
      {"trimmed_mean", AggregatorKind::kTrimmedMean}, {"multi_krum", AggregatorKind::kMultiKrum},
      {"bulyan", AggregatorKind::kBulyan},       {"foolsgold", AggregatorKind::kFoolsGold},
      {"dnc", AggregatorKind::kDnc},             {"rfa", AggregatorKind::kRfa},
      {"fltrust", AggregatorKind::kFlTrust},     {"rlr", AggregatorKind::kRlr},
      {"crfl", AggregatorKind::kCrfl},           {"afl", AggregatorKind::kAfl}};
  const auto it = table.find(name);
  if (it == table.end()) fail("aggregator.kind", "unknown aggregator '" + name + "'");
  return it->second;
}

}  // namespace

ExperimentConfig parse_config_json(const json& root) {
  check_object(root, "config");
  check_keys(root, "config",
             {"clients", "seeds", "data", "model", "schedule", "strategy", "weights", "server",
              "adversary", "aggregator", "metrics", "threads", "participation"});

  ExperimentConfig c;
  c.clients = get_int(root, "config", "clients", 10);
  if (c.clients < 1) fail("clients", "need at least 1 client");
  c.participation = get_number(root, "config", "participation", 1.0);
  require_range(c.participation, 0.0, 1.0, "participation", true, false);
  c.seeds = parse_seeds(root);
  c.data = parse_data(root);

  if (root.contains("model")) {
    const json& m = root.at("model");
    check_object(m, "model");
    check_keys(m, "model", {"kind", "hidden"});
    const std::string kind = get_string(m, "model", "kind", "logistic");
    if (kind == "logistic") {
      c.model_hidden = 0;
      if (get_int(m, "model", "hidden", 0) != 0) fail("model.hidden", "logistic model has no hidden layer");
    } else if (kind == "mlp") {
      c.model_hidden = get_int(m, "model", "hidden", 16);
      if (c.model_hidden < 1) fail("model.hidden", "mlp needs hidden >= 1");
    } else {
      fail("model.kind", "unknown model kind '" + kind + "'");
    }
  }

  if (root.contains("schedule")) {
    const json& s = root.at("schedule");
    check_object(s, "schedule");
    check_keys(s, "schedule",
               {"rounds", "local_epochs", "batch_size", "lr", "momentum", "weight_decay"});
    c.schedule.rounds = get_int(s, "schedule", "rounds", c.schedule.rounds);
    c.schedule.local_epochs = get_int(s, "schedule", "local_epochs", c.schedule.local_epochs);
    c.schedule.batch_size = get_int(s, "schedule", "batch_size", c.schedule.batch_size);
    c.schedule.lr = get_number(s, "schedule", "lr", c.schedule.lr);
    c.schedule.momentum = get_number(s, "schedule", "momentum", c.schedule.momentum);
    c.schedule.weight_decay = get_number(s, "schedule", "weight_decay", c.schedule.weight_decay);
    if (c.schedule.rounds < 1) fail("schedule.rounds", "need >= 1");
    if (c.schedule.local_epochs < 1) fail("schedule.local_epochs", "need >= 1");
    if (c.schedule.batch_size < 1) fail("schedule.batch_size", "need >= 1");
    if (c.schedule.lr <= 0.0) fail("schedule.lr", "need lr > 0");
    require_range(c.schedule.momentum, 0.0, 1.0, "schedule.momentum", false, true);
    if (c.schedule.weight_decay < 0.0) fail("schedule.weight_decay", "need >= 0");
  }

  if (root.contains("strategy")) {
    const json& s = root.at("strategy");
    check_object(s, "strategy");
    check_keys(s, "strategy", {"kind", "prox_mu", "scaffold_global_lr"});
    c.strategy_name = get_string(s, "strategy", "kind", "fedavg");
    c.strategy.prox_mu = get_number(s, "strategy", "prox_mu", 0.01);
    c.strategy.scaffold_global_lr = get_number(s, "strategy", "scaffold_global_lr", 0.25);
    if (c.strategy.prox_mu < 0.0) fail("strategy.prox_mu", "need >= 0");
    if (c.strategy.scaffold_global_lr <= 0.0) fail("strategy.scaffold_global_lr", "need > 0");
  }
  if (c.strategy_name == "fedavg" || c.strategy_name == "fedopt") {
    c.strategy.kind = StrategyKind::kFedAvg;
  } else if (c.strategy_name == "fedprox") {
    c.strategy.kind = StrategyKind::kFedProx;
  } else if (c.strategy_name == "scaffold") {
    c.strategy.kind = StrategyKind::kScaffold;
  } else {
    fail("strategy.kind", "unknown strategy '" + c.strategy_name + "'");
  }

  const std::string weights = get_string(root, "config", "weights", "by_samples");
  if (weights == "by_samples") {
    c.weight_mode = WeightMode::kBySamples;
  } else if (weights == "by_clients") {
    c.weight_mode = WeightMode::kByClients;
  } else {
    fail("weights", "expected 'by_samples' or 'by_clients'");
  }

  // server step defaults depend on the strategy family
  if (c.strategy_name == "fedopt") {
    c.server_lr = 0.5;
    c.server_momentum = 0.9;
  } else if (c.strategy_name == "scaffold") {
    c.server_lr = c.strategy.scaffold_global_lr;
  }
  if (root.contains("server")) {
    const json& s = root.at("server");
    check_object(s, "server");
    check_keys(s, "server", {"lr", "momentum"});
    c.server_lr = get_number(s, "server", "lr", c.server_lr);
    c.server_momentum = get_number(s, "server", "momentum", c.server_momentum);
    if (c.server_lr <= 0.0) fail("server.lr", "need > 0");
    require_range(c.server_momentum, 0.0, 1.0, "server.momentum", false, true);
  }

  c.adversary = parse_adversary(root, c.data);
  const int attackers = static_cast<int>(std::floor(c.adversary.ratio * c.clients));

  if (!root.contains("aggregator")) fail("aggregator", "section is required");
  {
    const json& a = root.at("aggregator");
    check_object(a, "aggregator");
    check_keys(a, "aggregator",
               {"kind", "expected_malicious", "multi_krum_k", "trim_fraction", "dnc_sub_dim",
                "dnc_filter_ratio", "dnc_iterations", "rfa_iterations", "rfa_smoothing",
                "fltrust_public_epochs", "fltrust_root_per_class", "rlr_threshold",
                "rlr_server_lr", "crfl_norm_bound", "crfl_noise", "afl_step",
                "foolsgold_epsilon"});
    c.aggregator.kind = aggregator_from(get_string(a, "aggregator", "kind", "mean"));
    c.aggregator.expected_malicious = get_int(a, "aggregator", "expected_malicious", attackers);
    if (c.aggregator.expected_malicious < 0) fail("aggregator.expected_malicious", "need >= 0");
    c.aggregator.multi_krum_k = get_int(a, "aggregator", "multi_krum_k", 5);
    c.aggregator.trim_fraction = get_number(a, "aggregator", "trim_fraction", 0.1);
    c.aggregator.dnc_sub_dim = get_int(a, "aggregator", "dnc_sub_dim", 1000);
    c.aggregator.dnc_filter_ratio = get_number(a, "aggregator", "dnc_filter_ratio", 1.0);
    c.aggregator.dnc_iterations = get_int(a, "aggregator", "dnc_iterations", 1);
    c.aggregator.rfa_iterations = get_int(a, "aggregator", "rfa_iterations", 3);
    c.aggregator.rfa_smoothing = get_number(a, "aggregator", "rfa_smoothing", 1e-6);
    c.aggregator.fltrust_public_epochs = get_int(a, "aggregator", "fltrust_public_epochs", 20);
    c.fltrust_root_per_class = get_int(a, "aggregator", "fltrust_root_per_class", 25);
    c.aggregator.rlr_threshold = get_number(a, "aggregator", "rlr_threshold", 4.0);
    c.aggregator.rlr_server_lr = get_number(a, "aggregator", "rlr_server_lr", 1.0);
    c.aggregator.crfl_norm_bound = get_number(a, "aggregator", "crfl_norm_bound", 15.0);
    c.aggregator.crfl_noise = get_number(a, "aggregator", "crfl_noise", 0.01);
    c.aggregator.afl_step = get_number(a, "aggregator", "afl_step", 0.01);
    c.aggregator.foolsgold_epsilon = get_number(a, "aggregator", "foolsgold_epsilon", 1e-5);
    if (c.aggregator.dnc_iterations < 1) fail("aggregator.dnc_iterations", "need >= 1");
    if (c.aggregator.dnc_sub_dim < 1) fail("aggregator.dnc_sub_dim", "need >= 1");
    if (c.fltrust_root_per_class < 1) fail("aggregator.fltrust_root_per_class", "need >= 1");
  }

  // Table-style precondition: selection/statistics defenses assume a benign
  // majority (evil ratio < 50%)
  switch (c.aggregator.kind) {
    case AggregatorKind::kMultiKrum:
    case AggregatorKind::kBulyan:
    case AggregatorKind::kTrimmedMean:
    case AggregatorKind::kMedian:
      if (c.adversary.ratio >= 0.5) {
        fail("adversary.ratio", std::string("aggregator '") + aggregator_name(c.aggregator.kind) +
                                    "' requires evil ratio < 50%");
      }
      break;
    default:
      break;
  }
  try {
    validate_aggregator(c.aggregator, c.clients);
  } catch (const ConfigError& e) {
    fail("aggregator", e.what());
  }

  if (root.contains("metrics")) {
    const json& m = root.at("metrics");
    check_object(m, "metrics");
    check_keys(m, "metrics",
               {"attack_impact", "attack_success_rate", "shapley", "shapley_rho",
                "shapley_max_exact", "contribution_match"});
    const bool attacked = c.adversary.kind != AdversaryConfig::Kind::kNone && attackers > 0;
    c.metrics.attack_impact = get_bool(m, "metrics", "attack_impact", attacked);
    c.metrics.attack_success_rate = get_bool(
        m, "metrics", "attack_success_rate", c.adversary.kind == AdversaryConfig::Kind::kBackdoor);
    const std::string shap = get_string(m, "metrics", "shapley", "none");
    if (shap == "none") {
      c.metrics.shapley = MetricsConfig::ShapleyMode::kNone;
    } else if (shap == "retrain_exact") {
      c.metrics.shapley = MetricsConfig::ShapleyMode::kRetrainExact;
    } else if (shap == "oneshot_aggregate") {
      c.metrics.shapley = MetricsConfig::ShapleyMode::kOneshotAggregate;
    } else {
      fail("metrics.shapley", "expected none|retrain_exact|oneshot_aggregate");
    }
    c.metrics.shapley_rho = get_number(m, "metrics", "shapley_rho", 1.0);
    if (c.metrics.shapley_rho <= 0.0) fail("metrics.shapley_rho", "need > 0");
    c.metrics.shapley_max_exact = get_int(m, "metrics", "shapley_max_exact", 6);
    c.metrics.contribution_match = get_bool(m, "metrics", "contribution_match", false);
  } else {
    const bool attacked = c.adversary.kind != AdversaryConfig::Kind::kNone && attackers > 0;
    c.metrics.attack_impact = attacked;
    c.metrics.attack_success_rate = c.adversary.kind == AdversaryConfig::Kind::kBackdoor;
  }
  if (c.metrics.shapley == MetricsConfig::ShapleyMode::kRetrainExact &&
      c.clients > c.metrics.shapley_max_exact) {
    fail("metrics.shapley", "retrain_exact supports at most shapley_max_exact (" +
                                std::to_string(c.metrics.shapley_max_exact) +
                                ") clients; use oneshot_aggregate");
  }
  if (c.metrics.attack_success_rate && c.adversary.kind != AdversaryConfig::Kind::kBackdoor) {
    fail("metrics.attack_success_rate", "requires a backdoor adversary");
  }
  if (c.participation < 1.0 &&
      (c.metrics.shapley != MetricsConfig::ShapleyMode::kNone || c.metrics.contribution_match)) {
    fail("participation",
         "shapley and contribution-match metrics need the full final-round client set");
  }

  c.threads = get_int(root, "config", "threads", 1);
  if (c.threads < 1) fail("threads", "need >= 1");

  if (!c.data.domain_mode) {
    const long total = static_cast<long>(c.data.generator.classes) * c.data.generator.per_class_train;
    if (total < c.clients) fail("clients", "more clients than training samples");
  }
  return c;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config_json(j);
}

ordered_json ExperimentConfig::echo() const {
  ordered_json j;
  j["clients"] = clients;
  j["seeds"] = {{"data", seeds.data}, {"init", seeds.init}, {"training", seeds.training},
                {"attack", seeds.attack}};
  ordered_json gen{{"classes", data.generator.classes},
                   {"dim", data.generator.dim},
                   {"pad_dims", data.generator.pad_dims},
                   {"per_class_train", data.generator.per_class_train},
                   {"per_class_test", data.generator.per_class_test},
                   {"sigma", data.generator.sigma},
                   {"radius", data.generator.radius}};
  j["data"] = {{"generator", gen},
               {"partition", ordered_json{{"kind", "dirichlet"}, {"beta", data.dirichlet_beta}}}};
  if (data.domain_mode) {
    ordered_json doms = ordered_json::array();
    for (const DomainTransform& t : data.domains) {
      ordered_json d{{"name", t.name},
                     {"rotate_deg", t.rotate_deg},
                     {"scale", t.scale},
                     {"noise", t.noise}};
      if (!t.shift.empty()) d["shift"] = t.shift;
      doms.push_back(std::move(d));
    }
    j["data"]["domains"] = std::move(doms);
    j["data"]["held_out"] = data.held_out ? ordered_json(*data.held_out) : ordered_json(nullptr);
  }
  j["model"] = {{"kind", model_hidden > 0 ? "mlp" : "logistic"}, {"hidden", model_hidden}};
  j["schedule"] = {{"rounds", schedule.rounds},
                   {"local_epochs", schedule.local_epochs},
                   {"batch_size", schedule.batch_size},
                   {"lr", schedule.lr},
                   {"momentum", schedule.momentum},
                   {"weight_decay", schedule.weight_decay}};
  j["strategy"] = {{"kind", strategy_name},
                   {"prox_mu", strategy.prox_mu},
                   {"scaffold_global_lr", strategy.scaffold_global_lr}};
  j["weights"] = weight_mode == WeightMode::kBySamples ? "by_samples" : "by_clients";
  j["server"] = {{"lr", server_lr}, {"momentum", server_momentum}};

  ordered_json adv;
  const char* akind = "none";
  switch (adversary.kind) {
    case AdversaryConfig::Kind::kNone: akind = "none"; break;
    case AdversaryConfig::Kind::kRandomNoise: akind = "random_noise"; break;
    case AdversaryConfig::Kind::kLie: akind = "lie"; break;
    case AdversaryConfig::Kind::kMinMax: akind = "min_max"; break;
    case AdversaryConfig::Kind::kMinSum: akind = "min_sum"; break;
    case AdversaryConfig::Kind::kSymFlip: akind = "sym_flip"; break;
    case AdversaryConfig::Kind::kPairFlip: akind = "pair_flip"; break;
    case AdversaryConfig::Kind::kBackdoor: akind = "backdoor"; break;
  }
  adv["kind"] = akind;
  adv["ratio"] = adversary.ratio;
  adv["noise_scale"] = adversary.byzantine.noise_scale;
  adv["lie_z"] = adversary.byzantine.lie_z ? ordered_json(*adversary.byzantine.lie_z)
                                           : ordered_json(nullptr);
  switch (adversary.byzantine.perturbation) {
    case PerturbationKind::kNegUnitMean: adv["perturbation"] = "neg_unit_mean"; break;
    case PerturbationKind::kNegSign: adv["perturbation"] = "neg_sign"; break;
    case PerturbationKind::kUnitStd: adv["perturbation"] = "unit_std"; break;
  }
  adv["gamma_max"] = adversary.byzantine.gamma_max;
  adv["gamma_tol"] = adversary.byzantine.gamma_tol;
  adv["flip_epsilon"] = adversary.flip_epsilon;
  if (adversary.kind == AdversaryConfig::Kind::kBackdoor) {
    adv["backdoor"] = {{"mask_coords", adversary.backdoor_mask_coords},
                       {"pattern", adversary.backdoor_pattern},
                       {"target_label", adversary.backdoor_target},
                       {"varpi", adversary.backdoor_varpi},
                       {"poison_fraction", adversary.backdoor_poison_fraction}};
  }
  j["adversary"] = std::move(adv);

  j["aggregator"] = {{"kind", aggregator_name(aggregator.kind)},
                     {"expected_malicious", aggregator.expected_malicious},
                     {"multi_krum_k", aggregator.multi_krum_k},
                     {"trim_fraction", aggregator.trim_fraction},
                     {"dnc_sub_dim", aggregator.dnc_sub_dim},
                     {"dnc_filter_ratio", aggregator.dnc_filter_ratio},
                     {"dnc_iterations", aggregator.dnc_iterations},
                     {"rfa_iterations", aggregator.rfa_iterations},
                     {"rfa_smoothing", aggregator.rfa_smoothing},
                     {"fltrust_public_epochs", aggregator.fltrust_public_epochs},
                     {"fltrust_root_per_class", fltrust_root_per_class},
                     {"rlr_threshold", aggregator.rlr_threshold},
                     {"rlr_server_lr", aggregator.rlr_server_lr},
                     {"crfl_norm_bound", aggregator.crfl_norm_bound},
                     {"crfl_noise", aggregator.crfl_noise},
                     {"afl_step", aggregator.afl_step},
                     {"foolsgold_epsilon", aggregator.foolsgold_epsilon}};

  const char* shap = "none";
  if (metrics.shapley == MetricsConfig::ShapleyMode::kRetrainExact) shap = "retrain_exact";
  if (metrics.shapley == MetricsConfig::ShapleyMode::kOneshotAggregate) shap = "oneshot_aggregate";
  j["metrics"] = {{"attack_impact", metrics.attack_impact},
                  {"attack_success_rate", metrics.attack_success_rate},
                  {"shapley", shap},
                  {"shapley_rho", metrics.shapley_rho},
                  {"shapley_max_exact", metrics.shapley_max_exact},
                  {"contribution_match", metrics.contribution_match}};
  j["participation"] = participation;
  j["threads"] = threads;
  return j;
}

// ---- setup assembly ---------------------------------------------------------

ExperimentSetup build_setup(const ExperimentConfig& config) {
  ExperimentSetup setup;
  const BlobSpec& gen = config.data.generator;
  const auto centers = circle_centers(gen.classes, gen.dim, gen.radius);

  std::vector<Dataset> client_data;
  if (config.data.domain_mode) {
    DomainSuite suite = make_domain_suite(gen, config.data.domains, config.clients,
                                          config.data.held_out,
                                          Rng::derive(config.seeds.data, 3).next_u64());
    client_data = std::move(suite.clients);
    setup.suite.datasets = std::move(suite.tests);
    setup.suite.unseen = std::move(suite.unseen);
  } else {
    const Dataset train = make_blobs(gen.classes, gen.per_class_train, centers, gen.sigma,
                                     Rng::derive(config.seeds.data, 1).next_u64());
    const Dataset test = make_blobs(gen.classes, gen.per_class_test, centers, gen.sigma,
                                    Rng::derive(config.seeds.data, 2).next_u64());
    PartitionConfig part;
    part.num_clients = config.clients;
    part.beta = config.data.dirichlet_beta;
    part.seed = Rng::derive(config.seeds.data, 5).next_u64();
    client_data = partition_dirichlet(train, part);
    setup.suite.datasets.emplace_back("global", test);
  }
  if (gen.pad_dims > 0) {
    for (Dataset& d : client_data) d = pad_features(d, gen.pad_dims);
    for (auto& [name, d] : setup.suite.datasets) d = pad_features(d, gen.pad_dims);
    if (setup.suite.unseen) setup.suite.unseen = pad_features(*setup.suite.unseen, gen.pad_dims);
  }

  const int attackers = static_cast<int>(std::floor(config.adversary.ratio * config.clients));
  std::optional<BackdoorConfig> backdoor;
  if (config.adversary.kind == AdversaryConfig::Kind::kBackdoor) {
    BackdoorConfig bd;
    bd.mask.assign(gen.total_dim(), 0.0);
    bd.pattern.assign(gen.total_dim(), 0.0);
    for (std::size_t k = 0; k < config.adversary.backdoor_mask_coords.size(); ++k) {
      bd.mask[config.adversary.backdoor_mask_coords[k]] = 1.0;
      bd.pattern[config.adversary.backdoor_mask_coords[k]] = config.adversary.backdoor_pattern[k];
    }
    bd.target_label = config.adversary.backdoor_target;
    bd.varpi = config.adversary.backdoor_varpi;
    bd.poison_fraction = config.adversary.backdoor_poison_fraction;
    backdoor = bd;
  }

  setup.clients.resize(config.clients);
  for (int i = 0; i < config.clients; ++i) {
    ClientState& cs = setup.clients[i];
    cs.id = i;
    cs.data = std::move(client_data[i]);
    if (i >= attackers) continue;  // malicious identities: the lowest indices
    switch (config.adversary.kind) {
      case AdversaryConfig::Kind::kNone:
        break;
      case AdversaryConfig::Kind::kSymFlip:
      case AdversaryConfig::Kind::kPairFlip: {
        const FlipMode mode = config.adversary.kind == AdversaryConfig::Kind::kSymFlip
                                  ? FlipMode::kSymmetric
                                  : FlipMode::kPair;
        cs.data = flip_labels(cs.data, mode, config.adversary.flip_epsilon,
                              Rng::derive(config.seeds.attack, 10, i).next_u64());
        cs.role = ClientRole::kByzantine;
        break;
      }
      case AdversaryConfig::Kind::kBackdoor: {
        cs.role = ClientRole::kBackdoor;
        cs.backdoor = backdoor;
        // the backdoor term only uses samples whose clean label differs from
        // the target (mirrors the triggered-test-set construction; a sample
        // already labeled y~ teaches the trigger nothing)
        std::vector<std::size_t> eligible;
        for (std::size_t k = 0; k < cs.data.size(); ++k) {
          if (cs.data.samples[k].label != backdoor->target_label) eligible.push_back(k);
        }
        Rng rng = Rng::derive(config.seeds.attack, 20, i);
        const int count = static_cast<int>(
            std::floor(config.adversary.backdoor_poison_fraction * eligible.size()));
        for (int idx :
             rng.sample_without_replacement(static_cast<int>(eligible.size()), count)) {
          cs.poison_set.push_back(eligible[idx]);
        }
        std::sort(cs.poison_set.begin(), cs.poison_set.end());
        break;
      }
      default:
        cs.role = ClientRole::kByzantine;
        break;
    }
  }

  setup.backdoor = backdoor;
  if (config.metrics.attack_success_rate && backdoor) {
    setup.suite.triggered = build_triggered_set(setup.suite, *backdoor);
    setup.suite.trigger_target = backdoor->target_label;
  }

  ModelDims dims{gen.total_dim(), config.model_hidden, gen.classes};
  Rng init_rng = Rng::derive(config.seeds.init, 0);
  setup.initial = ModelParams::init_uniform(dims, init_rng);

  FederationEngine::Options& opt = setup.engine_options;
  opt.schedule = config.schedule;
  opt.strategy = config.strategy;
  opt.weight_mode = config.weight_mode;
  opt.aggregator = config.aggregator;
  opt.server_lr = config.server_lr;
  opt.server_momentum = config.server_momentum;
  opt.participation = config.participation;
  opt.training_seed = config.seeds.training;
  opt.threads = config.threads;
  switch (config.adversary.kind) {
    case AdversaryConfig::Kind::kRandomNoise:
    case AdversaryConfig::Kind::kLie:
    case AdversaryConfig::Kind::kMinMax:
    case AdversaryConfig::Kind::kMinSum: {
      AdversarySetup adv;
      adv.config = config.adversary.byzantine;
      adv.seed = config.seeds.attack;
      adv.num_clients = config.clients;
      opt.adversary = adv;
      break;
    }
    default:
      break;
  }
  if (config.aggregator.kind == AggregatorKind::kFlTrust) {
    Dataset root = make_blobs(gen.classes, config.fltrust_root_per_class, centers, gen.sigma,
                              Rng::derive(config.seeds.data, 4).next_u64());
    opt.fltrust_root = pad_features(root, gen.pad_dims);
  }
  return setup;
}

// ---- runner -------------------------------------------------------------------

namespace {

double coalition_value(const ExperimentConfig& config, const ExperimentSetup& setup,
                       std::uint32_t mask, double empty_value, std::vector<std::string>& notes) {
  if (mask == 0) return empty_value;
  std::vector<ClientState> subset;
  for (int i = 0; i < config.clients; ++i) {
    if (mask & (1u << i)) subset.push_back(setup.clients[i]);
  }
  FederationEngine::Options opt = setup.engine_options;
  opt.threads = 1;  // coalitions already fan out
  try {
    validate_aggregator(opt.aggregator, static_cast<int>(subset.size()));
  } catch (const ConfigError&) {
    opt.aggregator.kind = AggregatorKind::kMean;  // coalition too small for the rule
    notes.push_back("shapley: coalition of " + std::to_string(subset.size()) +
                    " clients fell back to weighted mean aggregation");
  }
  FederationEngine engine(setup.initial, std::move(subset), opt);
  engine.run(config.schedule.rounds);
  return suite_metrics(engine.params(), setup.suite).mean;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentSetup setup = build_setup(config);

  RunReport report;
  report.version = kVersion;
  report.config_echo = config.echo();

  FederationEngine engine(setup.initial, setup.clients, setup.engine_options);
  Vec last_round_start;
  std::vector<RoundRecord> records;
  records.reserve(config.schedule.rounds);
  for (int r = 0; r < config.schedule.rounds; ++r) {
    last_round_start = param_vector(engine.params());
    records.push_back(engine.run_round());
    const RoundRecord& rec = records.back();

    RoundSummary summary;
    summary.round = r;
    summary.mean_train_loss = rec.mean_train_loss;
    const SuiteMetrics sm = suite_metrics(engine.params(), setup.suite);
    summary.per_dataset = sm.per_dataset;
    summary.suite_accuracy = sm.mean;
    summary.out_accuracy = sm.out_accuracy;
    if (setup.suite.triggered) {
      summary.asr = attack_success_rate(engine.params(), *setup.suite.triggered,
                                        setup.suite.trigger_target);
    }
    summary.weights = rec.outcome.weights;
    summary.selected = rec.outcome.selected;
    summary.diagnostics = rec.outcome.diagnostics;
    summary.notes = rec.outcome.notes;
    summary.client_losses.resize(rec.updates.size());
    summary.update_norms.resize(rec.updates.size());
    for (std::size_t i = 0; i < rec.updates.size(); ++i) {
      summary.client_losses[i] = rec.updates[i].train_loss;
      summary.update_norms[i] = norm2(rec.updates[i].delta);
    }
    report.rounds.push_back(std::move(summary));
  }

  // final metrics
  MetricsReport& metrics = report.metrics;
  const SuiteMetrics final_sm = suite_metrics(engine.params(), setup.suite);
  for (std::size_t u = 0; u < setup.suite.datasets.size(); ++u) {
    metrics.per_dataset.emplace_back(setup.suite.datasets[u].first, final_sm.per_dataset[u]);
  }
  metrics.suite_accuracy = final_sm.mean;
  metrics.out_accuracy = final_sm.out_accuracy;
  metrics.deviation_points = final_sm.deviation_points;
  metrics.bias_points = final_sm.deviation_points;
  if (final_sm.degenerate) {
    report.notes.push_back("suite has a single test dataset; deviation is trivially 0");
  } else {
    report.notes.push_back(
        "performance deviation and prediction bias are the same statistic over the suite");
  }
  if (config.aggregator.kind == AggregatorKind::kDnc) {
    report.notes.push_back("dnc assumes knowledge of the expected malicious count (f=" +
                           std::to_string(config.aggregator.expected_malicious) + ")");
  }

  if (setup.suite.triggered) {
    metrics.asr = attack_success_rate(engine.params(), *setup.suite.triggered,
                                      setup.suite.trigger_target);
    report.notes.push_back(
        "triggered test set excludes samples whose clean label equals the target");
    for (const auto& [name, data] : setup.suite.datasets) {
      EvaluationSuite one;
      one.datasets.emplace_back(name, data);
      const Dataset trig = build_triggered_set(one, *setup.backdoor);
      if (!trig.empty()) {
        metrics.asr_per_dataset.emplace_back(
            name, attack_success_rate(engine.params(), trig, setup.suite.trigger_target));
      }
    }
  }

  const int attackers = static_cast<int>(std::floor(config.adversary.ratio * config.clients));
  if (config.metrics.attack_impact && config.adversary.kind != AdversaryConfig::Kind::kNone &&
      attackers > 0) {
    // matched benign twin: same seeds, no adversary
    ExperimentConfig twin = config;
    twin.adversary = AdversaryConfig{};
    twin.metrics = MetricsConfig{};
    twin.aggregator.expected_malicious = config.aggregator.expected_malicious;
    const RunReport twin_report = run_experiment(twin);
    metrics.benign_accuracy = twin_report.metrics.suite_accuracy;
    metrics.impact_points =
        attack_impact(100.0 * *metrics.benign_accuracy, 100.0 * metrics.suite_accuracy);
    report.benign_twin_seeds = twin.seeds;
  }

  if (config.metrics.shapley != MetricsConfig::ShapleyMode::kNone) {
    const double empty_value = suite_metrics(setup.initial, setup.suite).mean;
    const std::uint32_t full = (1u << config.clients) - 1u;
    std::vector<double> values(static_cast<std::size_t>(full) + 1);
    if (config.metrics.shapley == MetricsConfig::ShapleyMode::kRetrainExact) {
      std::vector<std::vector<std::string>> notes(full + 1);
      parallel_for(full + 1, config.threads, [&](std::size_t mask) {
        values[mask] = coalition_value(config, setup, static_cast<std::uint32_t>(mask),
                                       empty_value, notes[mask]);
      });
      std::set<std::string> unique_notes;
      for (const auto& ns : notes) {
        for (const std::string& n : ns) unique_notes.insert(n);
      }
      report.notes.insert(report.notes.end(), unique_notes.begin(), unique_notes.end());
    } else {
      // one-shot: re-aggregate the final round's local models with
      // renormalized weights
      const RoundRecord& last = records.back();
      std::vector<Vec> local_models(config.clients);
      for (int i = 0; i < config.clients; ++i) {
        local_models[i] = vadd(last_round_start, last.updates[i].delta);
      }
      for (std::uint32_t mask = 0; mask <= full; ++mask) {
        if (mask == 0) {
          values[mask] = empty_value;
          continue;
        }
        double wsum = 0.0;
        for (int i = 0; i < config.clients; ++i) {
          if (mask & (1u << i)) wsum += last.alpha[i];
        }
        Vec combo(last_round_start.size(), 0.0);
        for (int i = 0; i < config.clients; ++i) {
          if (mask & (1u << i)) axpy(last.alpha[i] / wsum, local_models[i], combo);
        }
        values[mask] = suite_metrics(unflatten(combo, setup.initial.dims), setup.suite).mean;
      }
    }
    metrics.shapley = shapley_values(
        config.clients, [&](std::uint32_t mask) { return values[mask]; },
        config.metrics.shapley_rho);
  }

  if (config.metrics.contribution_match) {
    if (config.clients < 2) {
      report.notes.push_back("contribution match undefined for a single client (alpha_i = 1)");
      metrics.contribution_match_requested = true;
    } else {
      // leave-one-out over the final round's local models
      const RoundRecord& last = records.back();
      std::vector<Vec> local_models(config.clients);
      for (int i = 0; i < config.clients; ++i) {
        local_models[i] = vadd(last_round_start, last.updates[i].delta);
      }
      Vec reference(last_round_start.size(), 0.0);
      for (int i = 0; i < config.clients; ++i) axpy(last.alpha[i], local_models[i], reference);
      const double mean_acc =
          suite_metrics(unflatten(reference, setup.initial.dims), setup.suite).mean;
      std::vector<double> loo_means(config.clients);
      for (int i = 0; i < config.clients; ++i) {
        const Vec wi = leave_one_out(reference, local_models[i], last.alpha[i]);
        loo_means[i] = suite_metrics(unflatten(wi, setup.initial.dims), setup.suite).mean;
      }
      metrics.gamma.resize(config.clients);
      for (int i = 0; i < config.clients; ++i) metrics.gamma[i] = mean_acc - loo_means[i];
      metrics.contribution_match = contribution_match_degree(mean_acc, loo_means, last.alpha);
      metrics.contribution_match_requested = true;
      report.notes.push_back(
          "leave-one-out models are rebuilt from the final round's local models");
      if (!metrics.contribution_match) {
        report.notes.push_back("contribution match undefined (zero performance drops)");
      }
    }
  }

  const auto t1 = std::chrono::steady_clock::now();
  report.wall_clock_seconds = std::chrono::duration<double>(t1 - t0).count();
  return report;
}

// ---- report serialization ------------------------------------------------------

namespace {

ordered_json opt_to_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::optional<double> opt_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

ordered_json report_to_json(const RunReport& report) {
  ordered_json j;
  j["version"] = report.version;
  j["config"] = report.config_echo;
  j["wall_clock_seconds"] = report.wall_clock_seconds;
  j["notes"] = report.notes;
  if (report.benign_twin_seeds) {
    j["benign_twin_seeds"] = {{"data", report.benign_twin_seeds->data},
                              {"init", report.benign_twin_seeds->init},
                              {"training", report.benign_twin_seeds->training},
                              {"attack", report.benign_twin_seeds->attack}};
  } else {
    j["benign_twin_seeds"] = nullptr;
  }
  ordered_json rounds = ordered_json::array();
  for (const RoundSummary& r : report.rounds) {
    ordered_json rj;
    rj["round"] = r.round;
    rj["mean_train_loss"] = r.mean_train_loss;
    rj["per_dataset"] = r.per_dataset;
    rj["suite_accuracy"] = r.suite_accuracy;
    rj["out_accuracy"] = opt_to_json(r.out_accuracy);
    rj["asr"] = opt_to_json(r.asr);
    rj["weights"] = r.weights;
    rj["selected"] = r.selected;
    rj["diagnostics"] = r.diagnostics;
    rj["notes"] = r.notes;
    rj["client_losses"] = r.client_losses;
    rj["update_norms"] = r.update_norms;
    rounds.push_back(std::move(rj));
  }
  j["rounds"] = std::move(rounds);

  const MetricsReport& m = report.metrics;
  ordered_json mj;
  ordered_json per = ordered_json::array();
  for (const auto& [name, acc] : m.per_dataset) per.push_back({{"dataset", name}, {"accuracy", acc}});
  mj["per_dataset"] = std::move(per);
  mj["suite_accuracy"] = m.suite_accuracy;
  mj["out_accuracy"] = opt_to_json(m.out_accuracy);
  mj["deviation_points"] = m.deviation_points;
  mj["bias_points"] = m.bias_points;
  mj["benign_accuracy"] = opt_to_json(m.benign_accuracy);
  mj["impact_points"] = opt_to_json(m.impact_points);
  mj["asr"] = opt_to_json(m.asr);
  ordered_json asrper = ordered_json::array();
  for (const auto& [name, v] : m.asr_per_dataset) asrper.push_back({{"dataset", name}, {"asr", v}});
  mj["asr_per_dataset"] = std::move(asrper);
  mj["shapley"] = m.shapley;
  mj["gamma"] = m.gamma;
  mj["contribution_match"] = opt_to_json(m.contribution_match);
  mj["contribution_match_requested"] = m.contribution_match_requested;
  j["metrics"] = std::move(mj);
  return j;
}

RunReport report_from_json(const json& j) {
  RunReport report;
  report.version = j.at("version").get<std::string>();
  report.config_echo = j.at("config");
  report.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  report.notes = j.at("notes").get<std::vector<std::string>>();
  if (!j.at("benign_twin_seeds").is_null()) {
    const json& s = j.at("benign_twin_seeds");
    SeedSet seeds;
    seeds.data = s.at("data").get<std::uint64_t>();
    seeds.init = s.at("init").get<std::uint64_t>();
    seeds.training = s.at("training").get<std::uint64_t>();
    seeds.attack = s.at("attack").get<std::uint64_t>();
    report.benign_twin_seeds = seeds;
  }
  for (const json& rj : j.at("rounds")) {
    RoundSummary r;
    r.round = rj.at("round").get<int>();
    r.mean_train_loss = rj.at("mean_train_loss").get<double>();
    r.per_dataset = rj.at("per_dataset").get<std::vector<double>>();
    r.suite_accuracy = rj.at("suite_accuracy").get<double>();
    r.out_accuracy = opt_from_json(rj.at("out_accuracy"));
    r.asr = opt_from_json(rj.at("asr"));
    r.weights = rj.at("weights").get<Vec>();
    r.selected = rj.at("selected").get<std::vector<int>>();
    r.diagnostics = rj.at("diagnostics").get<std::map<std::string, Vec>>();
    r.notes = rj.at("notes").get<std::vector<std::string>>();
    r.client_losses = rj.at("client_losses").get<Vec>();
    r.update_norms = rj.at("update_norms").get<Vec>();
    report.rounds.push_back(std::move(r));
  }
  const json& mj = j.at("metrics");
  MetricsReport& m = report.metrics;
  for (const json& p : mj.at("per_dataset")) {
    m.per_dataset.emplace_back(p.at("dataset").get<std::string>(), p.at("accuracy").get<double>());
  }
  m.suite_accuracy = mj.at("suite_accuracy").get<double>();
  m.out_accuracy = opt_from_json(mj.at("out_accuracy"));
  m.deviation_points = mj.at("deviation_points").get<double>();
  m.bias_points = mj.at("bias_points").get<double>();
  m.benign_accuracy = opt_from_json(mj.at("benign_accuracy"));
  m.impact_points = opt_from_json(mj.at("impact_points"));
  m.asr = opt_from_json(mj.at("asr"));
  for (const json& p : mj.at("asr_per_dataset")) {
    m.asr_per_dataset.emplace_back(p.at("dataset").get<std::string>(), p.at("asr").get<double>());
  }
  m.shapley = mj.at("shapley").get<std::vector<double>>();
  m.gamma = mj.at("gamma").get<std::vector<double>>();
  m.contribution_match = opt_from_json(mj.at("contribution_match"));
  m.contribution_match_requested = mj.at("contribution_match_requested").get<bool>();
  return report;
}

namespace {

std::string format_value(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void csv_row(std::string& out, const std::string& metric, const std::string& dataset, int round,
             const std::optional<double>& value) {
  out += metric;
  out += ',';
  out += dataset;
  out += ',';
  out += std::to_string(round);
  out += ',';
  out += value ? format_value(*value) : "NA";
  out += '\n';
}

}  // namespace

std::string metrics_csv(const RunReport& report) {
  std::string out = "metric,dataset,round,value\n";
  const int final_round = static_cast<int>(report.rounds.size());
  // per-round series (1-based round index = state after that round)
  for (const RoundSummary& r : report.rounds) {
    const int round = r.round + 1;
    csv_row(out, "train_loss", "all", round, r.mean_train_loss);
    for (std::size_t u = 0; u < r.per_dataset.size(); ++u) {
      const std::string& name = u < report.metrics.per_dataset.size()
                                    ? report.metrics.per_dataset[u].first
                                    : "u" + std::to_string(u);
      csv_row(out, "accuracy", name, round, 100.0 * r.per_dataset[u]);
    }
    csv_row(out, "suite_accuracy", "all", round, 100.0 * r.suite_accuracy);
    if (r.out_accuracy) csv_row(out, "out_accuracy", "unseen", round, 100.0 * *r.out_accuracy);
    if (r.asr) csv_row(out, "attack_success_rate", "all", round, 100.0 * *r.asr);
  }
  // final metrics
  const MetricsReport& m = report.metrics;
  for (const auto& [name, acc] : m.per_dataset) {
    csv_row(out, "final_accuracy", name, final_round, 100.0 * acc);
  }
  csv_row(out, "final_suite_accuracy", "all", final_round, 100.0 * m.suite_accuracy);
  if (m.out_accuracy) {
    csv_row(out, "final_out_accuracy", "unseen", final_round, 100.0 * *m.out_accuracy);
  }
  csv_row(out, "performance_deviation", "all", final_round, m.deviation_points);
  csv_row(out, "prediction_bias", "all", final_round, m.bias_points);
  if (m.benign_accuracy || m.impact_points) {
    csv_row(out, "benign_accuracy", "all", final_round,
            m.benign_accuracy ? std::optional<double>(100.0 * *m.benign_accuracy) : std::nullopt);
    csv_row(out, "attack_impact", "all", final_round, m.impact_points);
  }
  if (m.asr) {
    csv_row(out, "final_attack_success_rate", "all", final_round, 100.0 * *m.asr);
    for (const auto& [name, v] : m.asr_per_dataset) {
      csv_row(out, "final_attack_success_rate", name, final_round, 100.0 * v);
    }
  }
  for (std::size_t i = 0; i < m.shapley.size(); ++i) {
    csv_row(out, "shapley_value", "client:" + std::to_string(i), final_round, m.shapley[i]);
  }
  for (std::size_t i = 0; i < m.gamma.size(); ++i) {
    csv_row(out, "contribution_gamma", "client:" + std::to_string(i), final_round,
            100.0 * m.gamma[i]);
  }
  if (m.contribution_match_requested) {
    csv_row(out, "contribution_match", "all", final_round, m.contribution_match);
  }
  return out;
}

std::vector<std::string> emit_report(const RunReport& report, const std::string& out_dir,
                                     const std::vector<std::string>& formats) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory: " + out_dir + " (" + ec.message() + ")");
  std::vector<std::string> written;
  for (const std::string& fmt : formats) {
    if (fmt == "json") {
      const fs::path p = fs::path(out_dir) / "report.json";
      std::ofstream out(p);
      if (!out) throw ConfigError("cannot write: " + p.string());
      out << report_to_json(report).dump(2) << "\n";
      written.push_back(p.string());
    } else if (fmt == "csv") {
      const fs::path p = fs::path(out_dir) / "metrics.csv";
      std::ofstream out(p, std::ios::binary);
      if (!out) throw ConfigError("cannot write: " + p.string());
      out << metrics_csv(report);
      written.push_back(p.string());
    } else {
      throw ConfigError("unknown report format: " + fmt);
    }
  }
  return written;
}

}  // namespace fedbench
