#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fedbench/experiment.hpp"

using namespace fedbench;
using nlohmann::json;

namespace {

json minimal_config() {
  return json::parse(R"({
    "data": {"generator": {"classes": 3, "dim": 2, "per_class_train": 40, "per_class_test": 20}},
    "aggregator": {"kind": "mean"}
  })");
}

json tiny_run_config() {
  json j = minimal_config();
  j["clients"] = 3;
  j["seeds"] = {{"data", 1}, {"init", 2}, {"training", 3}, {"attack", 4}};
  j["schedule"] = {{"rounds", 3}, {"local_epochs", 2}, {"batch_size", 16}, {"lr", 0.05}};
  return j;
}

}  // namespace

TEST_CASE("minimal config gets every documented default echoed") {
  const ExperimentConfig c = parse_config_json(minimal_config());
  // schedule defaults
  CHECK(c.schedule.local_epochs == 10);
  CHECK(c.schedule.batch_size == 64);
  CHECK(c.schedule.momentum == doctest::Approx(0.9));
  CHECK(c.schedule.weight_decay == doctest::Approx(1e-5));
  // per-method defaults
  CHECK(c.strategy.prox_mu == doctest::Approx(0.01));
  CHECK(c.strategy.scaffold_global_lr == doctest::Approx(0.25));
  CHECK(c.aggregator.multi_krum_k == 5);
  CHECK(c.aggregator.dnc_sub_dim == 1000);
  CHECK(c.aggregator.dnc_filter_ratio == doctest::Approx(1.0));
  CHECK(c.aggregator.rfa_iterations == 3);
  CHECK(c.aggregator.fltrust_public_epochs == 20);
  CHECK(c.aggregator.rlr_threshold == doctest::Approx(4.0));
  CHECK(c.aggregator.rlr_server_lr == doctest::Approx(1.0));
  CHECK(c.aggregator.crfl_norm_bound == doctest::Approx(15.0));
  CHECK(c.aggregator.crfl_noise == doctest::Approx(0.01));
  CHECK(c.aggregator.afl_step == doctest::Approx(0.01));
  CHECK(c.aggregator.foolsgold_epsilon == doctest::Approx(1e-5));

  const json echo = c.echo();
  CHECK(echo.at("schedule").at("local_epochs") == 10);
  CHECK(echo.at("seeds").contains("data"));
  CHECK(echo.at("metrics").at("shapley") == "none");
}

TEST_CASE("unknown keys are rejected with their path") {
  json j = minimal_config();
  j["schedule"] = {{"leraning_rate", 0.1}};
  try {
    parse_config_json(j);
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("schedule.leraning_rate") != std::string::npos);
  }
}

TEST_CASE("high evil ratio is rejected for benign-majority defenses") {
  json j = minimal_config();
  j["clients"] = 10;
  j["adversary"] = {{"kind", "random_noise"}, {"ratio", 0.6}};
  j["aggregator"] = {{"kind", "multi_krum"}};
  try {
    parse_config_json(j);
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("evil ratio") != std::string::npos);
  }
}

TEST_CASE("trim fraction 0.5 is rejected") {
  json j = minimal_config();
  j["aggregator"] = {{"kind", "trimmed_mean"}, {"trim_fraction", 0.5}};
  CHECK_THROWS_AS(parse_config_json(j), ConfigError);
}

TEST_CASE("partial seeds object is a missing-seed error") {
  json j = minimal_config();
  j["seeds"] = {{"data", 1}, {"init", 2}, {"training", 3}};
  try {
    parse_config_json(j);
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("seeds.attack") != std::string::npos);
    CHECK(std::string(e.what()).find("missing seed") != std::string::npos);
  }
}

TEST_CASE("omitted seeds fall back to the documented defaults, echoed explicitly") {
  const ExperimentConfig c = parse_config_json(minimal_config());
  const json echo = c.echo();
  CHECK(echo.at("seeds").size() == 4);
}

TEST_CASE("retrain-exact shapley caps the client count") {
  json j = minimal_config();
  j["clients"] = 8;
  j["metrics"] = {{"shapley", "retrain_exact"}};
  CHECK_THROWS_AS(parse_config_json(j), ConfigError);
  j["metrics"] = {{"shapley", "oneshot_aggregate"}};
  CHECK_NOTHROW(parse_config_json(j));
}

TEST_CASE("normalization is idempotent") {
  const ExperimentConfig a = parse_config_json(tiny_run_config());
  const ExperimentConfig b = parse_config_json(a.echo());
  CHECK(a.echo() == b.echo());
}

TEST_CASE("fedopt strategy defaults the server optimizer") {
  json j = minimal_config();
  j["strategy"] = {{"kind", "fedopt"}};
  const ExperimentConfig c = parse_config_json(j);
  CHECK(c.server_lr == doctest::Approx(0.5));
  CHECK(c.server_momentum == doctest::Approx(0.9));
}

TEST_CASE("tiny run: round series has length E and reports round trip") {
  const ExperimentConfig c = parse_config_json(tiny_run_config());
  const RunReport report = run_experiment(c);
  CHECK(report.rounds.size() == 3);
  CHECK(report.version == kVersion);

  const json j = report_to_json(report);  // plain json canonicalizes key order
  const RunReport back = report_from_json(j);
  CHECK(json(report_to_json(back)) == j);
}

TEST_CASE("attacked run couples its benign twin by seeds") {
  json j = tiny_run_config();
  j["clients"] = 5;
  j["adversary"] = {{"kind", "random_noise"}, {"ratio", 0.4}, {"noise_scale", 5.0}};
  const ExperimentConfig c = parse_config_json(j);
  CHECK(c.metrics.attack_impact);  // default on under attack
  const RunReport report = run_experiment(c);
  REQUIRE(report.benign_twin_seeds.has_value());
  CHECK(report.benign_twin_seeds->data == c.seeds.data);
  CHECK(report.benign_twin_seeds->init == c.seeds.init);
  CHECK(report.benign_twin_seeds->training == c.seeds.training);
  REQUIRE(report.metrics.impact_points.has_value());
  REQUIRE(report.metrics.benign_accuracy.has_value());
  const double expect =
      100.0 * (*report.metrics.benign_accuracy - report.metrics.suite_accuracy);
  CHECK(*report.metrics.impact_points == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("metrics csv uses NA for undefined values and percentage points") {
  RunReport report;
  report.version = kVersion;
  RoundSummary r;
  r.round = 0;
  r.suite_accuracy = 0.875;
  r.per_dataset = {0.875};
  report.rounds.push_back(r);
  report.metrics.per_dataset = {{"global", 0.875}};
  report.metrics.suite_accuracy = 0.875;
  report.metrics.contribution_match_requested = true;  // undefined -> NA
  const std::string csv = metrics_csv(report);
  CHECK(csv.find("contribution_match,all,1,NA") != std::string::npos);
  CHECK(csv.find("final_suite_accuracy,all,1,87.5") != std::string::npos);
  CHECK(csv.rfind("metric,dataset,round,value\n", 0) == 0);
}

TEST_CASE("identical configs give byte-identical csv, regardless of workers") {
  json j = tiny_run_config();
  const std::string a = metrics_csv(run_experiment(parse_config_json(j)));
  const std::string b = metrics_csv(run_experiment(parse_config_json(j)));
  j["threads"] = 4;
  const std::string c = metrics_csv(run_experiment(parse_config_json(j)));
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("emit_report writes both files") {
  namespace fs = std::filesystem;
  const ExperimentConfig c = parse_config_json(tiny_run_config());
  const RunReport report = run_experiment(c);
  const fs::path dir = fs::temp_directory_path() / "fedbench_emit_test";
  fs::remove_all(dir);
  const auto files = emit_report(report, dir.string());
  REQUIRE(files.size() == 2);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "metrics.csv"));
  std::ifstream in(dir / "report.json");
  json parsed;
  in >> parsed;
  CHECK(parsed.at("config") == json(c.echo()));
  fs::remove_all(dir);
}

TEST_CASE("shapley modes produce per-client values with efficiency") {
  json j = tiny_run_config();
  j["clients"] = 3;
  j["metrics"] = {{"shapley", "retrain_exact"}};
  const ExperimentConfig c = parse_config_json(j);
  const RunReport report = run_experiment(c);
  REQUIRE(report.metrics.shapley.size() == 3);

  // efficiency: sum nu = A_M - A_empty, both recomputable from the setup
  const ExperimentSetup setup = build_setup(c);
  const double empty = suite_metrics(setup.initial, setup.suite).mean;
  double sum = 0.0;
  for (double v : report.metrics.shapley) sum += v;
  CHECK(sum == doctest::Approx(report.metrics.suite_accuracy - empty).epsilon(1e-9));
}

TEST_CASE("contribution match is reported on domain suites") {
  json j;
  j["clients"] = 3;
  j["seeds"] = {{"data", 5}, {"init", 6}, {"training", 7}, {"attack", 8}};
  j["data"] = {
      {"generator", {{"classes", 3}, {"dim", 2}, {"per_class_train", 60}, {"per_class_test", 30}}},
      {"domains", json::array({{{"name", "a"}}, {{"name", "b"}, {"rotate_deg", 45.0}},
                               {{"name", "c"}, {"scale", 1.4}}})}};
  j["schedule"] = {{"rounds", 5}, {"local_epochs", 2}, {"batch_size", 16}, {"lr", 0.05}};
  j["aggregator"] = {{"kind", "mean"}};
  j["metrics"] = {{"contribution_match", true}};
  const ExperimentConfig c = parse_config_json(j);
  const RunReport report = run_experiment(c);
  CHECK(report.metrics.gamma.size() == 3);
  CHECK(report.metrics.contribution_match_requested);
  CHECK(report.metrics.per_dataset.size() == 3);  // one test set per domain
  if (report.metrics.contribution_match) {
    CHECK(*report.metrics.contribution_match >= -1.0);
    CHECK(*report.metrics.contribution_match <= 1.0);
  }
}

TEST_CASE("every aggregator and strategy runs end to end") {
  for (const char* agg : {"mean", "median", "trimmed_mean", "multi_krum", "bulyan", "foolsgold",
                          "dnc", "rfa", "fltrust", "rlr", "crfl", "afl"}) {
    json j = tiny_run_config();
    j["clients"] = 8;
    j["aggregator"] = {{"kind", agg}, {"expected_malicious", 1}, {"fltrust_root_per_class", 10},
                       {"fltrust_public_epochs", 2}};
    CAPTURE(agg);
    const RunReport report = run_experiment(parse_config_json(j));
    CHECK(report.rounds.size() == 3);
    CHECK(report.metrics.suite_accuracy >= 0.0);
    CHECK(report.metrics.suite_accuracy <= 1.0);
  }
  for (const char* strat : {"fedavg", "fedprox", "scaffold", "fedopt"}) {
    json j = tiny_run_config();
    j["strategy"] = {{"kind", strat}};
    CAPTURE(strat);
    const RunReport report = run_experiment(parse_config_json(j));
    CHECK(report.rounds.size() == 3);
  }
  for (const char* attack : {"random_noise", "lie", "min_max", "min_sum", "sym_flip",
                             "pair_flip"}) {
    json j = tiny_run_config();
    j["clients"] = 5;
    j["adversary"] = {{"kind", attack}, {"ratio", 0.4}};
    CAPTURE(attack);
    const RunReport report = run_experiment(parse_config_json(j));
    CHECK(report.metrics.impact_points.has_value());
  }
}

TEST_CASE("benign fedavg on blobs reaches 95% after 50 rounds") {
  json j = minimal_config();
  j["clients"] = 10;
  j["data"]["generator"]["per_class_train"] = 200;
  j["data"]["generator"]["per_class_test"] = 50;
  j["data"]["generator"]["dim"] = 8;
  j["data"]["partition"] = {{"kind", "dirichlet"}, {"beta", 0.5}};
  j["schedule"] = {{"rounds", 50}, {"local_epochs", 10}, {"batch_size", 64}, {"lr", 0.05}};
  const RunReport report = run_experiment(parse_config_json(j));
  CHECK(report.metrics.suite_accuracy >= 0.95);
}

TEST_CASE("partial participation draws a strict deterministic subset") {
  json j = tiny_run_config();
  j["clients"] = 6;
  j["participation"] = 0.5;
  const ExperimentConfig c = parse_config_json(j);
  const ExperimentSetup setup = build_setup(c);
  FederationEngine a(setup.initial, setup.clients, setup.engine_options);
  FederationEngine b(setup.initial, setup.clients, setup.engine_options);
  const RoundRecord ra = a.run_round();
  const RoundRecord rb = b.run_round();
  CHECK(ra.participants.size() == 3);
  CHECK(ra.participants == rb.participants);
  CHECK(ra.updates.size() == 3);
  double alpha_sum = 0.0;
  for (double w : ra.alpha) alpha_sum += w;
  CHECK(alpha_sum == doctest::Approx(1.0).epsilon(1e-12));

  // per-round metrics gated on the full client set reject it
  j["metrics"] = {{"contribution_match", true}};
  CHECK_THROWS_AS(parse_config_json(j), ConfigError);
}

TEST_CASE("held-out domain produces the out-client accuracy") {
  json j;
  j["clients"] = 2;
  j["data"] = {
      {"generator", {{"classes", 3}, {"dim", 2}, {"per_class_train", 40}, {"per_class_test", 20}}},
      {"domains", json::array({{{"name", "a"}}, {{"name", "b"}, {"rotate_deg", 30.0}},
                               {{"name", "c"}, {"rotate_deg", 90.0}}})},
      {"held_out", "c"}};
  j["schedule"] = {{"rounds", 4}, {"local_epochs", 2}, {"batch_size", 16}, {"lr", 0.05}};
  j["aggregator"] = {{"kind", "mean"}};
  const ExperimentConfig c = parse_config_json(j);
  const RunReport report = run_experiment(c);
  REQUIRE(report.metrics.out_accuracy.has_value());
  CHECK(report.metrics.per_dataset.size() == 2);
}
