// fedbench CLI: run / sweep / selftest

#include <cctype>
#include <cstdio>
#include <filesystem>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedbench/experiment.hpp"
#include "fedbench/selftest.hpp"

namespace fs = std::filesystem;
using fedbench::ConfigError;
using nlohmann::json;

namespace {

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);  // bare string value
  }
}

void apply_key_path(json& root, const std::string& dotted, const json& value) {
  json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (key.empty()) throw ConfigError("empty key in path '" + dotted + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

struct SeedOverride {
  std::string name;
  std::uint64_t value = 0;
};

SeedOverride parse_seed_override(const std::string& text) {
  const std::size_t eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("--seed-override expects NAME=U64");
  SeedOverride so;
  so.name = text.substr(0, eq);
  if (so.name != "data" && so.name != "init" && so.name != "training" && so.name != "attack") {
    throw ConfigError("--seed-override: unknown seed name '" + so.name + "'");
  }
  so.value = std::stoull(text.substr(eq + 1));
  return so;
}

void print_summary(const fedbench::RunReport& report) {
  const auto& m = report.metrics;
  std::printf("rounds: %zu\n", report.rounds.size());
  for (const auto& [name, acc] : m.per_dataset) {
    std::printf("accuracy[%s]: %.2f%%\n", name.c_str(), 100.0 * acc);
  }
  std::printf("suite accuracy: %.2f%%\n", 100.0 * m.suite_accuracy);
  if (m.out_accuracy) std::printf("out-client accuracy: %.2f%%\n", 100.0 * *m.out_accuracy);
  std::printf("performance deviation: %.2f points\n", m.deviation_points);
  if (m.benign_accuracy) std::printf("benign accuracy: %.2f%%\n", 100.0 * *m.benign_accuracy);
  if (m.impact_points) std::printf("attack impact: %.2f points\n", *m.impact_points);
  if (m.asr) std::printf("attack success rate: %.2f%%\n", 100.0 * *m.asr);
  for (std::size_t i = 0; i < m.shapley.size(); ++i) {
    std::printf("shapley[client %zu]: %+.5f\n", i, m.shapley[i]);
  }
  if (m.contribution_match_requested) {
    if (m.contribution_match) {
      std::printf("contribution match: %.4f\n", *m.contribution_match);
    } else {
      std::printf("contribution match: NA\n");
    }
  }
  for (const std::string& note : report.notes) std::printf("note: %s\n", note.c_str());
  std::printf("wall clock: %.2fs\n", report.wall_clock_seconds);
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')
               ? c
               : '_';
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale federated learning benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string dump_data_dir;
  int threads = 0;
  std::vector<std::string> seed_overrides;
  std::vector<std::string> vary;

  CLI::App* run = app.add_subcommand("run", "run one experiment from a config file");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--seed-override", seed_overrides, "NAME=U64 (data|init|training|attack)");
  run->add_option("--threads", threads, "worker threads");
  run->add_option("--dump-data", dump_data_dir,
                  "also export the generated datasets as CSV into this directory");

  CLI::App* sweep = app.add_subcommand("sweep", "cartesian sweep over config keys");
  sweep->add_option("config", config_path, "experiment config (JSON)")->required();
  sweep->add_option("--vary", vary, "key=v1,v2,... (dotted key path); repeatable")
      ->required();
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--seed-override", seed_overrides, "NAME=U64");
  sweep->add_option("--threads", threads, "worker threads");

  CLI::App* selftest = app.add_subcommand("selftest", "run the property/oracle suites");
  (void)selftest;

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("selftest")) {
      const auto results = fedbench::run_selftest();
      bool ok = true;
      for (const auto& r : results) {
        std::printf("[%s] %s%s%s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.empty() ? "" : ": ", r.detail.c_str());
        ok &= r.passed;
      }
      return ok ? 0 : 1;
    }

    // normalize the config first so overrides apply to a fully defaulted tree
    fedbench::ExperimentConfig base = fedbench::parse_config(config_path);
    json normalized = base.echo();
    for (const std::string& text : seed_overrides) {
      const SeedOverride so = parse_seed_override(text);
      normalized["seeds"][so.name] = so.value;
    }
    if (threads > 0) normalized["threads"] = threads;

    if (app.got_subcommand("run")) {
      const fedbench::ExperimentConfig config = fedbench::parse_config_json(normalized);
      const fedbench::RunReport report = fedbench::run_experiment(config);
      print_summary(report);
      for (const std::string& path : fedbench::emit_report(report, out_dir)) {
        std::printf("wrote %s\n", path.c_str());
      }
      if (!dump_data_dir.empty()) {
        const fedbench::ExperimentSetup setup = fedbench::build_setup(config);
        fs::create_directories(dump_data_dir);
        for (const auto& client : setup.clients) {
          const fs::path p = fs::path(dump_data_dir) /
                             ("client_" + std::to_string(client.id) + ".csv");
          fedbench::write_dataset_csv_file(client.data, p.string());
        }
        for (const auto& [name, data] : setup.suite.datasets) {
          const fs::path p = fs::path(dump_data_dir) / ("test_" + sanitize(name) + ".csv");
          fedbench::write_dataset_csv_file(data, p.string());
        }
        if (setup.suite.unseen) {
          fedbench::write_dataset_csv_file(*setup.suite.unseen,
                                           (fs::path(dump_data_dir) / "unseen.csv").string());
        }
        if (setup.suite.triggered) {
          fedbench::write_dataset_csv_file(*setup.suite.triggered,
                                           (fs::path(dump_data_dir) / "triggered.csv").string());
        }
        std::printf("wrote datasets to %s\n", dump_data_dir.c_str());
      }
      return 0;
    }

    // sweep: expand each --vary key=v1,v2,... then run the cartesian product
    struct Axis {
      std::string key;
      std::vector<json> values;
    };
    std::vector<Axis> axes;
    for (const std::string& spec : vary) {
      const std::size_t eq = spec.find('=');
      if (eq == std::string::npos) throw ConfigError("--vary expects key=v1,v2,...");
      Axis axis;
      axis.key = spec.substr(0, eq);
      std::string rest = spec.substr(eq + 1);
      std::size_t start = 0;
      while (start <= rest.size()) {
        const std::size_t comma = rest.find(',', start);
        axis.values.push_back(parse_scalar(rest.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      if (axis.values.empty()) throw ConfigError("--vary '" + axis.key + "' has no values");
      axes.push_back(std::move(axis));
    }
    std::size_t cells = 1;
    for (const Axis& a : axes) cells *= a.values.size();
    for (std::size_t cell = 0; cell < cells; ++cell) {
      json j = normalized;
      std::string name = "cell" + std::to_string(cell);
      std::size_t rem = cell;
      for (const Axis& a : axes) {
        const json& v = a.values[rem % a.values.size()];
        rem /= a.values.size();
        apply_key_path(j, a.key, v);
        name += "_" + sanitize(a.key) + "=" + sanitize(v.is_string() ? v.get<std::string>() : v.dump());
      }
      const fedbench::ExperimentConfig config = fedbench::parse_config_json(j);
      const fedbench::RunReport report = fedbench::run_experiment(config);
      const fs::path cell_dir = fs::path(out_dir) / name;
      fedbench::emit_report(report, cell_dir.string());
      std::printf("%s: suite accuracy %.2f%%", name.c_str(),
                  100.0 * report.metrics.suite_accuracy);
      if (report.metrics.impact_points) {
        std::printf(", impact %.2f points", *report.metrics.impact_points);
      }
      if (report.metrics.asr) std::printf(", asr %.2f%%", 100.0 * *report.metrics.asr);
      std::printf("\n");
    }
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
