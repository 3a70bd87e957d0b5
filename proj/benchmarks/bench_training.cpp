#include <benchmark/benchmark.h>

#include "fedbench/experiment.hpp"

namespace {

using namespace fedbench;
using nlohmann::json;

void BM_LocalTrain(benchmark::State& state) {
  const Dataset data = make_blobs(4, 200, circle_centers(4, 8, 2.0), 0.5, 1);
  ClientState client;
  client.id = 0;
  client.data = data;
  TrainingSchedule schedule;
  schedule.local_epochs = static_cast<int>(state.range(0));
  schedule.batch_size = 64;
  schedule.lr = 0.05;
  Rng rng(2);
  const ModelParams global = ModelParams::init_uniform({8, 0, 4}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(local_train(global, client, schedule, {}, {}, Rng(3)));
  }
}
BENCHMARK(BM_LocalTrain)->Arg(1)->Arg(10);

void BM_FullExperiment(benchmark::State& state) {
  json cfg;
  cfg["clients"] = 10;
  cfg["data"] = {{"generator",
                  {{"classes", 4}, {"dim", 8}, {"per_class_train", 200}, {"per_class_test", 50}}},
                 {"partition", {{"kind", "dirichlet"}, {"beta", 0.5}}}};
  cfg["schedule"] = {{"rounds", static_cast<int>(state.range(0))},
                     {"local_epochs", 10},
                     {"batch_size", 64},
                     {"lr", 0.05}};
  cfg["aggregator"] = {{"kind", "mean"}};
  const ExperimentConfig config = parse_config_json(cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_experiment(config));
  }
}
BENCHMARK(BM_FullExperiment)->Arg(10)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_DirichletPartition(benchmark::State& state) {
  const Dataset data = make_blobs(10, 1000, circle_centers(10, 8, 2.0), 0.5, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(partition_dirichlet(data, {10, 0.5, 7}));
  }
}
BENCHMARK(BM_DirichletPartition);

void BM_ShapleyOneshot(benchmark::State& state) {
  json cfg;
  cfg["clients"] = static_cast<int>(state.range(0));
  cfg["data"] = {{"generator",
                  {{"classes", 3}, {"dim", 4}, {"per_class_train", 60}, {"per_class_test", 30}}}};
  cfg["schedule"] = {{"rounds", 5}, {"local_epochs", 2}, {"batch_size", 32}, {"lr", 0.05}};
  cfg["aggregator"] = {{"kind", "mean"}};
  cfg["metrics"] = {{"shapley", "oneshot_aggregate"}};
  const ExperimentConfig config = parse_config_json(cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_experiment(config));
  }
}
BENCHMARK(BM_ShapleyOneshot)->Arg(6)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
