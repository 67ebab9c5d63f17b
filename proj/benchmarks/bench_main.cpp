#include <benchmark/benchmark.h>

#include "mapfdt/dataset.hpp"
#include "mapfdt/dt/trainer.hpp"
#include "mapfdt/planner.hpp"
#include "mapfdt/policy.hpp"

using namespace mapfdt;

namespace {

WorldState bench_world(int size, int agents, double density, uint64_t seed) {
  GridMap map = generate_map(size, size, density, seed);
  Instance inst = sample_instance(map, agents, seed + 1);
  return make_world(map, inst);
}

dt::TokenBatch bench_batch(const dt::DTConfig& cfg, int rows, int real_len, uint64_t seed) {
  Rng rng(seed);
  dt::TokenBatch batch;
  batch.batch = rows;
  batch.context = cfg.context;
  const size_t n = batch.slots();
  batch.rtg.assign(n, 0.0);
  batch.obs.assign(n, Observation{});
  batch.actions.assign(n, 0);
  batch.timesteps.assign(n, 0);
  batch.mask.assign(n, 0);
  for (int b = 0; b < rows; ++b) {
    for (int k = 0; k < real_len; ++k) {
      size_t i = size_t(b) * cfg.context + size_t(k);
      batch.rtg[i] = rng.uniform01() * 20;
      for (auto& bit : batch.obs[i].data) bit = uint8_t(rng.uniform_below(2));
      batch.actions[i] = uint8_t(rng.uniform_below(5));
      batch.timesteps[i] = k;
      batch.mask[i] = 1;
    }
  }
  return batch;
}

void BM_GenerateMap(benchmark::State& state) {
  uint64_t seed = 0;
  for (auto _ : state) {
    GridMap map = generate_map(int(state.range(0)), int(state.range(0)), 0.2, seed++);
    benchmark::DoNotOptimize(map.obstacles.data());
  }
}
BENCHMARK(BM_GenerateMap)->Arg(20)->Arg(80);

void BM_EnvStep(benchmark::State& state) {
  WorldState world = bench_world(20, int(state.range(0)), 0.1, 3);
  std::vector<Action> actions(world.agents.size(), Action::East);
  for (auto _ : state) {
    WorldState copy = world;
    StepResult result = step(copy, actions);
    benchmark::DoNotOptimize(result.rewards.data());
  }
}
BENCHMARK(BM_EnvStep)->Arg(8)->Arg(32);

void BM_Observe(benchmark::State& state) {
  WorldState world = bench_world(40, 16, 0.1, 5);
  for (auto _ : state) {
    Observation obs = observe(world, 0);
    benchmark::DoNotOptimize(obs.data.data());
  }
}
BENCHMARK(BM_Observe);

void BM_SingleAgentAstar(benchmark::State& state) {
  GridMap map = generate_map(int(state.range(0)), int(state.range(0)), 0.2, 7);
  auto free = map.free_cells();
  for (auto _ : state) {
    auto path = single_agent_astar(map, free.front(), free.back(), {}, 256);
    benchmark::DoNotOptimize(path);
  }
}
BENCHMARK(BM_SingleAgentAstar)->Arg(20)->Arg(80);

void BM_PlanCbs(benchmark::State& state) {
  GridMap map = generate_map(20, 20, 0.1, 11);
  Instance inst = sample_instance(map, int(state.range(0)), 12);
  for (auto _ : state) {
    PlanResult result = plan_cbs(map, inst);
    benchmark::DoNotOptimize(result.plan);
  }
}
BENCHMARK(BM_PlanCbs)->Arg(4)->Arg(8)->Arg(16);

void BM_RolloutExpert(benchmark::State& state) {
  GridMap map = generate_map(20, 20, 0.1, 13);
  Instance inst = sample_instance(map, 8, 14);
  PlanResult plan = plan_cbs(map, inst);
  for (auto _ : state) {
    RolloutResult rollout = rollout_expert(map, inst, *plan.plan);
    benchmark::DoNotOptimize(rollout.trajectories.data());
  }
}
BENCHMARK(BM_RolloutExpert);

void BM_EncodeObs(benchmark::State& state) {
  auto model = dt::DTModelF::initialized(dt::DTConfig{});
  Rng rng(15);
  Observation obs;
  for (auto& bit : obs.data) bit = uint8_t(rng.uniform_below(2));
  for (auto _ : state) {
    auto embed = model.encode_obs(obs);
    benchmark::DoNotOptimize(embed.data());
  }
}
BENCHMARK(BM_EncodeObs);

void BM_ModelForward(benchmark::State& state) {
  dt::DTConfig cfg;
  auto model = dt::DTModelF::initialized(cfg);
  dt::TokenBatch batch = bench_batch(cfg, int(state.range(0)), int(state.range(1)), 17);
  for (auto _ : state) {
    auto out = model.forward(batch);
    benchmark::DoNotOptimize(out.logits.data());
  }
}
BENCHMARK(BM_ModelForward)->Args({8, 12})->Args({32, 12})->Args({8, 50});

void BM_TrainStep(benchmark::State& state) {
  dt::DTConfig cfg;
  auto train_state = dt::TrainState<float>::fresh(cfg, 19);
  dt::TokenBatch batch = bench_batch(cfg, 32, 12, 21);
  dt::TrainConfig tc;
  for (auto _ : state) {
    auto stats = dt::train_step(train_state, batch, tc);
    benchmark::DoNotOptimize(stats.loss);
  }
}
BENCHMARK(BM_TrainStep);

void BM_PredictAction(benchmark::State& state) {
  dt::DTConfig cfg;
  auto model = std::make_shared<dt::DTModelF>(dt::DTModelF::initialized(cfg));
  DTPolicy policy(model);
  WorldState world = bench_world(20, 8, 0.0, 23);
  Observation obs = observe(world, 0);
  // warm the context to the given depth
  for (int t = 0; t < int(state.range(0)); ++t) {
    PolicyInput input{0, t, &obs, nullptr};
    policy.act(input);
    policy.on_reward(-0.3);
  }
  int t = int(state.range(0));
  for (auto _ : state) {
    PolicyInput input{0, t, &obs, nullptr};
    benchmark::DoNotOptimize(policy.act(input));
    policy.on_reward(-0.3);
    ++t;
  }
}
BENCHMARK(BM_PredictAction)->Arg(10)->Arg(50);

}  // namespace

BENCHMARK_MAIN();
