// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier than the unit tests; builds a small expert corpus, trains
// the sequence model on it, and exercises the full evaluation protocols.

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <httplib.h>
#include <iostream>
#include <nlohmann/json.hpp>
#include <thread>

#include "mapfdt/corpus_file.hpp"
#include "mapfdt/dataset.hpp"
#include "mapfdt/dt/gradcheck.hpp"
#include "mapfdt/dt/trainer.hpp"
#include "mapfdt/metrics.hpp"
#include "mapfdt/oracles.hpp"
#include "mapfdt/planner.hpp"
#include "mapfdt/scenario.hpp"
#include "mapfdt/util/hash.hpp"

using namespace mapfdt;
namespace fs = std::filesystem;

namespace {

struct Gate {
  int failures = 0;
  void criterion(int n, const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << n << " (" << name << "): "
              << detail << "\n"
              << std::flush;
    if (!pass) ++failures;
  }
};

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Observation random_obs(Rng& rng) {
  Observation obs;
  for (auto& bit : obs.data) bit = uint8_t(rng.uniform_below(2));
  return obs;
}

std::vector<PolicyPtr> toy_policies(const std::shared_ptr<dt::DTModelF>& model, int n,
                                    uint64_t episode_seed) {
  DTPolicy::Options opts;
  opts.target_rtg = 20.0;
  opts.sample = true;        // temperature sampling breaks symmetric stand-offs
  opts.temperature = 1.5;
  std::vector<PolicyPtr> out;
  for (int i = 0; i < n; ++i) {
    opts.sample_seed = splitmix64(episode_seed ^ splitmix64(uint64_t(i) + 0x9e37));
    out.push_back(std::make_shared<DTPolicy>(model, opts));
  }
  return out;
}

// -------------------------------------------------------------------------
// criterion 1: CBS sum-of-costs equals the coupled-search oracle exactly

void criterion_1(Gate& gate) {
  const double t0 = now_seconds();
  Rng rng(4242);
  int tested = 0, agreed = 0;
  while (tested < 200) {
    GridMap map = generate_map(4, 4, 0.15, rng.next_u64());
    if (map.obstacle_count() > 3) continue;
    Instance inst;
    try {
      inst = sample_instance(map, 2, rng.next_u64());
    } catch (const std::runtime_error&) {
      continue;
    }
    auto expect = oracle::joint_optimal_soc_2agents(map, inst);
    PlanResult got = plan_cbs(map, inst, {.horizon = 64, .node_budget = 100000});
    ++tested;
    if (expect.has_value() != got.ok()) continue;
    if (!got.ok() || got.plan->soc == *expect) ++agreed;
  }
  const double elapsed = now_seconds() - t0;
  gate.criterion(1, "expert optimality", agreed == tested && elapsed < 120.0,
                 std::to_string(agreed) + "/" + std::to_string(tested) +
                     " instances match the joint-state oracle, " + std::to_string(elapsed) +
                     " s");
}

// -------------------------------------------------------------------------
// criterion 2: every plan from the sweep validates and replays cleanly

void criterion_2(Gate& gate) {
  Rng rng(7100);
  int planned = 0, attempted = 0, clean = 0;
  for (int size : {10, 20, 40}) {
    for (int agents : {4, 8, 16}) {
      for (double density : {0.0, 0.1, 0.2}) {
        for (int i = 0; i < 27; ++i) {
          GridMap map = generate_map(size, size, density, rng.next_u64());
          Instance inst;
          try {
            inst = sample_instance(map, agents, rng.next_u64());
          } catch (const std::runtime_error&) {
            continue;
          }
          ++attempted;
          PlannerOptions options;
          options.horizon = 256;
          PlanResult result = plan_cbs(map, inst, options);
          if (!result.ok()) {
            std::vector<int> order(inst.size());
            for (size_t k = 0; k < order.size(); ++k) order[k] = int(k);
            result = plan_prioritized(map, inst, order, options);
          }
          if (!result.ok()) continue;
          ++planned;
          bool ok = validate_plan(map, *result.plan).empty();
          if (ok) {
            try {
              rollout_expert(map, inst, *result.plan);  // throws on any collision
            } catch (const std::exception&) {
              ok = false;
            }
          }
          if (ok) ++clean;
        }
      }
    }
  }
  gate.criterion(2, "safety sweep",
                 attempted >= 720 && planned == clean && planned >= attempted * 95 / 100,
                 std::to_string(clean) + "/" + std::to_string(planned) +
                     " plans conflict-free and replay clean of " + std::to_string(attempted) +
                     " instances");
}

// -------------------------------------------------------------------------
// criterion 3: rtg / chunking / container / enumeration

void criterion_3(Gate& gate) {
  Rng rng(333);
  bool ok = true;
  std::string detail;

  // suffix sums against direct summation
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> rewards(60);
    for (double& r : rewards) r = rng.uniform01() * 10 - 5;
    auto rtg = compute_rtg(rewards);
    for (size_t t = 0; t < rewards.size(); ++t) {
      double direct = 0;
      for (size_t u = t; u < rewards.size(); ++u) direct += rewards[u];
      worst = std::max(worst, std::abs(direct - rtg[t]));
    }
  }
  if (worst > 1e-12) {
    ok = false;
    detail += "rtg err " + std::to_string(worst) + "; ";
  }

  // chunk round-trip identity
  for (int len : {1, 49, 50, 51, 120, 333}) {
    std::vector<Transition> traj;
    for (int t = 0; t < len; ++t) {
      Transition tr;
      tr.rtg = rng.uniform01() * 20;
      tr.action = uint8_t(rng.uniform_below(5));
      tr.timestep = t;
      tr.obs = random_obs(rng);
      traj.push_back(tr);
    }
    if (dechunk(chunk_trajectory(traj)) != traj) {
      ok = false;
      detail += "chunk round-trip failed at len " + std::to_string(len) + "; ";
    }
  }

  // container round-trip is bit-exact
  {
    const std::string path_a = (fs::temp_directory_path() / "mapfdt_acc_a.bin").string();
    const std::string path_b = (fs::temp_directory_path() / "mapfdt_acc_b.bin").string();
    CorpusSpec spec;
    spec.grid_sizes = {8};
    spec.agent_counts = {3};
    spec.densities = {0.0, 0.1};
    spec.envs_per_combo = 4;
    spec.seed = 9;
    spec.horizon = 64;
    build_corpus(spec, path_a, {.workers = 1});
    build_corpus(spec, path_b, {.workers = 2});
    CorpusReader reader(path_a);
    CorpusReader back(path_b);
    if (Sha256::of_file(path_a) != Sha256::of_file(path_b)) {
      ok = false;
      detail += "corpus not byte-deterministic; ";
    }
    if (reader.chunks() != back.chunks()) {
      ok = false;
      detail += "decoded chunks differ; ";
    }
    // decode -> re-encode bytes must match the originals
    for (const auto& chunk : reader.chunks()) {
      std::string payload = encode_chunk_record(chunk);
      if (decode_chunk_record(payload) != chunk) {
        ok = false;
        detail += "record re-encode mismatch; ";
        break;
      }
    }
    fs::remove(path_a);
    fs::remove(path_b);
  }

  // full-scale parameter grid enumerates 4*4*3*80 environments
  CorpusSpec paper_scale;
  if (paper_scale.enumerate().size() != 3840) {
    ok = false;
    detail += "paper grid enumerates " + std::to_string(paper_scale.enumerate().size()) + "; ";
  }
  gate.criterion(3, "rtg/chunk pipeline", ok, ok ? "suffix sums exact, round-trips bit-exact, "
                                                   "grid enumerates 3840"
                                                 : detail);
}

// -------------------------------------------------------------------------
// criterion 4: gradients, causality, init loss, single-batch descent

void criterion_4(Gate& gate) {
  dt::DTConfig cfg;
  cfg.context = 6;
  cfg.embed_dim = 24;
  cfg.layers = 2;
  cfg.heads = 3;
  cfg.max_timestep = 32;
  cfg.conv_channels1 = 3;
  cfg.conv_channels2 = 5;
  cfg.param_seed = 77;
  auto model = dt::DTModelD::initialized(cfg);

  Rng rng(444);
  dt::TokenBatch batch;
  batch.batch = 3;
  batch.context = cfg.context;
  const size_t n = batch.slots();
  batch.rtg.assign(n, 0.0);
  batch.obs.assign(n, Observation{});
  batch.actions.assign(n, 0);
  batch.timesteps.assign(n, 0);
  batch.mask.assign(n, 0);
  for (size_t i = 0; i < n; ++i) {
    batch.rtg[i] = rng.uniform01() * 20;
    batch.obs[i] = random_obs(rng);
    batch.actions[i] = uint8_t(rng.uniform_below(5));
    batch.timesteps[i] = int(i % cfg.context);
    batch.mask[i] = 1;
  }

  auto report = dt::gradcheck(model, batch, 200, 1e-5, 5);
  bool grads_ok = report.max_rel_err <= 1e-4 &&
                  report.entries.size() == model.params().tensors.size();

  auto base = model.forward(batch);
  const bool init_ok = std::abs(base.loss - std::log(5.0)) <= 0.15;

  // perturb the last slot of every row; earlier logits must not move
  dt::TokenBatch perturbed = batch;
  for (int b = 0; b < batch.batch; ++b) {
    size_t last = size_t(b) * cfg.context + size_t(cfg.context - 1);
    perturbed.rtg[last] -= 7.5;
    perturbed.obs[last] = random_obs(rng);
    perturbed.actions[last] = uint8_t((perturbed.actions[last] + 1) % 5);
  }
  auto shifted = model.forward(perturbed);
  double causal_diff = 0;
  for (int b = 0; b < batch.batch; ++b)
    for (int k = 0; k + 1 < cfg.context; ++k)
      for (int j = 0; j < 5; ++j) {
        size_t idx = size_t(b * cfg.context + k) * 5 + size_t(j);
        causal_diff = std::max(causal_diff, std::abs(shifted.logits[idx] - base.logits[idx]));
      }
  const bool causal_ok = causal_diff <= 1e-6;

  dt::TrainState<double> state(std::move(model), 7);
  dt::TrainConfig tc;
  tc.lr = 1e-4;
  tc.warmup_steps = 0;
  tc.weight_decay = 0.0;
  bool descending = true;
  double prev = 1e100;
  for (int s = 0; s < 20; ++s) {
    auto stats = dt::train_step(state, batch, tc);
    if (stats.loss >= prev) descending = false;
    prev = stats.loss;
  }

  gate.criterion(4, "model verification", grads_ok && init_ok && causal_ok && descending,
                 "gradcheck max rel err " + std::to_string(report.max_rel_err) +
                     ", init loss " + std::to_string(base.loss) + ", causal diff " +
                     std::to_string(causal_diff) + ", 20-step descent " +
                     (descending ? "monotone" : "BROKEN"));
}

// -------------------------------------------------------------------------
// criteria 5-8 share the trained toy model

struct ToyRun {
  std::shared_ptr<dt::DTModelF> model;
  std::vector<TrajectoryChunk> overfit_chunks;  // first 200 corpus chunks
  double build_minutes = 0.0;
  double train_accuracy = 0.0;
  int64_t steps = 0;
};

ToyRun train_toy_model(Gate& gate) {
  const double t0 = now_seconds();
  CorpusSpec spec;
  spec.grid_sizes = {10};
  spec.agent_counts = {4};
  spec.densities = {0.0};
  spec.envs_per_combo = 2000;  // >= 500 expert episodes on empty 10x10 maps
  spec.seed = 101;
  spec.horizon = 64;
  const std::string corpus_path = (fs::temp_directory_path() / "mapfdt_acc_corpus.bin").string();
  DatasetMeta meta = build_corpus(spec, corpus_path, {.workers = 2});

  CorpusReader reader(corpus_path);
  dt::DTConfig model_config;  // default architecture
  model_config.param_seed = 7;
  auto state = dt::TrainState<float>::fresh(model_config, 7);
  dt::TrainConfig train_config;
  train_config.lr = 3e-4;
  train_config.batch_size = 32;
  train_config.max_steps = 4000;
  train_config.stop_accuracy = 0.95;
  auto result = dt::train_on_chunks(state, reader.chunks(), train_config);

  ToyRun run;
  run.overfit_chunks.assign(reader.chunks().begin(), reader.chunks().begin() + 200);
  fs::remove(corpus_path);
  run.model = std::make_shared<dt::DTModelF>(std::move(state.model));
  run.build_minutes = (now_seconds() - t0) / 60.0;
  run.train_accuracy = result.final_accuracy;
  run.steps = result.steps;
  (void)meta;
  (void)gate;
  return run;
}

void criterion_5(Gate& gate, const ToyRun& run) {
  // held-out instances: seeds disjoint from the corpus stream
  int successes = 0;
  const int episodes = 100;
  std::vector<EpisodeRecord> records(episodes);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int e = next++; e < episodes; e = next++) {
      Rng rng = Rng(555000).fork(uint64_t(e));
      GridMap map = generate_map(10, 10, 0.0, rng.fork(0).seed());
      Instance inst = sample_instance(map, 4, rng.fork(1).seed());
      RunOptions options;
      options.episode.horizon = 64;
      records[size_t(e)] =
          run_episode(map, inst, toy_policies(run.model, 4, rng.seed()), options);
    }
  };
  std::thread a(worker), b(worker);
  a.join();
  b.join();
  for (const auto& r : records) successes += r.success ? 1 : 0;
  const double csr = double(successes) / episodes;

  // capacity: a fresh default model overfits 200 chunks to >= 95% within 2000 steps
  dt::DTConfig overfit_config;
  overfit_config.param_seed = 11;
  auto overfit_state = dt::TrainState<float>::fresh(overfit_config, 11);
  dt::TrainConfig overfit_tc;
  overfit_tc.lr = 3e-4;
  overfit_tc.batch_size = 32;
  overfit_tc.max_steps = 2000;
  overfit_tc.stop_accuracy = 0.95;
  auto overfit = dt::train_on_chunks(overfit_state, run.overfit_chunks, overfit_tc);

  gate.criterion(5, "learning capacity",
                 run.train_accuracy >= 0.95 && csr >= 0.8 && run.build_minutes < 30.0 &&
                     overfit.reached_stop_accuracy,
                 "train accuracy " + std::to_string(run.train_accuracy) + " in " +
                     std::to_string(run.steps) + " steps, dataset+training " +
                     std::to_string(run.build_minutes) + " min, held-out CSR " +
                     std::to_string(csr) + ", 200-chunk overfit " +
                     std::to_string(overfit.final_accuracy) + " in " +
                     std::to_string(overfit.steps) + " steps");
}

// one dynamic arm: fixed seeds shared across advisor kinds
std::vector<EpisodeRecord> dynamic_arm(const ToyRun& run, const std::string& advisor_kind,
                                       int size, int agents, double fraction, int episodes,
                                       uint64_t seed, int horizon) {
  std::vector<EpisodeRecord> records(static_cast<size_t>(episodes));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int e = next++; e < episodes; e = next++) {
      Rng rng = Rng(seed).fork(uint64_t(e));
      GridMap map = generate_map(size, size, 0.0, rng.fork(0).seed());
      Instance inst = sample_instance(map, agents, rng.fork(1).seed());
      ScenarioPlan plan =
          make_scenario(map, inst, fraction, rng.fork(2).seed(), horizon, advisor_kind);
      RunOptions options;
      options.episode.horizon = horizon;
      records[size_t(e)] = run_dynamic_episode(map, inst,
                                               toy_policies(run.model, agents, rng.seed()),
                                               make_oracle_advisor(), plan, options);
    }
  };
  std::thread a(worker), b(worker);
  a.join();
  b.join();
  return records;
}

// true shortest-path distance around static obstacles only
int true_distance(const GridMap& map, Coord from, Coord to) {
  auto dist = bfs_distance_map(map, to);
  return dist[size_t(from.row) * map.width + from.col];
}

void criterion_6(Gate& gate, const ToyRun& run,
                 const std::vector<EpisodeRecord>& with_oracle,
                 const std::vector<EpisodeRecord>& without) {
  auto mean_makespan = [](const std::vector<EpisodeRecord>& records) {
    double sum = 0;
    int count = 0;
    for (const auto& r : records) {
      EpisodeMetrics m = episode_metrics(r);
      if (m.success) {
        sum += m.makespan;
        ++count;
      }
    }
    return count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
  };
  const double ms_oracle = mean_makespan(with_oracle);
  const double ms_none = mean_makespan(without);

  // first post-change oracle step must strictly approach the new goal in every
  // unobstructed case (no other live agent within Chebyshev distance 2, and
  // the agents do not lengthen this agent's shortest path)
  int unobstructed = 0, improved = 0;
  GridMap empty20 = generate_map(20, 20, 0.0, 0);
  for (const auto& record : with_oracle) {
    for (const auto& change : record.goal_changes) {
      const int agent = change.agent;
      const int t = change.t;
      const auto& path = record.positions[size_t(agent)];
      if (int(path.size()) <= t + 1) continue;  // finished at the change step
      Coord pos = path[size_t(t)];
      Coord next = path[size_t(t) + 1];
      const int d_here = true_distance(empty20, pos, change.new_goal);
      if (d_here <= 0) continue;
      bool clear = true;
      for (int other = 0; other < record.n_agents && clear; ++other) {
        if (other == agent) continue;
        const auto& opath = record.positions[size_t(other)];
        bool done_before = record.arrival_times[size_t(other)] &&
                           *record.arrival_times[size_t(other)] < t;
        if (done_before || int(opath.size()) <= t) continue;
        Coord op = opath[size_t(t)];
        if (std::max(std::abs(op.row - pos.row), std::abs(op.col - pos.col)) <= 2) clear = false;
      }
      if (!clear) continue;
      ++unobstructed;
      if (true_distance(empty20, next, change.new_goal) == d_here - 1) ++improved;
    }
  }

  const bool direction_ok = !std::isnan(ms_oracle) && !std::isnan(ms_none) &&
                            ms_oracle <= ms_none;
  const bool oracle_step_ok = unobstructed > 0 && improved == unobstructed;
  gate.criterion(6, "dynamic adaptation direction", direction_ok && oracle_step_ok,
                 "mean makespan oracle " + std::to_string(ms_oracle) + " <= none " +
                     std::to_string(ms_none) + "; first oracle steps improved " +
                     std::to_string(improved) + "/" + std::to_string(unobstructed) +
                     " unobstructed cases");
  (void)run;
}

void criterion_7(Gate& gate) {
  bool ok = true;
  std::string detail;

  auto fixture = [](std::vector<std::optional<int>> arrivals, int collisions, int horizon,
                    int duration) {
    EpisodeRecord r;
    r.n_agents = int(arrivals.size());
    r.horizon = horizon;
    r.duration = duration;
    r.success = true;
    for (const auto& arrival : arrivals) {
      r.arrival_times.push_back(arrival);
      int steps = arrival ? *arrival : duration;
      std::vector<Coord> path;
      for (int t = 0; t <= steps; ++t) path.push_back({0, t});
      r.positions.push_back(path);
      r.actions.emplace_back(size_t(steps), uint8_t(Action::East));
      r.rewards.emplace_back(size_t(steps), -0.3);
      r.advisor_controlled.emplace_back(size_t(steps), 0);
      if (!arrival) r.success = false;
    }
    for (int c = 0; c < collisions; ++c) r.collisions.push_back({c, 0, CollisionKind::Vertex});
    return r;
  };

  EpisodeMetrics m1 = episode_metrics(fixture({5, 9}, 0, 64, 9));
  if (!(m1.success && m1.soc == 14 && m1.makespan == 9)) {
    ok = false;
    detail += "soc/ms fixture broke; ";
  }
  EpisodeMetrics m2 = episode_metrics(fixture({20, 14}, 2, 64, 20));
  if (std::abs(m2.collision_rate - 0.1) > 1e-12) {
    ok = false;
    detail += "cr fixture broke; ";
  }
  // failed episodes are excluded from soc/ms/cr aggregates
  std::vector<EpisodeRecord> group{fixture({4, 4}, 2, 32, 4), fixture({3, std::nullopt}, 9, 32, 32)};
  auto rows = aggregate(group);
  const MetricsRow& row = rows.at(0);
  if (!(row.episodes == 2 && row.successes == 1 && std::abs(row.csr - 0.5) < 1e-12 &&
        std::abs(row.mean_collision_rate - 0.5) < 1e-12 && std::abs(row.mean_soc - 8.0) < 1e-12)) {
    ok = false;
    detail += "failed-episode exclusion broke; ";
  }
  gate.criterion(7, "metrics correctness", ok,
                 ok ? "golden fixtures match hand computation" : detail);
}

void criterion_8(Gate& gate, const ToyRun& run,
                 const std::vector<EpisodeRecord>& dynamic_records) {
  bool ok = true;
  std::string detail;

  if (default_t_change(20) != 15 || default_t_change(40) != 30 || default_t_change(80) != 50) {
    ok = false;
    detail += "t_change table wrong; ";
  }

  // window discipline over every dynamic record (sizes 20, 40, 80)
  std::vector<EpisodeRecord> all = dynamic_records;
  for (int size : {40, 80}) {
    auto extra = dynamic_arm(run, "oracle", size, 4, 0.5, 2, 9100 + uint64_t(size),
                             std::max(96, size * 4));
    for (auto& r : extra) all.push_back(std::move(r));
  }
  int advisor_steps = 0;
  for (const auto& record : all) {
    std::map<int, int> change_t;
    for (const auto& change : record.goal_changes) change_t[change.agent] = change.t;
    for (int agent = 0; agent < record.n_agents; ++agent) {
      const auto& flags = record.advisor_controlled[size_t(agent)];
      for (size_t t = 0; t < flags.size(); ++t) {
        if (!flags[t]) continue;
        ++advisor_steps;
        auto it = change_t.find(agent);
        if (it == change_t.end() || int(t) < it->second || int(t) >= it->second + 5) {
          ok = false;
          detail += "advisor flag outside window (agent " + std::to_string(agent) + ", t " +
                    std::to_string(t) + "); ";
        }
      }
    }
  }
  if (advisor_steps == 0) {
    ok = false;
    detail += "no advisor-controlled steps observed; ";
  }

  // rescue: advisor only after the budget and only for unfinished agents
  const int budget = 6;
  int rescue_advisor_steps = 0;
  for (int e = 0; e < 10; ++e) {
    Rng rng = Rng(777000).fork(uint64_t(e));
    GridMap map = generate_map(10, 10, 0.0, rng.fork(0).seed());
    Instance inst = sample_instance(map, 4, rng.fork(1).seed());
    RunOptions options;
    options.episode.horizon = 64;
    EpisodeRecord record = run_static_with_rescue(
        map, inst, toy_policies(run.model, 4, rng.seed()), make_oracle_advisor(), budget,
        "oracle", options);
    for (int agent = 0; agent < record.n_agents; ++agent) {
      const auto& flags = record.advisor_controlled[size_t(agent)];
      for (size_t t = 0; t < flags.size(); ++t) {
        if (!flags[t]) continue;
        ++rescue_advisor_steps;
        if (int(t) < budget) {
          ok = false;
          detail += "rescue advisor before budget; ";
        }
        bool finished_before = record.arrival_times[size_t(agent)] &&
                               *record.arrival_times[size_t(agent)] <= int(t);
        if (finished_before) {
          ok = false;
          detail += "rescue advisor after finish; ";
        }
      }
    }
  }
  if (rescue_advisor_steps == 0) {
    ok = false;
    detail += "rescue never engaged (lower the budget); ";
  }

  gate.criterion(8, "protocol fidelity", ok,
                 ok ? "advisor windows and rescue transitions all within protocol (" +
                          std::to_string(advisor_steps) + " dynamic + " +
                          std::to_string(rescue_advisor_steps) + " rescue advisor steps)"
                    : detail);
}

// -------------------------------------------------------------------------
// criterion 9: LLM client contract against a local stub

void criterion_9(Gate& gate) {
  bool ok = true;
  std::string detail;

  GridMap map = generate_map(8, 8, 0.0, 0);
  WorldState world = make_world(map, {{{1, 1}, {1, 5}}, {{4, 4}, {6, 4}}});
  WorldSnapshot snap = WorldSnapshot::take(world);
  std::vector<int> ids{0, 1};

  auto reply = [](const std::string& content) {
    nlohmann::json j;
    j["choices"] = nlohmann::json::array({nlohmann::json{
        {"message", nlohmann::json{{"role", "assistant"}, {"content", content}}}}});
    return j.dump();
  };

  // valid block
  {
    httplib::Server server;
    server.Post("/v1/chat/completions",
                [&](const httplib::Request&, httplib::Response& res) {
                  res.set_content(reply("ACTIONS:\nagent 0: EAST\nagent 1: SOUTH\n"),
                                  "application/json");
                });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    LlmConfig config;
    config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    LlmClient client(config);
    auto actions = client.advise(snap, ids);
    if (!(actions[0] == Action::East && actions[1] == Action::South)) {
      ok = false;
      detail += "valid block misparsed; ";
    }
    server.stop();
    t.join();
  }

  // 500 twice then success
  {
    std::atomic<int> hits{0};
    httplib::Server server;
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      if (hits++ < 2) {
        res.status = 500;
        res.set_content("busy", "text/plain");
      } else {
        res.set_content(reply("ACTIONS:\nagent 0: WAIT\nagent 1: WAIT\n"), "application/json");
      }
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    LlmConfig config;
    config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    config.max_retries = 2;
    LlmClient client(config);
    auto actions = client.advise(snap, ids);
    if (hits != 3 || actions != std::vector<Action>{Action::Wait, Action::Wait}) {
      ok = false;
      detail += "retry contract broke (hits " + std::to_string(hits) + "); ";
    }
    server.stop();
    t.join();
  }

  // malformed content degrades per agent
  {
    httplib::Server server;
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      res.set_content(reply("I refuse to answer in the requested format."), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    LlmConfig config;
    config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    config.fallback = LlmConfig::Fallback::Wait;
    LlmClient client(config);
    auto actions = client.advise(snap, ids);
    if (actions != std::vector<Action>{Action::Wait, Action::Wait}) {
      ok = false;
      detail += "malformed response did not degrade; ";
    }
    server.stop();
    t.join();
  }

  // timeout falls back for every agent (discard port, nothing listening)
  {
    LlmConfig config;
    config.endpoint = "http://127.0.0.1:9";
    config.timeout_ms = 150;
    config.max_retries = 0;
    config.fallback = LlmConfig::Fallback::Oracle;
    LlmClient client(config);
    auto actions = client.advise(snap, ids);
    if (actions.size() != ids.size()) {
      ok = false;
      detail += "timeout path returned wrong arity; ";
    }
    if (client.stats().transport_failures != 1) {
      ok = false;
      detail += "timeout not recorded; ";
    }
  }

  gate.criterion(9, "llm client contract", ok,
                 ok ? "stub parse, retry, malformed-degrade, and timeout-fallback all held"
                    : detail);
}

}  // namespace

int main() {
  Gate gate;
  criterion_1(gate);
  criterion_2(gate);
  criterion_3(gate);
  criterion_4(gate);

  ToyRun run = train_toy_model(gate);
  criterion_5(gate, run);
  auto with_oracle = dynamic_arm(run, "oracle", 20, 8, 0.25, 50, 24680, 80);
  auto without = dynamic_arm(run, "none", 20, 8, 0.25, 50, 24680, 80);
  criterion_6(gate, run, with_oracle, without);
  criterion_7(gate);
  criterion_8(gate, run, with_oracle);
  criterion_9(gate);

  std::cout << (gate.failures == 0
                    ? "acceptance: all criteria passed\n"
                    : "acceptance: " + std::to_string(gate.failures) + " criteria FAILED\n");
  return gate.failures;
}
