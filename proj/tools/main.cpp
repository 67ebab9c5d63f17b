// mapfdt command-line front end: environment generation, expert planning,
// corpus building, training, static/dynamic evaluation, and verification.

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <nlohmann/json.hpp>

#include "mapfdt/corpus_file.hpp"
#include "mapfdt/dataset.hpp"
#include "mapfdt/dt/checkpoint.hpp"
#include "mapfdt/dt/gradcheck.hpp"
#include "mapfdt/dt/trainer.hpp"
#include "mapfdt/manifest.hpp"
#include "mapfdt/map_io.hpp"
#include "mapfdt/metrics.hpp"
#include "mapfdt/oracles.hpp"
#include "mapfdt/planner.hpp"
#include "mapfdt/scenario.hpp"
#include "mapfdt/util/binio.hpp"
#include "mapfdt/util/rng.hpp"

namespace fs = std::filesystem;
using namespace mapfdt;
using nlohmann::json;

namespace {

std::shared_ptr<dt::DTModelF> load_model(const std::string& path) {
  if (dt::checkpoint_dtype(path) != 4)
    throw std::runtime_error("checkpoint " + path +
                             " is double precision; evaluation expects a single-precision "
                             "training checkpoint");
  auto state = dt::load_checkpoint<float>(path);
  return std::make_shared<dt::DTModelF>(std::move(state.model));
}

AdvisorFn advisor_by_kind(const std::string& kind, const LlmConfig& llm_config) {
  if (kind == "oracle") return make_oracle_advisor();
  if (kind == "llm") return make_llm_advisor(llm_config);
  if (kind == "none") return {};
  throw std::runtime_error("unknown advisor kind: " + kind);
}

struct EvalCommon {
  std::string model_path;
  int size = 20;
  int agents = 8;
  double density = 0.0;
  int episodes = 50;
  uint64_t seed = 0;
  int horizon = 0;  // 0 = derive from size
  double target_rtg = 20.0;
  bool sample = false;
  double temperature = 1.0;
  std::string advisor = "oracle";
  std::string out_prefix;
  int workers = 1;
  bool soc_cap_failures = false;

  int effective_horizon() const { return horizon > 0 ? horizon : std::max(64, size * 4); }
};

void add_eval_options(CLI::App* cmd, EvalCommon& opts) {
  cmd->add_option("--model", opts.model_path, "trained checkpoint")->required();
  cmd->add_option("--size", opts.size, "square map side length");
  cmd->add_option("--agents", opts.agents, "agent count");
  cmd->add_option("--density", opts.density, "obstacle density");
  cmd->add_option("--episodes", opts.episodes, "episode count");
  cmd->add_option("--seed", opts.seed, "root seed");
  cmd->add_option("--horizon", opts.horizon, "episode horizon (0: 4x map size)");
  cmd->add_option("--target-rtg", opts.target_rtg, "initial return-to-go conditioning");
  cmd->add_flag("--sample", opts.sample, "sample actions instead of greedy argmax");
  cmd->add_option("--temperature", opts.temperature, "softmax temperature when sampling");
  cmd->add_option("--advisor", opts.advisor, "oracle|llm|none");
  cmd->add_option("--out", opts.out_prefix, "output prefix (.csv/.json/.jsonl appended)")
      ->required();
  cmd->add_option("--workers", opts.workers, "parallel episodes");
  cmd->add_flag("--soc-cap-failures", opts.soc_cap_failures,
                "also report soc with failed agents capped at the horizon");
}

std::vector<PolicyPtr> make_dt_policies(const std::shared_ptr<dt::DTModelF>& model,
                                        const EvalCommon& eval, uint64_t episode_seed, int n) {
  DTPolicy::Options opts;
  opts.target_rtg = eval.target_rtg;
  opts.sample = eval.sample;
  opts.temperature = eval.temperature;
  std::vector<PolicyPtr> out;
  for (int i = 0; i < n; ++i) {
    opts.sample_seed = splitmix64(episode_seed ^ splitmix64(uint64_t(i) + 0x51ed270b));
    out.push_back(std::make_shared<DTPolicy>(model, opts));
  }
  return out;
}

void write_eval_outputs(const EvalCommon& opts, const std::vector<EpisodeRecord>& records,
                        RunManifest& manifest) {
  auto rows = aggregate(records);
  const std::string csv_path = opts.out_prefix + ".csv";
  const std::string json_path = opts.out_prefix + ".json";
  const std::string jsonl_path = opts.out_prefix + ".episodes.jsonl";
  std::string csv = metrics_to_csv(rows);
  if (opts.soc_cap_failures) {
    double capped = 0;
    for (const EpisodeRecord& r : records) capped += soc_with_cap(r);
    capped /= std::max<size_t>(1, records.size());
    csv += "# soc_capped_mean_over_all_episodes," + std::to_string(capped) + "\n";
  }
  write_file_bytes(csv_path, csv);
  write_file_bytes(json_path, metrics_to_json(rows));
  std::string traces;
  for (const EpisodeRecord& r : records) {
    json line = json::parse(r.to_json());
    traces += line.dump() + "\n";
  }
  write_file_bytes(jsonl_path, traces);
  manifest.add_output(csv_path);
  manifest.add_output(json_path);
  manifest.add_output(jsonl_path);
  manifest.save_for(csv_path);
  std::cout << csv;
}

// runs episodes possibly in parallel; records keep episode order
template <class MakeEpisode>
std::vector<EpisodeRecord> run_many(int episodes, int workers, MakeEpisode make) {
  std::vector<EpisodeRecord> records(static_cast<size_t>(episodes));
  const int w = std::max(1, workers);
  for (int begin = 0; begin < episodes; begin += w) {
    const int end = std::min(episodes, begin + w);
    std::vector<std::future<EpisodeRecord>> batch;
    for (int e = begin; e < end; ++e)
      batch.push_back(std::async(w > 1 ? std::launch::async : std::launch::deferred, make, e));
    for (int e = begin; e < end; ++e) records[size_t(e)] = batch[size_t(e - begin)].get();
  }
  return records;
}

// ---------------------------------------------------------------------------

int cmd_gen(const std::string& out, int width, int height, double density, int agents,
            uint64_t seed, bool dump_text) {
  RunManifest manifest;
  manifest.command = "gen";
  manifest.seed = seed;
  Rng rng(seed);
  ProblemFile problem;
  problem.map = generate_map(width, height, density, rng.fork(0).seed());
  problem.instance = sample_instance(problem.map, agents, rng.fork(1).seed());
  problem.seed = seed;
  save_problem(problem, out);
  json cfg{{"width", width}, {"height", height}, {"density", density}, {"agents", agents}};
  manifest.config_json = cfg.dump();
  manifest.add_output(out);
  manifest.save_for(out);
  if (dump_text) {
    std::vector<Coord> starts;
    for (const AgentTask& t : problem.instance) starts.push_back(t.start);
    std::cout << problem.map.to_text(starts);
  }
  std::cerr << "wrote " << out << " (" << agents << " agents, "
            << problem.map.obstacle_count() << " obstacles)\n";
  return 0;
}

int cmd_plan(const std::string& map_path, const std::string& out, int budget, int horizon,
             const std::string& algo) {
  RunManifest manifest;
  manifest.command = "plan";
  manifest.add_input(map_path);
  ProblemFile problem = load_problem(map_path);
  PlannerOptions options;
  options.node_budget = budget;
  options.horizon = horizon;
  PlanResult result;
  if (algo == "cbs") {
    result = plan_cbs(problem.map, problem.instance, options);
  } else if (algo == "prioritized") {
    result = plan_prioritized(problem.map, problem.instance, {}, options);
  } else {
    std::cerr << "unknown planner: " << algo << "\n";
    return 2;
  }
  if (!result.ok()) {
    std::cerr << "planning failed: " << result.error << "\n";
    return 1;
  }
  save_plan(*result.plan, out);
  json cfg{{"budget", budget}, {"horizon", horizon}, {"algo", algo}};
  manifest.config_json = cfg.dump();
  manifest.add_output(out);
  manifest.save_for(out);
  std::cerr << "soc " << result.plan->soc << ", makespan " << result.plan->makespan << ", nodes "
            << result.nodes_expanded << "\n";
  return 0;
}

int cmd_dataset(const std::string& spec_path, const std::string& out, int workers,
                std::optional<uint64_t> seed_override) {
  RunManifest manifest;
  manifest.command = "dataset";
  CorpusSpec spec;
  if (!spec_path.empty()) {
    spec = CorpusSpec::from_json(read_file_bytes(spec_path));
    manifest.add_input(spec_path);
  }
  if (seed_override) spec.seed = *seed_override;
  manifest.seed = spec.seed;
  manifest.config_json = spec.to_json();
  BuildOptions options;
  options.workers = workers;
  options.progress = [](uint64_t done, uint64_t total) {
    if (done % 50 == 0 || done == total)
      std::cerr << "\r" << done << "/" << total << " episodes" << std::flush;
  };
  DatasetMeta meta = build_corpus(spec, out, options);
  std::cerr << "\n";
  manifest.add_output(out);
  manifest.save_for(out);
  std::cout << meta.to_json() << "\n";
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& config_path,
              const std::string& train_config_path, const std::string& out_dir,
              bool deterministic, uint64_t seed, const std::string& precision,
              std::optional<int64_t> steps, std::optional<double> stop_accuracy) {
  RunManifest manifest;
  manifest.command = "train";
  manifest.seed = seed;
  manifest.add_input(data_path);

  dt::DTConfig model_config;
  if (!config_path.empty()) {
    model_config = dt::DTConfig::from_json(read_file_bytes(config_path));
    manifest.add_input(config_path);
  }
  model_config.param_seed = seed;
  dt::TrainConfig train_config;
  if (!train_config_path.empty()) {
    train_config = dt::TrainConfig::from_json(read_file_bytes(train_config_path));
    manifest.add_input(train_config_path);
  }
  train_config.deterministic = deterministic;
  if (steps) train_config.max_steps = *steps;
  if (stop_accuracy) train_config.stop_accuracy = *stop_accuracy;

  CorpusReader reader(data_path);
  std::cerr << "corpus: " << reader.chunks().size() << " chunks\n";
  if (reader.chunks().empty()) {
    std::cerr << "empty corpus\n";
    return 1;
  }

  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  const std::string ckpt_path = (fs::path(out_dir) / "model.ckpt").string();
  std::ofstream log(log_path);

  json cfg;
  cfg["model"] = json::parse(model_config.to_json());
  cfg["train"] = json::parse(train_config.to_json());
  cfg["precision"] = precision;
  manifest.config_json = cfg.dump();

  if (precision == "double") {
    auto state = dt::TrainState<double>::fresh(model_config, seed);
    auto result = dt::train_on_chunks(state, reader.chunks(), train_config, &log);
    dt::save_checkpoint(state, ckpt_path);
    std::cerr << "steps " << result.steps << ", corpus accuracy " << result.final_accuracy
              << "\n";
  } else if (precision == "single") {
    auto state = dt::TrainState<float>::fresh(model_config, seed);
    auto result = dt::train_on_chunks(state, reader.chunks(), train_config, &log);
    dt::save_checkpoint(state, ckpt_path);
    std::cerr << "steps " << result.steps << ", corpus accuracy " << result.final_accuracy
              << "\n";
  } else {
    std::cerr << "unknown precision: " << precision << "\n";
    return 2;
  }
  log.close();
  manifest.add_output(ckpt_path);
  manifest.add_output(log_path);
  manifest.save_for(ckpt_path);
  return 0;
}

int cmd_eval_static(const EvalCommon& opts, const std::string& mode, int budget_arg) {
  RunManifest manifest;
  manifest.command = "eval-static";
  manifest.seed = opts.seed;
  manifest.add_input(opts.model_path);
  auto model = load_model(opts.model_path);
  LlmConfig llm_config;
  const int budget = (mode == "rescue" && budget_arg <= 0) ? opts.effective_horizon() / 2
                                                           : budget_arg;
  json cfg{{"mode", mode},          {"budget", budget},        {"size", opts.size},
           {"agents", opts.agents}, {"density", opts.density}, {"episodes", opts.episodes},
           {"advisor", opts.advisor}, {"horizon", opts.effective_horizon()},
           {"target_rtg", opts.target_rtg}};
  manifest.config_json = cfg.dump();

  auto records = run_many(opts.episodes, opts.workers, [&](int e) {
    Rng episode_rng = Rng(opts.seed).fork(uint64_t(e));
    GridMap map = generate_map(opts.size, opts.size, opts.density, episode_rng.fork(0).seed());
    Instance instance = sample_instance(map, opts.agents, episode_rng.fork(1).seed());
    RunOptions run_options;
    run_options.episode.horizon = opts.effective_horizon();
    auto policies = make_dt_policies(model, opts, episode_rng.seed(), opts.agents);
    EpisodeRecord record;
    if (mode == "rescue") {
      AdvisorFn advisor = advisor_by_kind(opts.advisor, llm_config);
      record = run_static_with_rescue(map, instance, std::move(policies), advisor, budget,
                                      opts.advisor, run_options);
    } else {
      record = run_episode(map, instance, std::move(policies), run_options);
      record.advisor_kind = "none";
    }
    record.seed = episode_rng.seed();
    return record;
  });
  write_eval_outputs(opts, records, manifest);
  return 0;
}

int cmd_eval_dynamic(const EvalCommon& opts, double fraction, bool advise_all) {
  RunManifest manifest;
  manifest.command = "eval-dynamic";
  manifest.seed = opts.seed;
  manifest.add_input(opts.model_path);
  auto model = load_model(opts.model_path);
  LlmConfig llm_config;
  json cfg{{"fraction", fraction},   {"size", opts.size},       {"agents", opts.agents},
           {"density", opts.density}, {"episodes", opts.episodes}, {"advisor", opts.advisor},
           {"horizon", opts.effective_horizon()}, {"advise_all_unfinished", advise_all},
           {"target_rtg", opts.target_rtg}};
  manifest.config_json = cfg.dump();

  auto records = run_many(opts.episodes, opts.workers, [&](int e) {
    Rng episode_rng = Rng(opts.seed).fork(uint64_t(e));
    GridMap map = generate_map(opts.size, opts.size, opts.density, episode_rng.fork(0).seed());
    Instance instance = sample_instance(map, opts.agents, episode_rng.fork(1).seed());
    ScenarioPlan plan = make_scenario(map, instance, fraction, episode_rng.fork(2).seed(),
                                      opts.effective_horizon(), opts.advisor);
    plan.config.advise_all_unfinished = advise_all;
    RunOptions run_options;
    run_options.episode.horizon = opts.effective_horizon();
    auto policies = make_dt_policies(model, opts, episode_rng.seed(), opts.agents);
    AdvisorFn advisor = advisor_by_kind(opts.advisor, llm_config);
    EpisodeRecord record =
        run_dynamic_episode(map, instance, std::move(policies), advisor, plan, run_options);
    record.seed = episode_rng.seed();
    return record;
  });
  write_eval_outputs(opts, records, manifest);
  return 0;
}

int cmd_eval_batch(const EvalCommon& opts, const std::string& spec_path) {
  RunManifest manifest;
  manifest.command = "eval-batch";
  manifest.seed = opts.seed;
  manifest.add_input(opts.model_path);
  manifest.add_input(spec_path);
  auto model = load_model(opts.model_path);
  LlmConfig llm_config;

  json spec_doc = json::parse(read_file_bytes(spec_path));
  if (!spec_doc.is_array()) spec_doc = json::array({spec_doc});
  manifest.config_json = spec_doc.dump();

  std::vector<EpisodeRecord> all_records;
  for (const json& entry : spec_doc) {
    ScenarioConfig scenario = ScenarioConfig::from_json(entry.dump());
    const int size = entry.value("size", opts.size);
    const int agents = entry.value("agents", opts.agents);
    const double density = entry.value("density", opts.density);
    const int episodes = entry.value("episodes", opts.episodes);
    const int horizon = entry.value("horizon", std::max(64, size * 4));

    auto records = run_many(episodes, opts.workers, [&](int e) {
      Rng episode_rng = Rng(scenario.seed).fork(uint64_t(e));
      GridMap map = generate_map(size, size, density, episode_rng.fork(0).seed());
      Instance instance = sample_instance(map, agents, episode_rng.fork(1).seed());
      RunOptions run_options;
      run_options.episode.horizon = horizon;
      auto policies = make_dt_policies(model, opts, episode_rng.seed(), agents);
      AdvisorFn advisor = advisor_by_kind(scenario.advisor_kind, llm_config);
      EpisodeRecord record;
      if (scenario.mode == ScenarioConfig::Mode::Dynamic) {
        ScenarioPlan plan = make_scenario(map, instance, scenario.fraction,
                                          episode_rng.fork(2).seed(), horizon,
                                          scenario.advisor_kind);
        if (entry.contains("t_change")) {
          plan.config.t_change = scenario.t_change;
          plan.event.trigger_t = scenario.t_change;
        }
        plan.config.advisor_window = scenario.advisor_window;
        plan.config.advise_all_unfinished = scenario.advise_all_unfinished;
        record = run_dynamic_episode(map, instance, std::move(policies), advisor, plan,
                                     run_options);
      } else if (scenario.mode == ScenarioConfig::Mode::StaticRescue) {
        record = run_static_with_rescue(map, instance, std::move(policies), advisor,
                                        scenario.rescue_budget, scenario.advisor_kind,
                                        run_options);
      } else {
        record = run_episode(map, instance, std::move(policies), run_options);
        record.advisor_kind = "none";
      }
      record.seed = episode_rng.seed();
      return record;
    });
    for (auto& r : records) all_records.push_back(std::move(r));
  }
  write_eval_outputs(opts, all_records, manifest);
  return 0;
}

// ---------------------------------------------------------------------------
// verify: fast oracle-equivalence and gradient suites; nonzero exit on failure

int cmd_verify(int gradcheck_coords, int planner_instances) {
  int failures = 0;
  auto check = [&](bool ok, const std::string& name, const std::string& detail = "") {
    std::cout << (ok ? "[ok]   " : "[FAIL] ") << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    if (!ok) ++failures;
  };

  // planner vs joint-state oracle
  {
    Rng rng(12);
    int agree = 0, total = 0;
    while (total < planner_instances) {
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
      ++total;
      if (expect.has_value() != got.ok()) continue;
      if (!got.ok() || (got.plan->soc == *expect && validate_plan(map, *got.plan).empty()))
        ++agree;
    }
    check(agree == total, "cbs soc equals joint-state oracle",
          std::to_string(agree) + "/" + std::to_string(total));
  }

  // constrained A* vs space-time BFS
  {
    Rng rng(13);
    bool all_ok = true;
    for (int trial = 0; trial < 25; ++trial) {
      GridMap map = generate_map(5, 5, 0.1, rng.next_u64());
      auto free = map.free_cells();
      Coord start = free[size_t(rng.uniform_below(free.size()))];
      Coord goal = free[size_t(rng.uniform_below(free.size()))];
      std::vector<SpaceTimeConstraint> cs;
      for (int k = 0; k < 5; ++k) {
        SpaceTimeConstraint c;
        c.agent = -1;
        c.cell = free[size_t(rng.uniform_below(free.size()))];
        c.t = 1 + int(rng.uniform_below(5));
        cs.push_back(c);
      }
      auto got = single_agent_astar(map, start, goal, cs, 32, -1);
      auto expect = oracle::spacetime_bfs_cost(map, start, goal, cs, 32, -1);
      if (got.has_value() != expect.has_value()) all_ok = false;
      if (got && expect && int(got->size()) - 1 != *expect) all_ok = false;
    }
    check(all_ok, "space-time A* matches BFS oracle");
  }

  // rtg suffix sums against direct summation
  {
    Rng rng(14);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> rewards(40);
      for (double& r : rewards) r = rng.uniform01() * 10 - 5;
      auto rtg = compute_rtg(rewards);
      for (size_t t = 0; t < rewards.size(); ++t) {
        double direct = 0;
        for (size_t u = t; u < rewards.size(); ++u) direct += rewards[u];
        worst = std::max(worst, std::abs(direct - rtg[t]));
      }
    }
    check(worst <= 1e-12, "return-to-go suffix sums", "max err " + std::to_string(worst));
  }

  // chunk round-trip
  {
    Rng rng(15);
    bool ok = true;
    for (int len : {1, 49, 50, 51, 137}) {
      std::vector<Transition> traj;
      for (int t = 0; t < len; ++t) {
        Transition tr;
        tr.rtg = rng.uniform01();
        tr.action = uint8_t(rng.uniform_below(5));
        tr.timestep = t;
        for (auto& bit : tr.obs.data) bit = uint8_t(rng.uniform_below(2));
        traj.push_back(tr);
      }
      auto chunks = chunk_trajectory(traj);
      if (dechunk(chunks) != traj) ok = false;
      if (int(chunks.size()) != (len + 49) / 50) ok = false;
    }
    check(ok, "chunk/dechunk round-trip identity");
  }

  // model gradients, causality, init loss
  {
    dt::DTConfig cfg;
    cfg.context = 6;
    cfg.embed_dim = 24;
    cfg.layers = 2;
    cfg.heads = 3;
    cfg.max_timestep = 32;
    cfg.conv_channels1 = 3;
    cfg.conv_channels2 = 5;
    cfg.param_seed = 21;
    auto model = dt::DTModelD::initialized(cfg);

    Rng rng(16);
    dt::TokenBatch batch;
    batch.batch = 2;
    batch.context = cfg.context;
    size_t n = batch.slots();
    batch.rtg.assign(n, 0.0);
    batch.obs.assign(n, Observation{});
    batch.actions.assign(n, 0);
    batch.timesteps.assign(n, 0);
    batch.mask.assign(n, 0);
    for (size_t i = 0; i < n; ++i) {
      batch.rtg[i] = rng.uniform01() * 20;
      for (auto& bit : batch.obs[i].data) bit = uint8_t(rng.uniform_below(2));
      batch.actions[i] = uint8_t(rng.uniform_below(5));
      batch.timesteps[i] = int(i % cfg.context);
      batch.mask[i] = 1;
    }
    auto report = dt::gradcheck(model, batch, gradcheck_coords, 1e-5, 3);
    check(report.max_rel_err <= 1e-4, "gradcheck all tensors",
          "max rel err " + std::to_string(report.max_rel_err));

    auto base = model.forward(batch);
    check(std::abs(base.loss - std::log(5.0)) <= 0.15, "init loss near ln 5",
          "loss " + std::to_string(base.loss));

    dt::TokenBatch perturbed = batch;
    for (int b = 0; b < 2; ++b) {
      size_t last = size_t(b) * cfg.context + size_t(cfg.context - 1);
      perturbed.rtg[last] += 3.0;
      perturbed.actions[last] = uint8_t((perturbed.actions[last] + 2) % 5);
    }
    auto shifted = model.forward(perturbed);
    double max_diff = 0;
    for (int b = 0; b < 2; ++b)
      for (int k = 0; k + 1 < cfg.context; ++k)
        for (int j = 0; j < 5; ++j) {
          size_t idx = size_t(b * cfg.context + k) * 5 + size_t(j);
          max_diff = std::max(max_diff, std::abs(shifted.logits[idx] - base.logits[idx]));
        }
    check(max_diff <= 1e-6, "causal mask invariance", "max diff " + std::to_string(max_diff));

    auto state = dt::TrainState<double>(std::move(model), 22);
    dt::TrainConfig tc;
    tc.lr = 1e-4;
    tc.warmup_steps = 0;
    tc.weight_decay = 0;
    double prev = 1e100;
    bool decreasing = true;
    for (int s = 0; s < 20; ++s) {
      auto stats = dt::train_step(state, batch, tc);
      if (stats.loss >= prev) decreasing = false;
      prev = stats.loss;
    }
    check(decreasing, "single-batch loss strictly decreases for 20 steps");
  }

  // metrics golden values
  {
    EpisodeRecord r;
    r.n_agents = 2;
    r.horizon = 64;
    r.duration = 9;
    r.success = true;
    r.arrival_times = {5, 9};
    for (int arrival : {5, 9}) {
      std::vector<Coord> path;
      for (int t = 0; t <= arrival; ++t) path.push_back({0, t});
      r.positions.push_back(path);
      r.actions.emplace_back(size_t(arrival), uint8_t(Action::East));
      r.rewards.emplace_back(size_t(arrival), -0.3);
      r.advisor_controlled.emplace_back(size_t(arrival), 0);
    }
    EpisodeMetrics m = episode_metrics(r);
    check(m.success && m.soc == 14 && m.makespan == 9, "metrics golden fixture",
          "soc " + std::to_string(m.soc) + ", ms " + std::to_string(m.makespan));
  }

  // oracle advisor shortest-path property
  {
    Rng rng(17);
    bool ok = true;
    int checked = 0;
    while (checked < 60) {
      GridMap map = generate_map(10, 10, 0.15, rng.next_u64());
      Instance inst;
      try {
        inst = sample_instance(map, 3, rng.next_u64());
      } catch (const std::runtime_error&) {
        continue;
      }
      WorldState world = make_world(map, inst);
      WorldSnapshot snap = WorldSnapshot::take(world);
      std::vector<int> ids{0, 1, 2};
      auto actions = oracle_advise(snap, ids);
      for (int id : ids) {
        std::vector<uint8_t> blocked(size_t(map.cell_count()), 0);
        for (const auto& a : snap.agents)
          if (!a.done && a.id != id) blocked[size_t(a.pos.row) * map.width + a.pos.col] = 1;
        auto dist = bfs_distance_map(map, inst[size_t(id)].goal, &blocked);
        int here = dist[size_t(inst[size_t(id)].start.row) * map.width +
                        inst[size_t(id)].start.col];
        Coord next = apply_action(inst[size_t(id)].start, actions[size_t(id)]);
        if (here > 0 && dist[size_t(next.row) * map.width + next.col] != here - 1) ok = false;
        if (here <= 0 && actions[size_t(id)] != Action::Wait) ok = false;
        ++checked;
      }
    }
    check(ok, "oracle advice stays on shortest paths");
  }

  std::cout << (failures == 0 ? "verify: all checks passed\n"
                              : "verify: " + std::to_string(failures) + " check(s) FAILED\n");
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mapfdt: offline-RL multi-agent path finding toolkit"};
  app.require_subcommand(1);

  // gen
  std::string gen_out = "problem.json";
  int gen_width = 10, gen_height = 0, gen_agents = 4;
  double gen_density = 0.0;
  uint64_t gen_seed = 0;
  bool gen_text = false;
  auto* gen = app.add_subcommand("gen", "generate a map + instance problem file");
  gen->add_option("--width,--size", gen_width, "grid width (and height unless --height)");
  gen->add_option("--height", gen_height, "grid height");
  gen->add_option("--density", gen_density, "obstacle density in [0, 0.5]");
  gen->add_option("--agents", gen_agents, "agent count");
  gen->add_option("--seed", gen_seed, "seed");
  gen->add_option("--out", gen_out, "output problem file")->required();
  gen->add_flag("--text", gen_text, "print an ASCII dump to stdout");

  // plan
  std::string plan_map, plan_out = "plan.json", plan_algo = "cbs";
  int plan_budget = 100000, plan_horizon = 256;
  auto* plan = app.add_subcommand("plan", "solve a problem file with the expert planner");
  plan->add_option("--map", plan_map, "problem file")->required();
  plan->add_option("--out", plan_out, "output plan file")->required();
  plan->add_option("--budget", plan_budget, "CBS constraint-tree node budget");
  plan->add_option("--horizon", plan_horizon, "time horizon");
  plan->add_option("--algo", plan_algo, "cbs|prioritized");

  // dataset
  std::string ds_spec, ds_out = "corpus.bin";
  int ds_workers = 1;
  std::optional<uint64_t> ds_seed;
  auto* dataset = app.add_subcommand("dataset", "build an expert trajectory corpus");
  dataset->add_option("--spec", ds_spec, "corpus spec JSON (defaults: full-scale grid)");
  dataset->add_option("--out", ds_out, "output corpus file")->required();
  dataset->add_option("--workers", ds_workers, "parallel planning workers");
  dataset->add_option("--seed", [&ds_seed](const std::vector<std::string>& v) {
    ds_seed = std::stoull(v.front());
    return true;
  }, "seed override");

  // train
  std::string tr_data, tr_config, tr_train_config, tr_out = "run", tr_precision = "single";
  bool tr_det = false;
  uint64_t tr_seed = 0;
  std::optional<int64_t> tr_steps;
  std::optional<double> tr_stop_acc;
  auto* train = app.add_subcommand("train", "train the sequence model on a corpus");
  train->add_option("--data", tr_data, "corpus file")->required();
  train->add_option("--config", tr_config, "model config JSON");
  train->add_option("--train-config", tr_train_config, "optimizer config JSON");
  train->add_option("--out", tr_out, "output directory")->required();
  train->add_flag("--deterministic", tr_det, "deterministic mode");
  train->add_option("--seed", tr_seed, "parameter/shuffle seed");
  train->add_option("--precision", tr_precision, "single|double");
  train->add_option("--steps", [&tr_steps](const std::vector<std::string>& v) {
    tr_steps = std::stoll(v.front());
    return true;
  }, "max optimizer steps");
  train->add_option("--stop-accuracy", [&tr_stop_acc](const std::vector<std::string>& v) {
    tr_stop_acc = std::stod(v.front());
    return true;
  }, "stop once corpus accuracy reaches this");

  // eval-static
  EvalCommon es;
  std::string es_mode = "static";
  int es_budget = 0;
  auto* eval_static = app.add_subcommand("eval-static", "evaluate on stationary instances");
  add_eval_options(eval_static, es);
  eval_static->add_option("--mode", es_mode, "static|rescue");
  eval_static->add_option("--budget", es_budget, "rescue: DT step budget (0 = horizon/2)");

  // eval-dynamic
  EvalCommon ed;
  double ed_fraction = 0.25;
  bool ed_advise_all = false;
  auto* eval_dynamic = app.add_subcommand("eval-dynamic", "goal-change protocol evaluation");
  add_eval_options(eval_dynamic, ed);
  eval_dynamic->add_option("--fraction", ed_fraction, "fraction of agents whose goal moves");
  eval_dynamic->add_flag("--advise-all", ed_advise_all,
                         "advisor window covers every unfinished agent");

  // eval-batch
  EvalCommon eb;
  std::string eb_spec;
  auto* eval_batch = app.add_subcommand("eval-batch", "run a list of scenario specs");
  add_eval_options(eval_batch, eb);
  eval_batch->add_option("--spec", eb_spec, "scenario spec JSON (object or array)")->required();

  // verify
  int vf_coords = 60, vf_instances = 60;
  auto* verify = app.add_subcommand("verify", "run gradient and oracle-equivalence checks");
  verify->add_option("--gradcheck-coords", vf_coords, "finite-difference samples per tensor");
  verify->add_option("--planner-instances", vf_instances, "oracle comparison instances");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen(gen_out, gen_width, gen_height > 0 ? gen_height : gen_width, gen_density,
                     gen_agents, gen_seed, gen_text);
    if (plan->parsed()) return cmd_plan(plan_map, plan_out, plan_budget, plan_horizon, plan_algo);
    if (dataset->parsed()) return cmd_dataset(ds_spec, ds_out, ds_workers, ds_seed);
    if (train->parsed())
      return cmd_train(tr_data, tr_config, tr_train_config, tr_out, tr_det, tr_seed,
                       tr_precision, tr_steps, tr_stop_acc);
    if (eval_static->parsed()) return cmd_eval_static(es, es_mode, es_budget);
    if (eval_dynamic->parsed()) return cmd_eval_dynamic(ed, ed_fraction, ed_advise_all);
    if (eval_batch->parsed()) return cmd_eval_batch(eb, eb_spec);
    if (verify->parsed()) return cmd_verify(vf_coords, vf_instances);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
