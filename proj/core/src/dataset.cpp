#include "mapfdt/dataset.hpp"

#include <algorithm>
#include <future>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "mapfdt/corpus_file.hpp"
#include "mapfdt/util/rng.hpp"

namespace mapfdt {

using nlohmann::json;

std::vector<double> compute_rtg(std::span<const double> rewards) {
  std::vector<double> rtg(rewards.size());
  double suffix = 0.0;
  for (size_t i = rewards.size(); i > 0; --i) {
    suffix += rewards[i - 1];
    rtg[i - 1] = suffix;
  }
  return rtg;
}

std::vector<TrajectoryChunk> chunk_trajectory(std::span<const Transition> trajectory, int context) {
  if (context < 1) throw std::invalid_argument("chunk_trajectory: context must be >= 1");
  std::vector<TrajectoryChunk> chunks;
  const size_t len = trajectory.size();
  for (size_t begin = 0; begin < len; begin += size_t(context)) {
    TrajectoryChunk chunk;
    chunk.chunk_index = uint32_t(begin / size_t(context));
    chunk.real_length = int(std::min(size_t(context), len - begin));
    chunk.slots.assign(size_t(context), Transition{});
    chunk.mask.assign(size_t(context), 0);
    for (int k = 0; k < chunk.real_length; ++k) {
      chunk.slots[size_t(k)] = trajectory[begin + size_t(k)];
      chunk.mask[size_t(k)] = 1;
    }
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

std::vector<Transition> dechunk(std::span<const TrajectoryChunk> chunks) {
  std::vector<Transition> out;
  for (const TrajectoryChunk& chunk : chunks)
    out.insert(out.end(), chunk.slots.begin(), chunk.slots.begin() + chunk.real_length);
  return out;
}

RolloutResult rollout_expert(const GridMap& map, const Instance& instance, const JointPlan& plan,
                             const RewardConfig& rewards) {
  if (plan.paths.size() != instance.size())
    throw std::invalid_argument("rollout_expert: plan/instance agent count mismatch");
  const int n = int(instance.size());

  RolloutResult result;
  result.trajectories.resize(size_t(n));
  result.total_returns.assign(size_t(n), 0.0);

  WorldState world = make_world(map, instance);
  for (int i = 0; i < n; ++i) {
    if (!(plan.paths[size_t(i)].front() == instance[size_t(i)].start))
      throw std::invalid_argument("rollout_expert: plan does not start at instance starts");
    if (plan.paths[size_t(i)].size() == 1) {
      // already on goal; nothing to replay for this agent
      result.degenerate_agents.push_back(i);
      world.agents[size_t(i)].done = true;
      world.agents[size_t(i)].arrival_time = 0;
    }
  }
  if (world.all_done()) return result;

  std::vector<std::vector<double>> agent_rewards(static_cast<size_t>(n));
  for (int t = 0; t < plan.makespan; ++t) {
    std::vector<Action> actions(size_t(n), Action::Wait);
    for (int i = 0; i < n; ++i) {
      const auto& path = plan.paths[size_t(i)];
      if (world.agents[size_t(i)].done) continue;
      if (t + 1 >= int(path.size()))
        throw std::runtime_error("rollout_expert: agent active past its plan arrival");
      actions[size_t(i)] = action_between(path[size_t(t)], path[size_t(t) + 1]);
      Transition tr;
      tr.obs = observe(world, i);
      tr.action = uint8_t(actions[size_t(i)]);
      tr.timestep = t;
      result.trajectories[size_t(i)].push_back(tr);
    }
    StepResult sr = step(world, actions, rewards);
    if (!sr.collisions.empty())
      throw std::runtime_error(
          "rollout_expert: collision while replaying a validated plan; planner and environment "
          "semantics disagree");
    for (int i = 0; i < n; ++i)
      if (!result.trajectories[size_t(i)].empty() &&
          int(agent_rewards[size_t(i)].size()) < int(result.trajectories[size_t(i)].size()))
        agent_rewards[size_t(i)].push_back(sr.rewards[size_t(i)]);
  }
  if (!world.all_done())
    throw std::runtime_error("rollout_expert: episode did not finish by plan makespan");

  for (int i = 0; i < n; ++i) {
    auto& traj = result.trajectories[size_t(i)];
    const auto& rs = agent_rewards[size_t(i)];
    std::vector<double> rtg = compute_rtg(rs);
    for (size_t k = 0; k < traj.size(); ++k) {
      traj[k].reward = rs[k];
      traj[k].rtg = rtg[k];
    }
    result.total_returns[size_t(i)] = rtg.empty() ? 0.0 : rtg[0];
  }
  return result;
}

std::vector<CorpusSpec::Combo> CorpusSpec::enumerate() const {
  std::vector<Combo> combos;
  for (int size : grid_sizes)
    for (int agents : agent_counts)
      for (double density : densities)
        for (int env = 0; env < envs_per_combo; ++env)
          combos.push_back({size, agents, density, env});
  return combos;
}

std::string CorpusSpec::to_json() const {
  json j;
  j["grid_sizes"] = grid_sizes;
  j["agent_counts"] = agent_counts;
  j["densities"] = densities;
  j["envs_per_combo"] = envs_per_combo;
  j["seed"] = seed;
  j["horizon"] = horizon;
  j["cbs_node_budget"] = cbs_node_budget;
  j["prioritized_restarts"] = prioritized_restarts;
  j["episode_bonus"] = episode_bonus;
  return j.dump(2);
}

CorpusSpec CorpusSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  CorpusSpec spec;
  spec.grid_sizes = j.value("grid_sizes", spec.grid_sizes);
  spec.agent_counts = j.value("agent_counts", spec.agent_counts);
  spec.densities = j.value("densities", spec.densities);
  spec.envs_per_combo = j.value("envs_per_combo", spec.envs_per_combo);
  spec.seed = j.value("seed", spec.seed);
  spec.horizon = j.value("horizon", spec.horizon);
  spec.cbs_node_budget = j.value("cbs_node_budget", spec.cbs_node_budget);
  spec.prioritized_restarts = j.value("prioritized_restarts", spec.prioritized_restarts);
  spec.episode_bonus = j.value("episode_bonus", spec.episode_bonus);
  return spec;
}

std::string DatasetMeta::to_json() const {
  json j;
  j["episodes"] = episodes;
  j["trajectories"] = trajectories;
  j["chunks"] = chunks;
  j["planner_failures"] = planner_failures;
  j["sampling_failures"] = sampling_failures;
  j["cbs_fallbacks"] = cbs_fallbacks;
  j["spec"] = json::parse(spec_json.empty() ? "{}" : spec_json);
  return j.dump(2);
}

namespace {

struct EpisodeOutput {
  std::vector<TrajectoryChunk> chunks;
  bool sampling_failed = false;
  bool planner_failed = false;
  bool used_fallback = false;
  int trajectories = 0;
};

EpisodeOutput produce_episode(const CorpusSpec& spec, const CorpusSpec::Combo& combo,
                              uint64_t episode_id) {
  EpisodeOutput out;
  Rng base(spec.seed);
  const uint64_t map_seed = base.fork(3 * episode_id).seed();
  const uint64_t instance_seed = base.fork(3 * episode_id + 1).seed();
  Rng restart_rng = base.fork(3 * episode_id + 2);

  GridMap map = generate_map(combo.grid_size, combo.grid_size, combo.density, map_seed);
  Instance instance;
  try {
    instance = sample_instance(map, combo.n_agents, instance_seed);
  } catch (const std::exception&) {
    out.sampling_failed = true;
    return out;
  }

  PlannerOptions popts;
  popts.horizon = spec.horizon;
  popts.node_budget = spec.cbs_node_budget;
  PlanResult planned = plan_cbs(map, instance, popts);
  if (!planned.ok()) {
    std::vector<int> order(instance.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    for (int attempt = 0; attempt <= spec.prioritized_restarts && !planned.ok(); ++attempt) {
      if (attempt > 0) restart_rng.shuffle(order);
      planned = plan_prioritized(map, instance, order, popts);
    }
    if (!planned.ok()) {
      out.planner_failed = true;
      return out;
    }
    out.used_fallback = true;
  }

  RewardConfig rewards;
  rewards.episode_bonus_enabled = spec.episode_bonus;
  RolloutResult rollout = rollout_expert(map, instance, *planned.plan, rewards);
  for (size_t agent = 0; agent < rollout.trajectories.size(); ++agent) {
    const auto& traj = rollout.trajectories[agent];
    if (traj.empty()) continue;
    ++out.trajectories;
    for (TrajectoryChunk& chunk : chunk_trajectory(traj)) {
      chunk.episode_id = episode_id;
      chunk.agent_id = uint32_t(agent);
      out.chunks.push_back(std::move(chunk));
    }
  }
  return out;
}

}  // namespace

DatasetMeta build_corpus(const CorpusSpec& spec, const std::string& out_path,
                         const BuildOptions& options) {
  const std::vector<CorpusSpec::Combo> combos = spec.enumerate();
  DatasetMeta meta;
  meta.spec_json = spec.to_json();

  std::vector<EpisodeOutput> outputs(combos.size());
  const int workers = std::max(1, options.workers);

  // Episodes are independent; results land in a fixed order so the file is
  // byte-identical for any worker count.
  for (size_t begin = 0; begin < combos.size(); begin += size_t(workers)) {
    size_t end = std::min(combos.size(), begin + size_t(workers));
    std::vector<std::future<EpisodeOutput>> batch;
    for (size_t i = begin; i < end; ++i) {
      batch.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                 produce_episode, std::cref(spec), combos[i], uint64_t(i)));
    }
    for (size_t i = begin; i < end; ++i) {
      outputs[i] = batch[i - begin].get();
      if (options.progress) options.progress(i + 1, combos.size());
    }
  }

  for (const EpisodeOutput& out : outputs) {
    if (out.sampling_failed) {
      ++meta.sampling_failures;
      continue;
    }
    if (out.planner_failed) {
      ++meta.planner_failures;
      continue;
    }
    ++meta.episodes;
    meta.trajectories += uint64_t(out.trajectories);
    meta.chunks += out.chunks.size();
    if (out.used_fallback) ++meta.cbs_fallbacks;
  }

  CorpusWriter writer(out_path, meta.to_json());
  for (const EpisodeOutput& out : outputs)
    for (const TrajectoryChunk& chunk : out.chunks) writer.write(chunk);
  writer.close();
  return meta;
}

}  // namespace mapfdt
