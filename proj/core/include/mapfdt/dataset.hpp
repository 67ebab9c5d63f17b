#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mapfdt/env.hpp"
#include "mapfdt/planner.hpp"

namespace mapfdt {

inline constexpr int kContextLength = 50;

struct Transition {
  double rtg = 0.0;
  Observation obs;
  uint8_t action = 0;
  int timestep = 0;    // absolute episode timestep of the decision
  double reward = 0.0; // kept for audit

  bool operator==(const Transition&) const = default;
};

struct TrajectoryChunk {
  uint64_t episode_id = 0;
  uint32_t agent_id = 0;
  uint32_t chunk_index = 0;
  int real_length = 0;  // leading slots holding data; the rest are zero padding
  std::vector<Transition> slots;  // always kContextLength entries
  std::vector<uint8_t> mask;      // 1 = real

  bool operator==(const TrajectoryChunk&) const = default;
};

// Undiscounted suffix sums: rtg[t] = sum of rewards[t..end].
std::vector<double> compute_rtg(std::span<const double> rewards);

std::vector<TrajectoryChunk> chunk_trajectory(std::span<const Transition> trajectory,
                                              int context = kContextLength);

// Inverse of chunking: concatenates the real slots of consecutive chunks.
std::vector<Transition> dechunk(std::span<const TrajectoryChunk> chunks);

struct RolloutResult {
  std::vector<std::vector<Transition>> trajectories;  // per agent, rtg filled in
  std::vector<int> degenerate_agents;                 // zero-length paths
  std::vector<double> total_returns;                  // per agent
};

// Replays a collision-free plan through the environment, recording each
// agent's observation before acting and the env-assigned rewards. Any
// collision during replay throws: it means planner and environment semantics
// have diverged.
RolloutResult rollout_expert(const GridMap& map, const Instance& instance, const JointPlan& plan,
                             const RewardConfig& rewards = {});

struct CorpusSpec {
  std::vector<int> grid_sizes = {10, 20, 40, 80};
  std::vector<int> agent_counts = {4, 16, 32, 64};
  std::vector<double> densities = {0.0, 0.1, 0.2};
  int envs_per_combo = 80;
  uint64_t seed = 0;
  int horizon = 256;
  int cbs_node_budget = 100000;
  int prioritized_restarts = 10;
  bool episode_bonus = false;

  struct Combo {
    int grid_size;
    int n_agents;
    double density;
    int env_index;
  };
  // Deterministic enumeration: sizes x agents x densities x env index.
  std::vector<Combo> enumerate() const;

  std::string to_json() const;
  static CorpusSpec from_json(const std::string& text);
};

struct DatasetMeta {
  uint64_t episodes = 0;
  uint64_t trajectories = 0;
  uint64_t chunks = 0;
  uint64_t planner_failures = 0;   // combos skipped after CBS + restarts failed
  uint64_t sampling_failures = 0;  // instance sampling failed (map too dense)
  uint64_t cbs_fallbacks = 0;      // episodes planned by prioritized fallback
  std::string spec_json;

  std::string to_json() const;
};

struct BuildOptions {
  int workers = 1;  // episodes are planned in parallel; output order is fixed
  std::function<void(uint64_t done, uint64_t total)> progress;
};

DatasetMeta build_corpus(const CorpusSpec& spec, const std::string& out_path,
                         const BuildOptions& options = {});

}  // namespace mapfdt
