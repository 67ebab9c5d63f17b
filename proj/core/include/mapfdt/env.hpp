#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "mapfdt/grid.hpp"

namespace mapfdt {

struct RewardConfig {
  double move = -0.3;
  double wait_on_goal = 0.0;
  double wait_off_goal = -0.5;
  double collision = -5.0;
  double goal = 20.0;
  double episode_bonus = 20.0;
  bool episode_bonus_enabled = false;
};

struct EpisodeConfig {
  int horizon = 256;
  int fov = 10;
  double gamma = 1.0;  // carried for completeness; return-to-go is undiscounted
  uint64_t seed = 0;
};

struct AgentState {
  int id = 0;
  Coord pos;
  Coord goal;
  bool done = false;
  std::optional<int> arrival_time;
};

struct WorldState {
  GridMap map;
  std::vector<AgentState> agents;
  int t = 0;

  bool all_done() const;
};

// Four binary 10x10 channels; the observing agent sits at local (5,5).
//   0: other live agents in the window     1: own goal (projected if outside)
//   2: other live agents' goals in window  3: obstacles, out-of-bounds as obstacle
struct Observation {
  static constexpr int kChannels = 4;
  static constexpr int kSize = 10;
  static constexpr int kCells = kChannels * kSize * kSize;
  static constexpr int kCenter = 5;

  std::array<uint8_t, kCells> data{};

  uint8_t& at(int channel, int row, int col) {
    return data[size_t(channel) * kSize * kSize + size_t(row) * kSize + col];
  }
  uint8_t at(int channel, int row, int col) const {
    return data[size_t(channel) * kSize * kSize + size_t(row) * kSize + col];
  }
  bool operator==(const Observation&) const = default;

  // 400 bits, LSB-first within each byte, channel-major row-major cell order.
  std::array<uint8_t, 50> pack_bits() const;
  static Observation unpack_bits(const uint8_t* bytes50);
};

enum class CollisionKind : uint8_t { Obstacle = 0, OutOfBounds = 1, Vertex = 2, Edge = 3 };
const char* collision_kind_name(CollisionKind k);

struct CollisionEvent {
  int agent = 0;
  CollisionKind kind = CollisionKind::Vertex;
};

struct StepResult {
  std::vector<double> rewards;  // indexed by agent id; 0 for already-done agents
  std::vector<CollisionEvent> collisions;
  std::vector<int> newly_done;
  bool all_done = false;
};

struct StepOptions {
  // When true, finished agents keep occupying their goal cell instead of
  // vacating the board.
  bool done_agents_block = false;
};

// One synchronous transition. Resolution order: static cancels (obstacle /
// out-of-bounds), edge swaps, vertex-target groups, then cascaded cancels
// against stationary agents, iterated to a fixed point. Every cancelled mover
// stays put and records exactly one collision with the collision reward.
StepResult step(WorldState& state, std::span<const Action> joint_action,
                const RewardConfig& rewards = {}, const StepOptions& options = {});

Observation observe(const WorldState& state, int agent_id);

bool is_terminal(const WorldState& state, const EpisodeConfig& config);

struct AgentTask {
  Coord start;
  Coord goal;
};
using Instance = std::vector<AgentTask>;

// Distinct starts, distinct goals, start != goal per agent, goal reachable
// from start. Throws std::runtime_error naming the failing constraint when
// the map cannot host n_agents within bounded retries.
Instance sample_instance(const GridMap& map, int n_agents, uint64_t seed);

WorldState make_world(const GridMap& map, const Instance& instance);

}  // namespace mapfdt
