#include "mapfdt/env.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

namespace mapfdt {

bool WorldState::all_done() const {
  return std::all_of(agents.begin(), agents.end(), [](const AgentState& a) { return a.done; });
}

std::array<uint8_t, 50> Observation::pack_bits() const {
  std::array<uint8_t, 50> out{};
  for (int i = 0; i < kCells; ++i)
    if (data[size_t(i)]) out[size_t(i / 8)] |= uint8_t(1u << (i % 8));
  return out;
}

Observation Observation::unpack_bits(const uint8_t* bytes50) {
  Observation obs;
  for (int i = 0; i < kCells; ++i)
    obs.data[size_t(i)] = (bytes50[i / 8] >> (i % 8)) & 1u;
  return obs;
}

const char* collision_kind_name(CollisionKind k) {
  switch (k) {
    case CollisionKind::Obstacle:
      return "obstacle";
    case CollisionKind::OutOfBounds:
      return "out_of_bounds";
    case CollisionKind::Vertex:
      return "vertex";
    case CollisionKind::Edge:
      return "edge";
  }
  return "?";
}

StepResult step(WorldState& state, std::span<const Action> joint_action,
                const RewardConfig& rewards, const StepOptions& options) {
  const int n = int(state.agents.size());
  if (int(joint_action.size()) != n)
    throw std::invalid_argument("step: joint_action size " + std::to_string(joint_action.size()) +
                                " does not match agent count " + std::to_string(n));
  if (state.all_done()) throw std::logic_error("step: episode already terminated");

  StepResult result;
  result.rewards.assign(size_t(n), 0.0);

  // Active agents and their intended cells. Done agents are off the board
  // (unless done_agents_block) and their actions are ignored.
  std::vector<bool> active(static_cast<size_t>(n));
  std::vector<Coord> intended(static_cast<size_t>(n));
  std::vector<bool> moving(static_cast<size_t>(n), false);
  std::vector<bool> cancelled(static_cast<size_t>(n), false);
  std::vector<std::optional<CollisionKind>> collision(static_cast<size_t>(n));

  for (int i = 0; i < n; ++i) {
    active[size_t(i)] = !state.agents[size_t(i)].done;
    intended[size_t(i)] = state.agents[size_t(i)].pos;
  }

  auto cancel = [&](int i, CollisionKind kind) {
    if (cancelled[size_t(i)]) return;
    cancelled[size_t(i)] = true;
    moving[size_t(i)] = false;
    intended[size_t(i)] = state.agents[size_t(i)].pos;
    collision[size_t(i)] = kind;
  };

  // (1) intended cells; (2) static cancels
  for (int i = 0; i < n; ++i) {
    if (!active[size_t(i)]) continue;
    Action a = joint_action[size_t(i)];
    if (a == Action::Wait) continue;
    Coord target = apply_action(state.agents[size_t(i)].pos, a);
    if (!state.map.in_bounds(target)) {
      cancel(i, CollisionKind::OutOfBounds);
    } else if (state.map.is_obstacle(target)) {
      cancel(i, CollisionKind::Obstacle);
    } else {
      intended[size_t(i)] = target;
      moving[size_t(i)] = true;
    }
  }

  // (3a) edge swaps between surviving movers
  for (int i = 0; i < n; ++i) {
    if (!moving[size_t(i)]) continue;
    for (int j = i + 1; j < n; ++j) {
      if (!moving[size_t(j)]) continue;
      if (intended[size_t(i)] == state.agents[size_t(j)].pos &&
          intended[size_t(j)] == state.agents[size_t(i)].pos) {
        cancel(i, CollisionKind::Edge);
        cancel(j, CollisionKind::Edge);
      }
    }
  }

  // (3b) vertex groups: >=2 surviving movers intending the same cell
  {
    std::map<Coord, std::vector<int>> by_target;
    for (int i = 0; i < n; ++i)
      if (moving[size_t(i)]) by_target[intended[size_t(i)]].push_back(i);
    for (const auto& [cell, group] : by_target)
      if (group.size() >= 2)
        for (int i : group) cancel(i, CollisionKind::Vertex);
  }

  // (3c) cascade: movers whose target is held by a stationary agent (a waiter,
  // a cancelled mover, or a blocking done agent). Monotone, so the fixed point
  // is order-independent.
  {
    auto occupied_stationary = [&](Coord c) {
      for (int j = 0; j < n; ++j) {
        bool stationary_live = active[size_t(j)] && !moving[size_t(j)];
        bool blocking_done = options.done_agents_block && state.agents[size_t(j)].done;
        if ((stationary_live || blocking_done) && state.agents[size_t(j)].pos == c) return true;
      }
      return false;
    };
    bool changed = true;
    while (changed) {
      changed = false;
      for (int i = 0; i < n; ++i) {
        if (!moving[size_t(i)]) continue;
        if (occupied_stationary(intended[size_t(i)])) {
          cancel(i, CollisionKind::Vertex);
          changed = true;
        }
      }
    }
  }

  // (4)-(6) apply moves, rewards, arrivals
  for (int i = 0; i < n; ++i) {
    if (!active[size_t(i)]) continue;
    AgentState& agent = state.agents[size_t(i)];
    double reward = 0.0;
    if (collision[size_t(i)]) {
      reward = rewards.collision;
      result.collisions.push_back({i, *collision[size_t(i)]});
    } else if (moving[size_t(i)]) {
      agent.pos = intended[size_t(i)];
      reward = rewards.move;
    } else {
      reward = (agent.pos == agent.goal) ? rewards.wait_on_goal : rewards.wait_off_goal;
    }
    if (!collision[size_t(i)] && agent.pos == agent.goal) {
      reward += rewards.goal;
      agent.done = true;
      agent.arrival_time = state.t + 1;
      result.newly_done.push_back(i);
    }
    result.rewards[size_t(i)] = reward;
  }

  state.t += 1;
  result.all_done = state.all_done();
  if (result.all_done && rewards.episode_bonus_enabled && !result.newly_done.empty()) {
    for (int i = 0; i < n; ++i) result.rewards[size_t(i)] += rewards.episode_bonus;
  }
  return result;
}

Observation observe(const WorldState& state, int agent_id) {
  if (agent_id < 0 || agent_id >= int(state.agents.size()))
    throw std::invalid_argument("observe: bad agent id");
  const AgentState& self = state.agents[size_t(agent_id)];
  if (self.done) throw std::logic_error("observe: agent is done");

  Observation obs;
  const int r0 = self.pos.row - Observation::kCenter;  // global row of local row 0
  const int c0 = self.pos.col - Observation::kCenter;

  auto local = [&](Coord global) -> std::optional<Coord> {
    int lr = global.row - r0;
    int lc = global.col - c0;
    if (lr < 0 || lr >= Observation::kSize || lc < 0 || lc >= Observation::kSize)
      return std::nullopt;
    return Coord{lr, lc};
  };

  // channel 3: obstacles, with out-of-bounds treated as obstacle
  for (int lr = 0; lr < Observation::kSize; ++lr) {
    for (int lc = 0; lc < Observation::kSize; ++lc) {
      Coord g{r0 + lr, c0 + lc};
      if (!state.map.in_bounds(g) || state.map.is_obstacle(g)) obs.at(3, lr, lc) = 1;
    }
  }

  // channels 0 and 2: other live agents and their goals inside the window
  for (const AgentState& other : state.agents) {
    if (other.id == self.id || other.done) continue;
    if (auto l = local(other.pos)) obs.at(0, l->row, l->col) = 1;
    if (auto l = local(other.goal)) obs.at(2, l->row, l->col) = 1;
  }

  // channel 1: own goal; outside the window each coordinate clamps to the
  // window range, which lands on the box-distance-nearest edge cell
  {
    int lr = std::clamp(self.goal.row - r0, 0, Observation::kSize - 1);
    int lc = std::clamp(self.goal.col - c0, 0, Observation::kSize - 1);
    obs.at(1, lr, lc) = 1;
  }
  return obs;
}

bool is_terminal(const WorldState& state, const EpisodeConfig& config) {
  return state.all_done() || state.t >= config.horizon;
}

Instance sample_instance(const GridMap& map, int n_agents, uint64_t seed) {
  if (n_agents <= 0) throw std::invalid_argument("sample_instance: n_agents must be positive");
  std::vector<Coord> free = map.free_cells();
  if (int(free.size()) < 2 * n_agents)
    throw std::runtime_error("sample_instance: map has " + std::to_string(free.size()) +
                             " free cells, need " + std::to_string(2 * n_agents) +
                             " (2 per agent)");

  const std::vector<int> comp = free_components(map);
  auto comp_of = [&](Coord c) { return comp[size_t(c.row) * map.width + c.col]; };

  Rng rng(seed);
  const int max_attempts = 50;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<Coord> cells = free;
    rng.shuffle(cells);
    std::vector<Coord> starts(cells.begin(), cells.begin() + n_agents);

    // Goals drawn from all free cells: distinct among themselves, never equal
    // to the owner's start, same component as the start. Another agent's start
    // is a legal goal since finished agents vacate the board.
    Instance instance(static_cast<size_t>(n_agents));
    std::vector<uint8_t> goal_taken(size_t(map.cell_count()), 0);
    bool ok = true;
    for (int i = 0; i < n_agents && ok; ++i) {
      instance[size_t(i)].start = starts[size_t(i)];
      bool found = false;
      // Random scan offset keeps the choice unbiased while bounding the search.
      size_t offset = size_t(rng.uniform_below(free.size()));
      for (size_t k = 0; k < free.size(); ++k) {
        Coord cand = free[(offset + k) % free.size()];
        size_t idx = size_t(cand.row) * map.width + cand.col;
        if (goal_taken[idx] || cand == starts[size_t(i)]) continue;
        if (comp_of(cand) != comp_of(starts[size_t(i)])) continue;
        instance[size_t(i)].goal = cand;
        goal_taken[idx] = 1;
        found = true;
        break;
      }
      ok = found;
    }
    if (ok) return instance;
  }
  throw std::runtime_error(
      "sample_instance: could not place distinct reachable goals for " +
      std::to_string(n_agents) + " agents after " + std::to_string(max_attempts) +
      " attempts (map too dense or fragmented)");
}

WorldState make_world(const GridMap& map, const Instance& instance) {
  WorldState state;
  state.map = map;
  state.agents.resize(instance.size());
  for (size_t i = 0; i < instance.size(); ++i) {
    AgentState& a = state.agents[i];
    a.id = int(i);
    a.pos = instance[i].start;
    a.goal = instance[i].goal;
    if (!map.is_free(a.pos) || !map.is_free(a.goal))
      throw std::invalid_argument("make_world: agent start/goal not on a free cell");
  }
  return state;
}

}  // namespace mapfdt
