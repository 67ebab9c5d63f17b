#include "mapfdt/planner.hpp"

#include <algorithm>
#include <cstdlib>
#include <memory>
#include <nlohmann/json.hpp>
#include <queue>
#include <unordered_set>

#include "mapfdt/util/binio.hpp"

namespace mapfdt {

namespace {

inline int manhattan(Coord a, Coord b) {
  return std::abs(a.row - b.row) + std::abs(a.col - b.col);
}

// (cell, t) and (from, to, t) packed into 64-bit keys for the reservation sets.
inline uint64_t vertex_key(const GridMap& map, Coord c, int t) {
  return uint64_t(t) * uint64_t(map.cell_count()) + uint64_t(c.row) * map.width + c.col;
}

inline uint64_t edge_key(const GridMap& map, Coord from, Coord to, int t) {
  uint64_t cells = uint64_t(map.cell_count());
  uint64_t f = uint64_t(from.row) * map.width + from.col;
  uint64_t g = uint64_t(to.row) * map.width + to.col;
  return (uint64_t(t) * cells + f) * cells + g;
}

struct ConstraintIndex {
  std::unordered_set<uint64_t> vertices;
  std::unordered_set<uint64_t> edges;
  int max_t = 0;

  ConstraintIndex(const GridMap& map, std::span<const SpaceTimeConstraint> constraints,
                  int agent) {
    for (const SpaceTimeConstraint& c : constraints) {
      if (c.agent != agent && c.agent != -1) continue;
      max_t = std::max(max_t, c.t);
      if (c.type == SpaceTimeConstraint::Type::Vertex)
        vertices.insert(vertex_key(map, c.cell, c.t));
      else
        edges.insert(edge_key(map, c.from, c.cell, c.t));
    }
  }
  bool vertex_forbidden(const GridMap& map, Coord c, int t) const {
    return !vertices.empty() && vertices.count(vertex_key(map, c, t)) > 0;
  }
  bool edge_forbidden(const GridMap& map, Coord from, Coord to, int t) const {
    return !edges.empty() && edges.count(edge_key(map, from, to, t)) > 0;
  }
};

}  // namespace

std::optional<std::vector<Coord>> single_agent_astar(const GridMap& map, Coord start, Coord goal,
                                                     std::span<const SpaceTimeConstraint> constraints,
                                                     int horizon, int agent) {
  if (!map.is_free(start) || !map.is_free(goal)) return std::nullopt;
  const ConstraintIndex index(map, constraints, agent);

  struct Node {
    int f;
    int t;
    uint8_t action;  // action that produced this state, for tie-breaking
    uint64_t seq;
    int32_t cell;
  };
  struct Later {
    bool operator()(const Node& a, const Node& b) const {
      if (a.f != b.f) return a.f > b.f;
      if (a.t != b.t) return a.t > b.t;
      if (a.action != b.action) return a.action > b.action;
      return a.seq > b.seq;
    }
  };

  const int cells = map.cell_count();
  const size_t states = size_t(horizon + 1) * size_t(cells);
  std::vector<int32_t> parent(states, -2);  // -2 unvisited, -1 root, else parent cell index
  auto state_idx = [&](int cell, int t) { return size_t(t) * size_t(cells) + size_t(cell); };
  auto cell_of = [&](Coord c) { return int32_t(c.row * map.width + c.col); };
  auto coord_of = [&](int32_t cell) { return Coord{cell / map.width, cell % map.width}; };

  std::priority_queue<Node, std::vector<Node>, Later> open;
  uint64_t seq = 0;

  if (index.vertex_forbidden(map, start, 0)) return std::nullopt;
  open.push({manhattan(start, goal), 0, 0, seq++, cell_of(start)});
  std::vector<uint8_t> closed(states, 0);
  parent[state_idx(cell_of(start), 0)] = -1;

  while (!open.empty()) {
    Node node = open.top();
    open.pop();
    size_t sidx = state_idx(node.cell, node.t);
    if (closed[sidx]) continue;
    closed[sidx] = 1;
    Coord here = coord_of(node.cell);

    if (here == goal) {
      std::vector<Coord> path(size_t(node.t) + 1);
      int32_t cell = node.cell;
      for (int t = node.t; t >= 0; --t) {
        path[size_t(t)] = coord_of(cell);
        cell = parent[state_idx(cell, t)];
      }
      return path;
    }
    if (node.t >= horizon) continue;

    for (uint8_t code = 0; code < kNumActions; ++code) {
      Coord next = apply_action(here, Action(code));
      if (!map.is_free(next)) continue;
      int nt = node.t + 1;
      if (index.vertex_forbidden(map, next, nt)) continue;
      if (index.edge_forbidden(map, here, next, nt)) continue;
      size_t nidx = state_idx(cell_of(next), nt);
      if (parent[nidx] != -2 || closed[nidx]) continue;
      parent[nidx] = node.cell;
      open.push({nt + manhattan(next, goal), nt, code, seq++, cell_of(next)});
    }
  }
  return std::nullopt;
}

JointPlan JointPlan::from_paths(std::vector<std::vector<Coord>> paths) {
  JointPlan plan;
  plan.paths = std::move(paths);
  for (const auto& path : plan.paths) {
    if (path.empty()) throw MalformedPlanError("plan path is empty");
    int arrival = int(path.size()) - 1;
    plan.soc += arrival;
    plan.makespan = std::max(plan.makespan, arrival);
  }
  return plan;
}

namespace {

// Position of agent at time t under vacate-after-arrival, or nullopt if gone.
inline std::optional<Coord> position_at(const std::vector<Coord>& path, int t) {
  if (t >= int(path.size())) return std::nullopt;
  return path[size_t(t)];
}

std::vector<PlanConflict> find_conflicts(const JointPlan& plan, bool first_only) {
  std::vector<PlanConflict> out;
  const int n = int(plan.paths.size());
  int max_t = 0;
  for (const auto& p : plan.paths) max_t = std::max(max_t, int(p.size()) - 1);

  for (int t = 0; t <= max_t; ++t) {
    // swaps completing at t come before occupations at t
    if (t >= 1) {
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          auto pi0 = position_at(plan.paths[size_t(i)], t - 1);
          auto pi1 = position_at(plan.paths[size_t(i)], t);
          auto pj0 = position_at(plan.paths[size_t(j)], t - 1);
          auto pj1 = position_at(plan.paths[size_t(j)], t);
          if (pi0 && pi1 && pj0 && pj1 && *pi0 == *pj1 && *pi1 == *pj0 && !(*pi0 == *pi1)) {
            out.push_back({PlanConflict::Kind::Edge, i, j, *pi1, *pj1, t});
            if (first_only) return out;
          }
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        auto pi = position_at(plan.paths[size_t(i)], t);
        auto pj = position_at(plan.paths[size_t(j)], t);
        if (pi && pj && *pi == *pj) {
          out.push_back({PlanConflict::Kind::Vertex, i, j, *pi, {}, t});
          if (first_only) return out;
        }
      }
    }
  }
  return out;
}

}  // namespace

std::vector<PlanConflict> validate_plan(const GridMap& map, const JointPlan& plan) {
  for (size_t i = 0; i < plan.paths.size(); ++i) {
    const auto& path = plan.paths[i];
    if (path.empty()) throw MalformedPlanError("agent " + std::to_string(i) + ": empty path");
    for (size_t t = 0; t < path.size(); ++t) {
      if (!map.in_bounds(path[t]))
        throw MalformedPlanError("agent " + std::to_string(i) + ": cell out of bounds at t=" +
                                 std::to_string(t));
      if (map.is_obstacle(path[t]))
        throw MalformedPlanError("agent " + std::to_string(i) + ": cell on obstacle at t=" +
                                 std::to_string(t));
      if (t > 0 && manhattan(path[t - 1], path[t]) > 1)
        throw MalformedPlanError("agent " + std::to_string(i) +
                                 ": non-adjacent consecutive cells at t=" + std::to_string(t));
    }
  }
  return find_conflicts(plan, /*first_only=*/false);
}

PlanResult plan_cbs(const GridMap& map, const Instance& instance, const PlannerOptions& options) {
  PlanResult result;
  const int n = int(instance.size());

  struct CTNode {
    std::vector<SpaceTimeConstraint> constraints;
    std::vector<std::vector<Coord>> paths;
    int cost = 0;
    uint64_t id = 0;
  };
  struct Worse {
    bool operator()(const std::shared_ptr<CTNode>& a, const std::shared_ptr<CTNode>& b) const {
      if (a->cost != b->cost) return a->cost > b->cost;
      return a->id > b->id;
    }
  };

  auto root = std::make_shared<CTNode>();
  root->paths.resize(size_t(n));
  for (int i = 0; i < n; ++i) {
    auto path = single_agent_astar(map, instance[size_t(i)].start, instance[size_t(i)].goal, {},
                                   options.horizon, i);
    if (!path) {
      result.error = "no path for agent " + std::to_string(i) + " within horizon";
      result.blocking_agent = i;
      return result;
    }
    root->paths[size_t(i)] = std::move(*path);
    root->cost += int(root->paths[size_t(i)].size()) - 1;
  }

  std::priority_queue<std::shared_ptr<CTNode>, std::vector<std::shared_ptr<CTNode>>, Worse> open;
  uint64_t next_id = 0;
  root->id = next_id++;
  open.push(root);

  while (!open.empty()) {
    if (result.nodes_expanded >= options.node_budget) {
      result.error = "node budget exhausted (" + std::to_string(options.node_budget) + " nodes)";
      return result;
    }
    auto node = open.top();
    open.pop();
    ++result.nodes_expanded;

    JointPlan candidate = JointPlan::from_paths(node->paths);
    auto conflicts = find_conflicts(candidate, /*first_only=*/true);
    if (conflicts.empty()) {
      result.plan = std::move(candidate);
      return result;
    }

    const PlanConflict& c = conflicts.front();
    for (int side = 0; side < 2; ++side) {
      const int agent = (side == 0) ? c.agent1 : c.agent2;
      SpaceTimeConstraint constraint;
      constraint.agent = agent;
      constraint.t = c.t;
      if (c.kind == PlanConflict::Kind::Vertex) {
        constraint.type = SpaceTimeConstraint::Type::Vertex;
        constraint.cell = c.cell;
      } else {
        constraint.type = SpaceTimeConstraint::Type::Edge;
        // each side is barred from its own directed move
        const auto& path = node->paths[size_t(agent)];
        constraint.from = path[size_t(c.t) - 1];
        constraint.cell = path[size_t(c.t)];
      }
      auto child = std::make_shared<CTNode>();
      child->constraints = node->constraints;
      child->constraints.push_back(constraint);
      child->paths = node->paths;
      auto path = single_agent_astar(map, instance[size_t(agent)].start,
                                     instance[size_t(agent)].goal, child->constraints,
                                     options.horizon, agent);
      if (!path) continue;  // this branch is infeasible
      child->paths[size_t(agent)] = std::move(*path);
      child->cost = 0;
      for (const auto& p : child->paths) child->cost += int(p.size()) - 1;
      child->id = next_id++;
      open.push(std::move(child));
    }
  }
  result.error = "constraint tree exhausted: instance infeasible within horizon";
  return result;
}

PlanResult plan_prioritized(const GridMap& map, const Instance& instance,
                            std::span<const int> priority_order, const PlannerOptions& options) {
  PlanResult result;
  const int n = int(instance.size());
  std::vector<int> order(priority_order.begin(), priority_order.end());
  if (order.empty()) {
    order.resize(size_t(n));
    for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  }
  if (int(order.size()) != n) {
    result.error = "priority order size mismatch";
    return result;
  }

  std::vector<std::vector<Coord>> paths(static_cast<size_t>(n));
  std::vector<SpaceTimeConstraint> reservations;
  for (int agent : order) {
    auto path = single_agent_astar(map, instance[size_t(agent)].start,
                                   instance[size_t(agent)].goal, reservations, options.horizon,
                                   agent);
    if (!path) {
      result.error = "prioritized planning blocked at agent " + std::to_string(agent);
      result.blocking_agent = agent;
      return result;
    }
    // Reserve the path for all lower-priority agents: cells while present,
    // and reverse edges to bar swaps.
    for (size_t t = 0; t < path->size(); ++t) {
      SpaceTimeConstraint v;
      v.agent = -1;
      v.type = SpaceTimeConstraint::Type::Vertex;
      v.cell = (*path)[t];
      v.t = int(t);
      reservations.push_back(v);
      if (t > 0 && !((*path)[t] == (*path)[t - 1])) {
        SpaceTimeConstraint e;
        e.agent = -1;
        e.type = SpaceTimeConstraint::Type::Edge;
        e.from = (*path)[t];
        e.cell = (*path)[t - 1];
        e.t = int(t);
        reservations.push_back(e);
      }
    }
    paths[size_t(agent)] = std::move(*path);
  }
  result.plan = JointPlan::from_paths(std::move(paths));
  return result;
}

using nlohmann::json;

std::string plan_to_json(const JointPlan& plan) {
  json j;
  json paths = json::array();
  for (const auto& path : plan.paths) {
    json p = json::array();
    for (const Coord& c : path) p.push_back({c.row, c.col});
    paths.push_back(std::move(p));
  }
  j["paths"] = std::move(paths);
  j["soc"] = plan.soc;
  j["makespan"] = plan.makespan;
  return j.dump(2) + "\n";
}

JointPlan plan_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  std::vector<std::vector<Coord>> paths;
  for (const auto& p : j.at("paths")) {
    std::vector<Coord> path;
    for (const auto& cell : p) path.push_back({cell.at(0).get<int>(), cell.at(1).get<int>()});
    paths.push_back(std::move(path));
  }
  JointPlan plan = JointPlan::from_paths(std::move(paths));
  if (j.contains("soc") && j["soc"].get<int>() != plan.soc)
    throw MalformedPlanError("plan file: soc field inconsistent with paths");
  if (j.contains("makespan") && j["makespan"].get<int>() != plan.makespan)
    throw MalformedPlanError("plan file: makespan field inconsistent with paths");
  return plan;
}

void save_plan(const JointPlan& plan, const std::string& path) {
  write_file_bytes(path, plan_to_json(plan));
}

JointPlan load_plan(const std::string& path) {
  return plan_from_json(read_file_bytes(path));
}

}  // namespace mapfdt
