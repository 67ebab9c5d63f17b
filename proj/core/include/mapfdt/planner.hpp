#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapfdt/env.hpp"

namespace mapfdt {

// Space-time reservation: vertex (cell @ t) or directed edge (from -> cell,
// arriving at t). An agent violating one of its constraints is pruned in the
// low-level search.
struct SpaceTimeConstraint {
  enum class Type : uint8_t { Vertex, Edge };
  int agent = -1;
  Type type = Type::Vertex;
  Coord cell;  // vertex cell, or edge arrival cell
  Coord from;  // edge departure cell (unused for vertex)
  int t = 0;
};

struct JointPlan {
  // paths[i][t] is agent i's cell at timestep t; path.front() = start,
  // path.back() = goal. Agents vacate the board after their last index.
  std::vector<std::vector<Coord>> paths;
  int soc = 0;       // sum over agents of (path length - 1)
  int makespan = 0;  // max over agents of (path length - 1)

  static JointPlan from_paths(std::vector<std::vector<Coord>> paths);
  int arrival_time(int agent) const { return int(paths[size_t(agent)].size()) - 1; }
};

struct PlanConflict {
  enum class Kind : uint8_t { Vertex, Edge };
  Kind kind = Kind::Vertex;
  int agent1 = -1;
  int agent2 = -1;
  Coord cell;   // vertex cell, or edge arrival cell of agent1
  Coord cell2;  // edge arrival cell of agent2 (unused for vertex)
  int t = 0;    // vertex: occupation time; edge: arrival time of the swap
};

struct MalformedPlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PlannerOptions {
  int horizon = 256;
  int node_budget = 100000;  // CBS constraint-tree nodes
};

struct PlanResult {
  std::optional<JointPlan> plan;
  std::string error;          // set when !plan
  int blocking_agent = -1;    // prioritized planning: agent that failed
  int nodes_expanded = 0;     // CBS high-level nodes
  bool ok() const { return plan.has_value(); }
};

// Shortest constraint-respecting space-time path, A* with Manhattan heuristic.
// Ties broken toward smaller timestep, then action order Wait<N<E<S<W.
// nullopt when no path exists within the horizon.
std::optional<std::vector<Coord>> single_agent_astar(const GridMap& map, Coord start, Coord goal,
                                                     std::span<const SpaceTimeConstraint> constraints,
                                                     int horizon, int agent = -1);

// Conflict-based search; sum-of-costs optimal, splitting on the earliest conflict.
PlanResult plan_cbs(const GridMap& map, const Instance& instance, const PlannerOptions& options = {});

// Agents planned in the given priority order; each treats earlier paths as
// space-time obstacles. Fast, but incomplete.
PlanResult plan_prioritized(const GridMap& map, const Instance& instance,
                            std::span<const int> priority_order, const PlannerOptions& options = {});

// Every vertex/edge conflict under vacate-after-arrival occupancy. Throws
// MalformedPlanError for paths with non-adjacent consecutive cells, cells off
// the map, or cells on obstacles.
std::vector<PlanConflict> validate_plan(const GridMap& map, const JointPlan& plan);

std::string plan_to_json(const JointPlan& plan);
JointPlan plan_from_json(const std::string& json_text);
void save_plan(const JointPlan& plan, const std::string& path);
JointPlan load_plan(const std::string& path);

}  // namespace mapfdt
