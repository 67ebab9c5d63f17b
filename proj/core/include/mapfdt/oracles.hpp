#pragma once

// Brute-force reference implementations for verification: they deliberately
// share no search code with the planner or environment, enumerating joint
// states or space-time nodes directly, so the main implementations can be
// checked against an independent path. Used by the test suites and the
// `verify` subcommand.

#include <optional>
#include <span>
#include <vector>

#include "mapfdt/env.hpp"
#include "mapfdt/planner.hpp"

namespace mapfdt::oracle {

// Optimal sum-of-costs for a 2-agent instance by Dijkstra over the coupled
// state space (positions + done flags, vacate-on-arrival, vertex/edge
// conflicts forbidden). nullopt when no collision-free solution exists.
std::optional<int> joint_optimal_soc_2agents(const GridMap& map, const Instance& instance,
                                             int max_cost = 1 << 20);

// Shortest constrained space-time path length (number of moves) by plain BFS
// over (cell, timestep). nullopt if unreachable within the horizon.
std::optional<int> spacetime_bfs_cost(const GridMap& map, Coord start, Coord goal,
                                      std::span<const SpaceTimeConstraint> constraints,
                                      int horizon, int agent = -1);

// Reachability by fresh flood fill (no shared component code).
bool flood_fill_reachable(const GridMap& map, Coord from, Coord to);

// Nearest window cell to `goal` by exhaustive search over the window
// (rows r0..r0+9, cols c0..c0+9), squared Euclidean distance.
Coord nearest_window_cell_exhaustive(Coord goal, int r0, int c0);

}  // namespace mapfdt::oracle
