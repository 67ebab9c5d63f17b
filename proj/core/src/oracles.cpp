#include "mapfdt/oracles.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <queue>

namespace mapfdt::oracle {

namespace {

struct JointState {
  int p1, p2;  // flat cell indices; -1 once the agent is done
  bool operator==(const JointState&) const = default;
};

}  // namespace

std::optional<int> joint_optimal_soc_2agents(const GridMap& map, const Instance& instance,
                                             int max_cost) {
  if (instance.size() != 2) throw std::invalid_argument("oracle handles exactly 2 agents");
  const int cells = map.cell_count();
  auto flat = [&](Coord c) { return c.row * map.width + c.col; };
  const int g1 = flat(instance[0].goal), g2 = flat(instance[1].goal);

  // state encoding: (p1+1) + (cells+1) * (p2+1), -1 = done/vacated
  auto encode = [&](int p1, int p2) { return (p1 + 1) + (cells + 1) * (p2 + 1); };
  std::vector<int> best(size_t(cells + 1) * size_t(cells + 1), -1);

  auto moves_of = [&](int p) {
    std::vector<int> out;
    if (p < 0) {
      out.push_back(-1);  // done agents stay off the board
      return out;
    }
    Coord c{p / map.width, p % map.width};
    for (Action a : kAllActions) {
      Coord n = apply_action(c, a);
      if (map.is_free(n)) out.push_back(flat(n));
    }
    return out;
  };

  int sp1 = flat(instance[0].start), sp2 = flat(instance[1].start);
  if (sp1 == g1) sp1 = -1;  // degenerate: already at goal, arrival time 0
  if (sp2 == g2) sp2 = -1;

  using QItem = std::pair<int, std::pair<int, int>>;  // (cost, (p1, p2))
  std::priority_queue<QItem, std::vector<QItem>, std::greater<>> open;
  best[size_t(encode(sp1, sp2))] = 0;
  open.push({0, {sp1, sp2}});

  while (!open.empty()) {
    auto [cost, state] = open.top();
    open.pop();
    auto [p1, p2] = state;
    if (best[size_t(encode(p1, p2))] != cost) continue;
    if (p1 < 0 && p2 < 0) return cost;
    if (cost > max_cost) return std::nullopt;

    const int active = (p1 >= 0 ? 1 : 0) + (p2 >= 0 ? 1 : 0);
    for (int n1 : moves_of(p1)) {
      for (int n2 : moves_of(p2)) {
        if (n1 >= 0 && n2 >= 0) {
          if (n1 == n2) continue;                  // vertex conflict
          if (n1 == p2 && n2 == p1) continue;      // edge swap
        }
        int q1 = (n1 == g1) ? -1 : n1;  // arrival vacates
        int q2 = (n2 == g2) ? -1 : n2;
        int ncost = cost + active;
        size_t key = size_t(encode(q1, q2));
        if (best[key] == -1 || ncost < best[key]) {
          best[key] = ncost;
          open.push({ncost, {q1, q2}});
        }
      }
    }
  }
  return std::nullopt;
}

std::optional<int> spacetime_bfs_cost(const GridMap& map, Coord start, Coord goal,
                                      std::span<const SpaceTimeConstraint> constraints,
                                      int horizon, int agent) {
  if (!map.is_free(start) || !map.is_free(goal)) return std::nullopt;
  auto applies = [&](const SpaceTimeConstraint& c) { return c.agent == agent || c.agent == -1; };
  auto vertex_blocked = [&](Coord c, int t) {
    for (const auto& sc : constraints)
      if (applies(sc) && sc.type == SpaceTimeConstraint::Type::Vertex && sc.t == t &&
          sc.cell == c)
        return true;
    return false;
  };
  auto edge_blocked = [&](Coord from, Coord to, int t) {
    for (const auto& sc : constraints)
      if (applies(sc) && sc.type == SpaceTimeConstraint::Type::Edge && sc.t == t &&
          sc.from == from && sc.cell == to)
        return true;
    return false;
  };

  if (vertex_blocked(start, 0)) return std::nullopt;
  const int cells = map.cell_count();
  std::vector<uint8_t> seen(size_t(horizon + 1) * size_t(cells), 0);
  auto flat = [&](Coord c) { return c.row * map.width + c.col; };
  std::deque<std::pair<Coord, int>> queue;
  queue.push_back({start, 0});
  seen[size_t(flat(start))] = 1;
  while (!queue.empty()) {
    auto [cell, t] = queue.front();
    queue.pop_front();
    if (cell == goal) return t;
    if (t >= horizon) continue;
    for (Action a : kAllActions) {
      Coord n = apply_action(cell, a);
      if (!map.is_free(n)) continue;
      if (vertex_blocked(n, t + 1)) continue;
      if (edge_blocked(cell, n, t + 1)) continue;
      size_t key = size_t(t + 1) * size_t(cells) + size_t(flat(n));
      if (!seen[key]) {
        seen[key] = 1;
        queue.push_back({n, t + 1});
      }
    }
  }
  return std::nullopt;
}

bool flood_fill_reachable(const GridMap& map, Coord from, Coord to) {
  if (!map.is_free(from) || !map.is_free(to)) return false;
  std::vector<uint8_t> seen(size_t(map.cell_count()), 0);
  std::deque<Coord> queue{from};
  seen[size_t(from.row) * map.width + from.col] = 1;
  while (!queue.empty()) {
    Coord c = queue.front();
    queue.pop_front();
    if (c == to) return true;
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      Coord n{c.row + dr[k], c.col + dc[k]};
      if (!map.is_free(n)) continue;
      size_t idx = size_t(n.row) * map.width + n.col;
      if (!seen[idx]) {
        seen[idx] = 1;
        queue.push_back(n);
      }
    }
  }
  return false;
}

Coord nearest_window_cell_exhaustive(Coord goal, int r0, int c0) {
  // Squared Euclidean distance has a unique integer minimizer over the box
  // (coordinates minimize independently), so no tie-breaking is needed.
  Coord best{r0, c0};
  long best_dist = -1;
  for (int r = r0; r < r0 + 10; ++r) {
    for (int c = c0; c < c0 + 10; ++c) {
      long dr = goal.row - r, dc = goal.col - c;
      long dist = dr * dr + dc * dc;
      if (best_dist == -1 || dist < best_dist) {
        best_dist = dist;
        best = {r, c};
      }
    }
  }
  return best;
}

}  // namespace mapfdt::oracle
