#include "mapfdt/grid.hpp"

#include <cmath>
#include <cstdlib>
#include <deque>
#include <numeric>
#include <stdexcept>

namespace mapfdt {

Coord apply_action(Coord c, Action a) {
  switch (a) {
    case Action::Wait:
      return c;
    case Action::North:
      return {c.row - 1, c.col};
    case Action::East:
      return {c.row, c.col + 1};
    case Action::South:
      return {c.row + 1, c.col};
    case Action::West:
      return {c.row, c.col - 1};
  }
  throw std::invalid_argument("apply_action: bad action code");
}

Action action_between(Coord from, Coord to) {
  int dr = to.row - from.row;
  int dc = to.col - from.col;
  if (dr == 0 && dc == 0) return Action::Wait;
  if (dr == -1 && dc == 0) return Action::North;
  if (dr == 0 && dc == 1) return Action::East;
  if (dr == 1 && dc == 0) return Action::South;
  if (dr == 0 && dc == -1) return Action::West;
  throw std::invalid_argument("action_between: cells are not adjacent");
}

const char* action_name(Action a) {
  switch (a) {
    case Action::Wait:
      return "WAIT";
    case Action::North:
      return "NORTH";
    case Action::East:
      return "EAST";
    case Action::South:
      return "SOUTH";
    case Action::West:
      return "WEST";
  }
  return "?";
}

int GridMap::obstacle_count() const {
  return int(std::accumulate(obstacles.begin(), obstacles.end(), 0));
}

std::vector<Coord> GridMap::free_cells() const {
  std::vector<Coord> out;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (!is_obstacle({r, c})) out.push_back({r, c});
  return out;
}

std::string GridMap::to_text(const std::vector<Coord>& agents) const {
  std::string out;
  out.reserve(size_t(height) * (width + 1));
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      char ch = is_obstacle({r, c}) ? '#' : '.';
      for (size_t i = 0; i < agents.size(); ++i) {
        if (agents[i].row == r && agents[i].col == c) {
          ch = char('a' + int(i % 26));
          break;
        }
      }
      out.push_back(ch);
    }
    out.push_back('\n');
  }
  return out;
}

GridMap generate_map(int width, int height, double density, uint64_t seed) {
  if (width <= 0 || height <= 0 || width * height < 4)
    throw std::invalid_argument("generate_map: grid must have at least 4 cells");
  if (density < 0.0 || density > 0.5)
    throw std::invalid_argument("generate_map: density must be in [0, 0.5]");

  GridMap map;
  map.width = width;
  map.height = height;
  map.density = density;
  map.obstacles.assign(size_t(width) * height, 0);

  const int n_obstacles = int(std::floor(density * width * height));
  // Partial Fisher-Yates over cell indices gives the first n_obstacles draws
  // without replacement.
  std::vector<int> cells(size_t(width) * height);
  std::iota(cells.begin(), cells.end(), 0);
  Rng rng(seed);
  for (int i = 0; i < n_obstacles; ++i) {
    size_t j = i + size_t(rng.uniform_below(cells.size() - i));
    std::swap(cells[i], cells[j]);
    map.obstacles[size_t(cells[i])] = 1;
  }
  return map;
}

std::vector<int> free_components(const GridMap& map) {
  std::vector<int> comp(size_t(map.cell_count()), -1);
  int next = 0;
  std::deque<int> queue;
  for (int start = 0; start < map.cell_count(); ++start) {
    if (comp[size_t(start)] != -1 || map.obstacles[size_t(start)]) continue;
    comp[size_t(start)] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      int idx = queue.front();
      queue.pop_front();
      Coord c{idx / map.width, idx % map.width};
      for (Action a : {Action::North, Action::East, Action::South, Action::West}) {
        Coord n = apply_action(c, a);
        if (!map.is_free(n)) continue;
        int nidx = n.row * map.width + n.col;
        if (comp[size_t(nidx)] == -1) {
          comp[size_t(nidx)] = next;
          queue.push_back(nidx);
        }
      }
    }
    ++next;
  }
  return comp;
}

std::vector<int> bfs_distance_map(const GridMap& map, Coord from,
                                  const std::vector<uint8_t>* blocked) {
  std::vector<int> dist(size_t(map.cell_count()), -1);
  if (!map.is_free(from)) return dist;
  if (blocked && (*blocked)[size_t(from.row) * map.width + from.col]) return dist;
  std::deque<Coord> queue;
  dist[size_t(from.row) * map.width + from.col] = 0;
  queue.push_back(from);
  while (!queue.empty()) {
    Coord c = queue.front();
    queue.pop_front();
    int d = dist[size_t(c.row) * map.width + c.col];
    for (Action a : {Action::North, Action::East, Action::South, Action::West}) {
      Coord n = apply_action(c, a);
      if (!map.is_free(n)) continue;
      size_t nidx = size_t(n.row) * map.width + n.col;
      if (blocked && (*blocked)[nidx]) continue;
      if (dist[nidx] == -1) {
        dist[nidx] = d + 1;
        queue.push_back(n);
      }
    }
  }
  return dist;
}

}  // namespace mapfdt
