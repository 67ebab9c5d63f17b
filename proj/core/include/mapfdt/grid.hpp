#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "mapfdt/util/rng.hpp"

namespace mapfdt {

struct Coord {
  int row = 0;
  int col = 0;
  auto operator<=>(const Coord&) const = default;
};

enum class Action : uint8_t { Wait = 0, North = 1, East = 2, South = 3, West = 4 };
inline constexpr int kNumActions = 5;
inline constexpr Action kAllActions[kNumActions] = {Action::Wait, Action::North, Action::East,
                                                    Action::South, Action::West};

Coord apply_action(Coord c, Action a);
// Action moving `from` to `to`; the cells must be equal or 4-adjacent.
Action action_between(Coord from, Coord to);
const char* action_name(Action a);

struct GridMap {
  int width = 0;
  int height = 0;
  double density = 0.0;
  std::vector<uint8_t> obstacles;  // row-major, height*width

  bool in_bounds(Coord c) const {
    return c.row >= 0 && c.row < height && c.col >= 0 && c.col < width;
  }
  bool is_obstacle(Coord c) const { return obstacles[size_t(c.row) * width + c.col] != 0; }
  bool is_free(Coord c) const { return in_bounds(c) && !is_obstacle(c); }
  int cell_count() const { return width * height; }
  int obstacle_count() const;
  std::vector<Coord> free_cells() const;

  // `.` free, `#` obstacle; agents drawn as letters when provided.
  std::string to_text(const std::vector<Coord>& agents = {}) const;
};

// floor(density*width*height) obstacles placed uniformly without replacement.
GridMap generate_map(int width, int height, double density, uint64_t seed);

// 4-connected component label per cell (-1 for obstacles).
std::vector<int> free_components(const GridMap& map);

// BFS distance from `from` over free cells, -1 where unreachable.
// `blocked` optionally marks extra cells as impassable (row-major flags).
std::vector<int> bfs_distance_map(const GridMap& map, Coord from,
                                  const std::vector<uint8_t>* blocked = nullptr);

}  // namespace mapfdt
