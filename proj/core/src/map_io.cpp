#include "mapfdt/map_io.hpp"

#include <nlohmann/json.hpp>

#include "mapfdt/util/binio.hpp"

namespace mapfdt {

using nlohmann::json;

std::string problem_to_json(const ProblemFile& p) {
  json j;
  j["width"] = p.map.width;
  j["height"] = p.map.height;
  json obstacles = json::array();
  for (int r = 0; r < p.map.height; ++r)
    for (int c = 0; c < p.map.width; ++c)
      if (p.map.is_obstacle({r, c})) obstacles.push_back({r, c});
  j["obstacles"] = std::move(obstacles);
  json agents = json::array();
  for (const AgentTask& task : p.instance) {
    agents.push_back({{"start", {task.start.row, task.start.col}},
                      {"goal", {task.goal.row, task.goal.col}}});
  }
  j["agents"] = std::move(agents);
  j["seed"] = p.seed;
  return j.dump(2) + "\n";
}

ProblemFile problem_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  ProblemFile p;
  p.map.width = j.at("width").get<int>();
  p.map.height = j.at("height").get<int>();
  if (p.map.width <= 0 || p.map.height <= 0)
    throw std::runtime_error("problem file: non-positive grid dimensions");
  p.map.obstacles.assign(size_t(p.map.width) * p.map.height, 0);
  for (const auto& cell : j.at("obstacles")) {
    Coord c{cell.at(0).get<int>(), cell.at(1).get<int>()};
    if (!p.map.in_bounds(c)) throw std::runtime_error("problem file: obstacle out of bounds");
    p.map.obstacles[size_t(c.row) * p.map.width + c.col] = 1;
  }
  p.map.density = double(p.map.obstacle_count()) / p.map.cell_count();
  for (const auto& agent : j.at("agents")) {
    AgentTask task;
    task.start = {agent.at("start").at(0).get<int>(), agent.at("start").at(1).get<int>()};
    task.goal = {agent.at("goal").at(0).get<int>(), agent.at("goal").at(1).get<int>()};
    if (!p.map.is_free(task.start) || !p.map.is_free(task.goal))
      throw std::runtime_error("problem file: agent start/goal not on a free cell");
    p.instance.push_back(task);
  }
  p.seed = j.value("seed", uint64_t(0));
  return p;
}

void save_problem(const ProblemFile& p, const std::string& path) {
  write_file_bytes(path, problem_to_json(p));
}

ProblemFile load_problem(const std::string& path) {
  return problem_from_json(read_file_bytes(path));
}

}  // namespace mapfdt
