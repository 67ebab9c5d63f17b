#pragma once

#include <string>

#include "mapfdt/env.hpp"

namespace mapfdt {

// On-disk problem file:
//   {width, height, obstacles: [[row,col]...], agents: [{start:[r,c], goal:[r,c]}...], seed}
struct ProblemFile {
  GridMap map;
  Instance instance;
  uint64_t seed = 0;
};

std::string problem_to_json(const ProblemFile& p);
ProblemFile problem_from_json(const std::string& json_text);

void save_problem(const ProblemFile& p, const std::string& path);
ProblemFile load_problem(const std::string& path);

}  // namespace mapfdt
