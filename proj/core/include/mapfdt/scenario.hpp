#pragma once

#include <functional>

#include "mapfdt/advisor.hpp"
#include "mapfdt/policy.hpp"

namespace mapfdt {

struct GoalChangeEvent {
  int trigger_t = 0;
  double fraction = 0.25;
  std::vector<int> agents;      // selected up front; skipped at runtime if done
  std::vector<Coord> new_goals;  // distinct from every current goal, reachable
};

struct ScenarioConfig {
  enum class Mode { Static, StaticRescue, Dynamic };
  Mode mode = Mode::Dynamic;
  int t_change = 15;
  int advisor_window = 5;
  double fraction = 0.25;
  std::string advisor_kind = "oracle";  // oracle | llm | none
  int rescue_budget = 128;              // StaticRescue: DT steps before rescue
  bool advise_all_unfinished = false;   // window covers every unfinished agent
  uint64_t seed = 0;

  std::string to_json() const;
  static ScenarioConfig from_json(const std::string& text);
};

// 15/30/50 for the 20/40/80 benchmark sizes; 3/4 of the side elsewhere.
int default_t_change(int map_size);

struct ScenarioPlan {
  GoalChangeEvent event;
  ScenarioConfig config;
};

// Deterministic selection of ceil(fraction * n) agents and fresh goals
// (free cells, distinct from all current goals, reachable from each agent's
// start component). Throws when no valid new goal can be placed.
ScenarioPlan make_scenario(const GridMap& map, const Instance& instance, double fraction,
                           uint64_t seed, int horizon, const std::string& advisor_kind = "oracle");

// Joint advice callback: (world, controlled ids) -> one action per id.
using AdvisorFn =
    std::function<std::vector<Action>(const WorldState&, std::span<const int>)>;

AdvisorFn make_oracle_advisor();
AdvisorFn make_llm_advisor(const LlmConfig& config);

// DT drives all agents; at t_change the goals move and affected agents run on
// the advisor with full observability for `advisor_window` steps, then revert.
EpisodeRecord run_dynamic_episode(const GridMap& map, const Instance& instance,
                                  std::vector<PolicyPtr> policies, AdvisorFn advisor,
                                  const ScenarioPlan& plan, const RunOptions& options);

// DT drives all agents for `budget` steps; agents still unfinished afterwards
// are handed to the advisor until they finish or the horizon ends.
EpisodeRecord run_static_with_rescue(const GridMap& map, const Instance& instance,
                                     std::vector<PolicyPtr> policies, AdvisorFn advisor,
                                     int budget, const std::string& advisor_kind,
                                     const RunOptions& options);

}  // namespace mapfdt
