#include "mapfdt/scenario.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>

#include "mapfdt/util/rng.hpp"

namespace mapfdt {

using nlohmann::json;

int default_t_change(int map_size) {
  switch (map_size) {
    case 20:
      return 15;
    case 40:
      return 30;
    case 80:
      return 50;
    default:
      return std::max(1, (3 * map_size) / 4);
  }
}

std::string ScenarioConfig::to_json() const {
  json j;
  j["mode"] = mode == Mode::Static ? "static" : (mode == Mode::StaticRescue ? "static_rescue" : "dynamic");
  j["t_change"] = t_change;
  j["advisor_window"] = advisor_window;
  j["fraction"] = fraction;
  j["advisor_kind"] = advisor_kind;
  j["rescue_budget"] = rescue_budget;
  j["advise_all_unfinished"] = advise_all_unfinished;
  j["seed"] = seed;
  return j.dump(2);
}

ScenarioConfig ScenarioConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ScenarioConfig c;
  std::string mode = j.value("mode", "dynamic");
  if (mode == "static")
    c.mode = Mode::Static;
  else if (mode == "static_rescue")
    c.mode = Mode::StaticRescue;
  else if (mode == "dynamic")
    c.mode = Mode::Dynamic;
  else
    throw std::runtime_error("scenario config: unknown mode " + mode);
  c.t_change = j.value("t_change", c.t_change);
  c.advisor_window = j.value("advisor_window", j.value("W", c.advisor_window));
  c.fraction = j.value("fraction", c.fraction);
  c.advisor_kind = j.value("advisor_kind", c.advisor_kind);
  c.rescue_budget = j.value("rescue_budget", c.rescue_budget);
  c.advise_all_unfinished = j.value("advise_all_unfinished", c.advise_all_unfinished);
  c.seed = j.value("seed", c.seed);
  return c;
}

ScenarioPlan make_scenario(const GridMap& map, const Instance& instance, double fraction,
                           uint64_t seed, int horizon, const std::string& advisor_kind) {
  const int n = int(instance.size());
  if (n == 0 || fraction * n < 1.0)
    throw std::invalid_argument("make_scenario: fraction * n_agents must be >= 1");

  ScenarioPlan plan;
  plan.config.mode = ScenarioConfig::Mode::Dynamic;
  plan.config.t_change = default_t_change(std::max(map.width, map.height));
  plan.config.advisor_kind = advisor_kind;
  plan.config.fraction = fraction;
  plan.config.seed = seed;
  if (plan.config.t_change >= horizon - plan.config.advisor_window)
    throw std::invalid_argument("make_scenario: t_change must precede horizon - window");

  plan.event.trigger_t = plan.config.t_change;
  plan.event.fraction = fraction;

  Rng rng(seed);
  const int affected = int(std::ceil(fraction * n));
  std::vector<int> ids(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) ids[size_t(i)] = i;
  rng.shuffle(ids);
  ids.resize(size_t(affected));
  std::sort(ids.begin(), ids.end());
  plan.event.agents = ids;

  const std::vector<int> comp = free_components(map);
  auto comp_of = [&](Coord c) { return comp[size_t(c.row) * map.width + c.col]; };
  std::set<Coord> taken;  // new goals must avoid every current goal
  for (const AgentTask& task : instance) taken.insert(task.goal);

  std::vector<Coord> free = map.free_cells();
  for (int id : ids) {
    // uniform over free cells in the agent's component, minus taken goals and
    // the agent's start; bounded scan from a random offset
    bool placed = false;
    size_t offset = size_t(rng.uniform_below(free.size()));
    for (size_t k = 0; k < free.size(); ++k) {
      Coord cand = free[(offset + k) % free.size()];
      if (taken.count(cand)) continue;
      if (cand == instance[size_t(id)].start) continue;
      if (comp_of(cand) != comp_of(instance[size_t(id)].start)) continue;
      plan.event.new_goals.push_back(cand);
      taken.insert(cand);
      placed = true;
      break;
    }
    if (!placed)
      throw std::runtime_error("make_scenario: no valid new goal placeable for agent " +
                               std::to_string(id) + " (map too dense)");
  }
  return plan;
}

AdvisorFn make_oracle_advisor() {
  return [](const WorldState& world, std::span<const int> ids) {
    return oracle_advise(WorldSnapshot::take(world), ids);
  };
}

AdvisorFn make_llm_advisor(const LlmConfig& config) {
  auto client = std::make_shared<LlmClient>(config);
  return [client](const WorldState& world, std::span<const int> ids) {
    return client->advise(WorldSnapshot::take(world), ids);
  };
}

namespace {

class DynamicInterceptor : public StepInterceptor {
 public:
  DynamicInterceptor(ScenarioPlan plan, AdvisorFn advisor)
      : plan_(std::move(plan)), advisor_(std::move(advisor)) {}

  void begin_step(WorldState& world, int t, std::vector<PolicyPtr>& policies,
                  EpisodeRecord& record) override {
    if (t != plan_.event.trigger_t || fired_) return;
    fired_ = true;
    for (size_t i = 0; i < plan_.event.agents.size(); ++i) {
      const int id = plan_.event.agents[i];
      AgentState& agent = world.agents[size_t(id)];
      if (agent.done) continue;  // finished before the change; not affected
      record.goal_changes.push_back({t, id, agent.goal, plan_.event.new_goals[i]});
      agent.goal = plan_.event.new_goals[i];
      policies[size_t(id)]->on_goal_change(agent.goal);
      if (advisor_ && plan_.config.advisor_window > 0) {
        window_left_[id] = plan_.config.advisor_window;
        record.controller_switches.push_back({t, id, "DT", "ADVISOR"});
      }
    }
  }

  std::vector<int> controlled_agents(const WorldState& world, int t) override {
    std::vector<int> out;
    if (!advisor_) return out;
    if (plan_.config.advise_all_unfinished && fired_ && !window_left_.empty()) {
      for (const AgentState& a : world.agents)
        if (!a.done) out.push_back(a.id);
      return out;
    }
    for (const auto& [id, left] : window_left_)
      if (left > 0 && !world.agents[size_t(id)].done) out.push_back(id);
    return out;
  }

  std::vector<Action> advise(const WorldState& world, int t, std::span<const int> ids,
                             EpisodeRecord& record) override {
    return advisor_(world, ids);
  }

  void after_step(const WorldState& world, int t, const StepResult& result,
                  EpisodeRecord& record) override {
    for (auto it = window_left_.begin(); it != window_left_.end();) {
      const int id = it->first;
      int& left = it->second;
      --left;
      const bool done = world.agents[size_t(id)].done;
      if (left <= 0 || done) {
        if (!done) record.controller_switches.push_back({t + 1, id, "ADVISOR", "DT"});
        it = window_left_.erase(it);
      } else {
        ++it;
      }
    }
  }

 private:
  ScenarioPlan plan_;
  AdvisorFn advisor_;
  std::map<int, int> window_left_;
  bool fired_ = false;
};

class RescueInterceptor : public StepInterceptor {
 public:
  RescueInterceptor(int budget, AdvisorFn advisor) : budget_(budget), advisor_(std::move(advisor)) {}

  std::vector<int> controlled_agents(const WorldState& world, int t) override {
    std::vector<int> out;
    if (!advisor_ || t < budget_) return out;
    for (const AgentState& a : world.agents)
      if (!a.done) out.push_back(a.id);
    return out;
  }

  void begin_step(WorldState& world, int t, std::vector<PolicyPtr>&,
                  EpisodeRecord& record) override {
    if (!advisor_ || t != budget_) return;
    for (const AgentState& a : world.agents)
      if (!a.done) record.controller_switches.push_back({t, a.id, "DT", "ADVISOR"});
  }

  std::vector<Action> advise(const WorldState& world, int t, std::span<const int> ids,
                             EpisodeRecord& record) override {
    return advisor_(world, ids);
  }

 private:
  int budget_;
  AdvisorFn advisor_;
};

}  // namespace

EpisodeRecord run_dynamic_episode(const GridMap& map, const Instance& instance,
                                  std::vector<PolicyPtr> policies, AdvisorFn advisor,
                                  const ScenarioPlan& plan, const RunOptions& options) {
  DynamicInterceptor interceptor(plan, plan.config.advisor_kind == "none" ? AdvisorFn{} : advisor);
  EpisodeRecord record = run_episode(map, instance, std::move(policies), options, &interceptor);
  record.advisor_kind = plan.config.advisor_kind;
  record.fraction = plan.event.fraction;
  record.seed = plan.config.seed;
  return record;
}

EpisodeRecord run_static_with_rescue(const GridMap& map, const Instance& instance,
                                     std::vector<PolicyPtr> policies, AdvisorFn advisor,
                                     int budget, const std::string& advisor_kind,
                                     const RunOptions& options) {
  if (budget >= options.episode.horizon)
    throw std::invalid_argument("run_static_with_rescue: budget must be below the horizon");
  RescueInterceptor interceptor(budget, advisor_kind == "none" ? AdvisorFn{} : advisor);
  EpisodeRecord record = run_episode(map, instance, std::move(policies), options, &interceptor);
  record.advisor_kind = advisor_kind;
  return record;
}

}  // namespace mapfdt
