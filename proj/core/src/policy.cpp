#include "mapfdt/policy.hpp"

#include <nlohmann/json.hpp>

#include "mapfdt/util/binio.hpp"

namespace mapfdt {

DTPolicy::DTPolicy(std::shared_ptr<const dt::DTModelF> model)
    : DTPolicy(std::move(model), Options()) {}

DTPolicy::DTPolicy(std::shared_ptr<const dt::DTModelF> model, Options options)
    : model_(std::move(model)),
      options_(options),
      rtg_(options.target_rtg),
      sample_rng_(options.sample_seed) {
  if (!model_) throw std::invalid_argument("DTPolicy: null model");
}

void DTPolicy::append_slot(const PolicyInput& input) {
  if (!input.obs) throw std::invalid_argument("DTPolicy: observation required");
  Slot slot;
  slot.obs_embed = model_->encode_obs(*input.obs);
  slot.rtg = rtg_;
  slot.action = 0;
  slot.timestep = input.t;
  buffer_.push_back(std::move(slot));
  while (int(buffer_.size()) > model_->config().context) buffer_.pop_front();
}

Action DTPolicy::act(const PolicyInput& input) {
  append_slot(input);
  std::vector<dt::DTModelF::CachedSlot> slots;
  slots.reserve(buffer_.size());
  for (const Slot& s : buffer_)
    slots.push_back({s.obs_embed.data(), s.rtg, s.action, s.timestep});
  Action action = model_->predict_action_cached(slots, options_.sample,
                                                options_.sample ? &sample_rng_ : nullptr,
                                                options_.temperature);
  buffer_.back().action = uint8_t(action);
  return action;
}

void DTPolicy::observe_forced(const PolicyInput& input) { append_slot(input); }

void DTPolicy::on_action_executed(Action action) {
  if (!buffer_.empty()) buffer_.back().action = uint8_t(action);
}

void DTPolicy::on_reward(double reward) { rtg_ -= reward; }

void DTPolicy::on_goal_change(Coord) {
  if (options_.reinit_rtg_on_goal_change) rtg_ = options_.target_rtg;
  if (options_.clear_context_on_change) buffer_.clear();
}

EpisodeRecord run_episode(const GridMap& map, const Instance& instance,
                          std::vector<PolicyPtr> policies, const RunOptions& options,
                          StepInterceptor* interceptor) {
  const int n = int(instance.size());
  if (int(policies.size()) != n)
    throw std::invalid_argument("run_episode: one policy per agent required");

  WorldState world = make_world(map, instance);
  EpisodeRecord record;
  record.map_size = std::max(map.width, map.height);
  record.n_agents = n;
  record.density = map.density;
  record.horizon = options.episode.horizon;
  record.positions.resize(size_t(n));
  record.actions.resize(size_t(n));
  record.rewards.resize(size_t(n));
  record.arrival_times.assign(size_t(n), std::nullopt);
  record.advisor_controlled.resize(size_t(n));
  for (int i = 0; i < n; ++i) record.positions[size_t(i)].push_back(world.agents[size_t(i)].pos);

  while (!is_terminal(world, options.episode)) {
    const int t = world.t;
    if (interceptor) interceptor->begin_step(world, t, policies, record);

    std::vector<int> controlled;
    if (interceptor) controlled = interceptor->controlled_agents(world, t);
    std::vector<uint8_t> is_controlled(size_t(n), 0);
    for (int id : controlled)
      if (!world.agents[size_t(id)].done) is_controlled[size_t(id)] = 1;
    controlled.erase(std::remove_if(controlled.begin(), controlled.end(),
                                    [&](int id) { return !is_controlled[size_t(id)]; }),
                     controlled.end());

    std::vector<Action> actions(size_t(n), Action::Wait);
    std::vector<Observation> observations(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      if (world.agents[size_t(i)].done) continue;
      observations[size_t(i)] = observe(world, i);
      record.advisor_controlled[size_t(i)].push_back(is_controlled[size_t(i)]);
      if (is_controlled[size_t(i)]) continue;
      PolicyInput input{i, t, &observations[size_t(i)],
                        policies[size_t(i)]->wants_world() ? &world : nullptr};
      try {
        actions[size_t(i)] = policies[size_t(i)]->act(input);
      } catch (const std::exception& e) {
        record.policy_errors.push_back({t, i, e.what()});
        actions[size_t(i)] = Action::Wait;
      }
    }
    if (!controlled.empty()) {
      std::vector<Action> advice = interceptor->advise(world, t, controlled, record);
      if (advice.size() != controlled.size())
        throw std::logic_error("run_episode: interceptor advice size mismatch");
      for (size_t j = 0; j < controlled.size(); ++j) {
        const int id = controlled[j];
        actions[size_t(id)] = advice[j];
        PolicyInput input{id, t, &observations[size_t(id)], nullptr};
        policies[size_t(id)]->observe_forced(input);
        policies[size_t(id)]->on_action_executed(advice[j]);
      }
    }

    std::vector<uint8_t> was_live(size_t(n), 0);
    for (int i = 0; i < n; ++i) was_live[size_t(i)] = !world.agents[size_t(i)].done;
    StepResult result = step(world, actions, options.rewards, options.step_options);

    for (int i = 0; i < n; ++i) {
      if (!was_live[size_t(i)]) continue;
      record.actions[size_t(i)].push_back(uint8_t(actions[size_t(i)]));
      record.rewards[size_t(i)].push_back(result.rewards[size_t(i)]);
      record.positions[size_t(i)].push_back(world.agents[size_t(i)].pos);
      policies[size_t(i)]->on_reward(result.rewards[size_t(i)]);
    }
    for (const CollisionEvent& c : result.collisions) record.collisions.push_back({t, c.agent, c.kind});
    for (int id : result.newly_done)
      record.arrival_times[size_t(id)] = world.agents[size_t(id)].arrival_time;
    if (interceptor) interceptor->after_step(world, t, result, record);
  }
  record.duration = world.t;
  record.success = world.all_done();
  return record;
}

// ---------------------------------------------------------------------------
// serialization

using nlohmann::json;

namespace {

json coord_to_json(const Coord& c) { return json::array({c.row, c.col}); }
Coord coord_from_json(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

}  // namespace

std::string EpisodeRecord::to_json() const {
  json j;
  j["map_size"] = map_size;
  j["n_agents"] = n_agents;
  j["density"] = density;
  j["advisor_kind"] = advisor_kind;
  j["fraction"] = fraction;
  j["seed"] = seed;
  j["horizon"] = horizon;
  j["duration"] = duration;
  j["success"] = success;
  json positions = json::array();
  for (const auto& path : this->positions) {
    json p = json::array();
    for (const Coord& c : path) p.push_back(coord_to_json(c));
    positions.push_back(std::move(p));
  }
  j["positions"] = std::move(positions);
  j["actions"] = actions;
  j["rewards"] = rewards;
  json arrivals = json::array();
  for (const auto& a : arrival_times) {
    if (a)
      arrivals.push_back(*a);
    else
      arrivals.push_back(nullptr);
  }
  j["arrival_times"] = std::move(arrivals);
  j["advisor_controlled"] = advisor_controlled;
  json collisions = json::array();
  for (const auto& c : this->collisions)
    collisions.push_back({{"t", c.t}, {"agent", c.agent}, {"kind", collision_kind_name(c.kind)}});
  j["collisions"] = std::move(collisions);
  json changes = json::array();
  for (const auto& g : goal_changes)
    changes.push_back({{"t", g.t},
                       {"agent", g.agent},
                       {"old_goal", coord_to_json(g.old_goal)},
                       {"new_goal", coord_to_json(g.new_goal)}});
  j["goal_changes"] = std::move(changes);
  json switches = json::array();
  for (const auto& s : controller_switches)
    switches.push_back({{"t", s.t}, {"agent", s.agent}, {"from", s.from}, {"to", s.to}});
  j["controller_switches"] = std::move(switches);
  json errors = json::array();
  for (const auto& e : policy_errors)
    errors.push_back({{"t", e.t}, {"agent", e.agent}, {"message", e.message}});
  j["policy_errors"] = std::move(errors);
  return j.dump(2) + "\n";
}

EpisodeRecord EpisodeRecord::from_json(const std::string& text) {
  json j = json::parse(text);
  EpisodeRecord r;
  r.map_size = j.at("map_size").get<int>();
  r.n_agents = j.at("n_agents").get<int>();
  r.density = j.at("density").get<double>();
  r.advisor_kind = j.at("advisor_kind").get<std::string>();
  r.fraction = j.at("fraction").get<double>();
  r.seed = j.at("seed").get<uint64_t>();
  r.horizon = j.at("horizon").get<int>();
  r.duration = j.at("duration").get<int>();
  r.success = j.at("success").get<bool>();
  for (const auto& path : j.at("positions")) {
    std::vector<Coord> cells;
    for (const auto& c : path) cells.push_back(coord_from_json(c));
    r.positions.push_back(std::move(cells));
  }
  r.actions = j.at("actions").get<std::vector<std::vector<uint8_t>>>();
  r.rewards = j.at("rewards").get<std::vector<std::vector<double>>>();
  for (const auto& a : j.at("arrival_times")) {
    if (a.is_null())
      r.arrival_times.push_back(std::nullopt);
    else
      r.arrival_times.push_back(a.get<int>());
  }
  r.advisor_controlled = j.at("advisor_controlled").get<std::vector<std::vector<uint8_t>>>();
  for (const auto& c : j.at("collisions")) {
    CollisionRecord rec;
    rec.t = c.at("t").get<int>();
    rec.agent = c.at("agent").get<int>();
    std::string kind = c.at("kind").get<std::string>();
    if (kind == "obstacle") rec.kind = CollisionKind::Obstacle;
    else if (kind == "out_of_bounds") rec.kind = CollisionKind::OutOfBounds;
    else if (kind == "edge") rec.kind = CollisionKind::Edge;
    else rec.kind = CollisionKind::Vertex;
    r.collisions.push_back(rec);
  }
  for (const auto& g : j.at("goal_changes"))
    r.goal_changes.push_back({g.at("t").get<int>(), g.at("agent").get<int>(),
                              coord_from_json(g.at("old_goal")),
                              coord_from_json(g.at("new_goal"))});
  for (const auto& s : j.at("controller_switches"))
    r.controller_switches.push_back({s.at("t").get<int>(), s.at("agent").get<int>(),
                                     s.at("from").get<std::string>(),
                                     s.at("to").get<std::string>()});
  for (const auto& e : j.at("policy_errors"))
    r.policy_errors.push_back({e.at("t").get<int>(), e.at("agent").get<int>(),
                               e.at("message").get<std::string>()});
  return r;
}

std::string EpisodeRecord::ascii_frames(const GridMap& map) const {
  std::string out;
  for (int t = 0; t <= duration; ++t) {
    std::vector<Coord> live;
    for (int i = 0; i < n_agents; ++i) {
      const auto& path = positions[size_t(i)];
      bool done_before_t = arrival_times[size_t(i)] && *arrival_times[size_t(i)] < t;
      if (done_before_t || t >= int(path.size())) continue;
      live.push_back(path[size_t(t)]);
    }
    out += "t=" + std::to_string(t) + "\n" + map.to_text(live) + "\n";
  }
  return out;
}

}  // namespace mapfdt
