#pragma once

#include <deque>
#include <functional>
#include <span>
#include <memory>
#include <optional>
#include <string>

#include "mapfdt/dt/model.hpp"
#include "mapfdt/env.hpp"

namespace mapfdt {

// What a policy sees when asked to act. `world` is null for decentralized
// policies; the harness passes the live state only to full-observability
// (advisor) policies.
struct PolicyInput {
  int agent_id = 0;
  int t = 0;
  const Observation* obs = nullptr;
  const WorldState* world = nullptr;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action act(const PolicyInput& input) = 0;

  // Full-observability policies opt in to receive the live WorldState.
  virtual bool wants_world() const { return false; }
  // Per-step reward feedback; called once per step for live agents.
  virtual void on_reward(double /*reward*/) {}
  // The harness executed a different action than act() returned (advisor
  // override) or acted without consulting this policy.
  virtual void on_action_executed(Action /*action*/) {}
  // Record the slot without choosing an action (agent driven externally).
  virtual void observe_forced(const PolicyInput& /*input*/) {}
  virtual void on_goal_change(Coord /*new_goal*/) {}
};

using PolicyPtr = std::shared_ptr<Policy>;

// Wraps a trained model as one agent's decentralized policy: sliding context
// window of (rtg, obs-embedding, action) slots and return-to-go bookkeeping.
class DTPolicy : public Policy {
 public:
  struct Options {
    double target_rtg = 20.0;
    bool reinit_rtg_on_goal_change = true;
    bool clear_context_on_change = false;
    bool sample = false;
    double temperature = 1.0;
    uint64_t sample_seed = 0;
  };

  explicit DTPolicy(std::shared_ptr<const dt::DTModelF> model);
  DTPolicy(std::shared_ptr<const dt::DTModelF> model, Options options);

  Action act(const PolicyInput& input) override;
  void observe_forced(const PolicyInput& input) override;
  void on_action_executed(Action action) override;
  void on_reward(double reward) override;
  void on_goal_change(Coord new_goal) override;

  double current_rtg() const { return rtg_; }
  size_t context_size() const { return buffer_.size(); }

 private:
  void append_slot(const PolicyInput& input);

  struct Slot {
    std::vector<float> obs_embed;
    double rtg = 0.0;
    uint8_t action = 0;
    int timestep = 0;
  };
  std::shared_ptr<const dt::DTModelF> model_;
  Options options_;
  std::deque<Slot> buffer_;
  double rtg_;
  Rng sample_rng_;
};

// Standing advisor: every step comes from a full-observability advice
// function over the live world (the rescue protocol's budget-zero case, and a
// baseline policy for tests).
class AdvisorPolicy : public Policy {
 public:
  using AdviseFn = std::function<std::vector<Action>(const WorldState&, std::span<const int>)>;
  explicit AdvisorPolicy(AdviseFn advise) : advise_(std::move(advise)) {
    if (!advise_) throw std::invalid_argument("AdvisorPolicy: null advice function");
  }
  bool wants_world() const override { return true; }
  Action act(const PolicyInput& input) override {
    if (!input.world) throw std::logic_error("AdvisorPolicy: harness did not pass the world");
    const int id[1] = {input.agent_id};
    return advise_(*input.world, id).at(0);
  }

 private:
  AdviseFn advise_;
};

// Replays a fixed action sequence; Wait once exhausted. Test policy.
class ScriptedPolicy : public Policy {
 public:
  explicit ScriptedPolicy(std::vector<Action> actions) : actions_(std::move(actions)) {}
  Action act(const PolicyInput& input) override {
    size_t i = size_t(next_++);
    return i < actions_.size() ? actions_[i] : Action::Wait;
  }

 private:
  std::vector<Action> actions_;
  int next_ = 0;
};

struct CollisionRecord {
  int t = 0;
  int agent = 0;
  CollisionKind kind = CollisionKind::Vertex;
};

struct GoalChangeRecord {
  int t = 0;
  int agent = 0;
  Coord old_goal;
  Coord new_goal;
};

struct ControllerSwitchRecord {
  int t = 0;
  int agent = 0;
  std::string from;
  std::string to;
};

struct PolicyErrorRecord {
  int t = 0;
  int agent = 0;
  std::string message;
};

// Full trace of one evaluation episode.
struct EpisodeRecord {
  // grouping metadata for aggregation
  int map_size = 0;
  int n_agents = 0;
  double density = 0.0;
  std::string advisor_kind = "none";
  double fraction = 0.0;
  uint64_t seed = 0;

  int horizon = 0;
  int duration = 0;
  bool success = false;
  std::vector<std::vector<Coord>> positions;  // per agent, up to arrival (inclusive)
  std::vector<std::vector<uint8_t>> actions;  // executed actions while live
  std::vector<std::vector<double>> rewards;
  std::vector<std::optional<int>> arrival_times;
  std::vector<std::vector<uint8_t>> advisor_controlled;  // per agent per step flag
  std::vector<CollisionRecord> collisions;
  std::vector<GoalChangeRecord> goal_changes;
  std::vector<ControllerSwitchRecord> controller_switches;
  std::vector<PolicyErrorRecord> policy_errors;

  std::string to_json() const;
  static EpisodeRecord from_json(const std::string& text);
  // one `.`/`#`/letter frame per timestep, for debugging
  std::string ascii_frames(const GridMap& map) const;
};

// Scenario hook points inside the episode loop. The harness uses these to
// change goals mid-episode and to hand agents to a full-observability advisor.
class StepInterceptor {
 public:
  virtual ~StepInterceptor() = default;
  // runs before anything else at timestep t; may mutate goals via `world`
  virtual void begin_step(WorldState& world, int t, std::vector<PolicyPtr>& policies,
                          EpisodeRecord& record) {}
  // agents whose action this step comes from the interceptor, not their policy
  virtual std::vector<int> controlled_agents(const WorldState& world, int t) { return {}; }
  // joint advice for the controlled agents (same order as `ids`)
  virtual std::vector<Action> advise(const WorldState& world, int t, std::span<const int> ids,
                                     EpisodeRecord& record) {
    return std::vector<Action>(ids.size(), Action::Wait);
  }
  virtual void after_step(const WorldState& world, int t, const StepResult& result,
                          EpisodeRecord& record) {}
};

struct RunOptions {
  EpisodeConfig episode;
  RewardConfig rewards;
  StepOptions step_options;
};

// observe -> act -> step until termination. Policy exceptions are captured
// into the record (the agent waits that step). Deterministic for
// deterministic policies.
EpisodeRecord run_episode(const GridMap& map, const Instance& instance,
                          std::vector<PolicyPtr> policies, const RunOptions& options,
                          StepInterceptor* interceptor = nullptr);

}  // namespace mapfdt
