#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mapfdt/env.hpp"

namespace mapfdt {

// Full-observability view handed to advisors during intervention windows.
struct WorldSnapshot {
  int width = 0;
  int height = 0;
  std::vector<Coord> obstacles;
  struct AgentView {
    int id = 0;
    Coord pos;
    Coord goal;
    bool done = false;
  };
  std::vector<AgentView> agents;
  int clock = 0;

  static WorldSnapshot take(const WorldState& state);
  GridMap to_map() const;
};

// One step along a shortest path to each controlled agent's goal, treating
// every other live agent's current cell as an obstacle. Wait when no path
// exists. Ties break in action-code order (Wait < N < E < S < W).
std::vector<Action> oracle_advise(const WorldSnapshot& snapshot,
                                  std::span<const int> controlled_ids);

struct PromptBundle {
  std::string system_preamble;  // problem, environment, constraints, task
  std::string examples;         // one simple and one challenging worked case
  std::string query;            // serialized snapshot + controlled agents
  std::string user_message() const { return examples + "\n" + query; }
  std::string full_text() const { return system_preamble + "\n" + user_message(); }
};

struct AdvisorResponse {
  std::map<int, Action> actions;
  std::map<int, std::string> fallback_reasons;  // agents missing a parsed action
  std::string raw_text;
};

struct LlmConfig {
  std::string model = "gpt-4o";
  int timeout_ms = 10000;
  int max_retries = 2;             // additional attempts after the first
  int max_prompt_chars = 24000;    // hard budget; obstacle lists truncate first
  enum class Fallback { Wait, Oracle } fallback = Fallback::Oracle;
  std::string endpoint;   // defaults to $LLM_API_URL
  std::string api_key;    // defaults to $LLM_API_KEY
  std::string log_path;   // JSONL audit log, empty disables
};

// Deterministic prompt text; throws when the hard budget cannot be met even
// after truncation. Zero controlled agents is an error.
PromptBundle build_prompt(const WorldSnapshot& snapshot, std::span<const int> controlled_ids,
                          int max_prompt_chars = 24000);

// Extracts the machine-readable answer block ("agent <id>: <ACTION>" lines,
// case-insensitive). Missing agents or unknown tokens become per-agent
// fallback entries; never throws.
AdvisorResponse parse_response(const std::string& text, std::span<const int> controlled_ids);

// build_prompt -> HTTP POST -> parse_response with retry/timeout/fallback.
class LlmClient {
 public:
  explicit LlmClient(LlmConfig config);

  // Always returns one action per controlled agent; transport or parse
  // failures degrade per the configured fallback.
  std::vector<Action> advise(const WorldSnapshot& snapshot, std::span<const int> controlled_ids);

  struct CallStats {
    int calls = 0;
    int transport_failures = 0;
    int parse_fallbacks = 0;
  };
  const CallStats& stats() const { return stats_; }

 private:
  std::optional<std::string> post_with_retries(const std::string& body, std::string* error);
  void log_call(const std::string& prompt, const std::string& response,
                const std::string& status, double latency_ms);

  LlmConfig config_;
  CallStats stats_;
};

}  // namespace mapfdt
