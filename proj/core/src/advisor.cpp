#include "mapfdt/advisor.hpp"

#include <chrono>
#include <fstream>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <regex>
#include <sstream>

#include "mapfdt/util/hash.hpp"

namespace mapfdt {

using nlohmann::json;

WorldSnapshot WorldSnapshot::take(const WorldState& state) {
  WorldSnapshot snap;
  snap.width = state.map.width;
  snap.height = state.map.height;
  for (int r = 0; r < state.map.height; ++r)
    for (int c = 0; c < state.map.width; ++c)
      if (state.map.is_obstacle({r, c})) snap.obstacles.push_back({r, c});
  for (const AgentState& a : state.agents)
    snap.agents.push_back({a.id, a.pos, a.goal, a.done});
  snap.clock = state.t;
  return snap;
}

GridMap WorldSnapshot::to_map() const {
  GridMap map;
  map.width = width;
  map.height = height;
  map.obstacles.assign(size_t(width) * height, 0);
  for (const Coord& c : obstacles) map.obstacles[size_t(c.row) * width + c.col] = 1;
  map.density = width * height > 0 ? double(obstacles.size()) / (width * height) : 0.0;
  return map;
}

std::vector<Action> oracle_advise(const WorldSnapshot& snapshot,
                                  std::span<const int> controlled_ids) {
  const GridMap map = snapshot.to_map();
  std::vector<Action> out;
  out.reserve(controlled_ids.size());
  for (int id : controlled_ids) {
    const WorldSnapshot::AgentView* self = nullptr;
    for (const auto& a : snapshot.agents)
      if (a.id == id) self = &a;
    if (!self || self->done) {
      out.push_back(Action::Wait);
      continue;
    }
    // other live agents become temporary obstacles
    std::vector<uint8_t> blocked(size_t(map.cell_count()), 0);
    for (const auto& a : snapshot.agents)
      if (!a.done && a.id != id) blocked[size_t(a.pos.row) * map.width + a.pos.col] = 1;

    std::vector<int> dist = bfs_distance_map(map, self->goal, &blocked);
    const int here = dist[size_t(self->pos.row) * map.width + self->pos.col];
    if (here <= 0) {
      out.push_back(Action::Wait);  // unreachable or already on goal
      continue;
    }
    Action chosen = Action::Wait;
    for (Action a : {Action::North, Action::East, Action::South, Action::West}) {
      Coord next = apply_action(self->pos, a);
      if (!map.is_free(next)) continue;
      size_t idx = size_t(next.row) * map.width + next.col;
      if (blocked[idx]) continue;
      if (dist[idx] == here - 1) {
        chosen = a;
        break;
      }
    }
    out.push_back(chosen);
  }
  return out;
}

// ---------------------------------------------------------------------------
// prompting

namespace {

constexpr const char* kPreamble =
    "You are coordinating agents on a 2D grid (multi-agent path finding).\n"
    "Cells are addressed as (row, col); row 0 is the top, col 0 is the left.\n"
    "Per timestep each agent takes exactly one action from this vocabulary:\n"
    "  WAIT  - stay in place\n"
    "  NORTH - row - 1\n"
    "  EAST  - col + 1\n"
    "  SOUTH - row + 1\n"
    "  WEST  - col - 1\n"
    "Constraints: agents may not enter obstacle cells or leave the grid; two\n"
    "agents may never occupy the same cell at the same time, nor swap cells in\n"
    "one step. An agent that reaches its goal leaves the grid.\n"
    "Task: choose the next action for each listed agent so every agent makes\n"
    "progress toward its goal without collisions.\n"
    "You may reason step by step, but you MUST end your reply with a line\n"
    "containing exactly 'ACTIONS:' followed by one line per agent in the form\n"
    "'agent <id>: <ACTION>'.\n";

constexpr const char* kSimpleExample =
    "Example (simple):\n"
    "Grid 5x5, no obstacles. Agent 0 at (2, 1) with goal (2, 4).\n"
    "Reasoning: the goal is 3 cells east on the same row and the row is clear,\n"
    "so moving east strictly reduces the distance.\n"
    "ACTIONS:\n"
    "agent 0: EAST\n";

constexpr const char* kChallengingExample =
    "Example (challenging):\n"
    "Grid 5x5, obstacle at (1, 2). Agent 0 at (1, 1) with goal (1, 3); agent 1\n"
    "at (2, 2) with goal (0, 2).\n"
    "Reasoning: agent 0 cannot go east through the obstacle at (1, 2); it\n"
    "detours south, but (2, 2) is occupied by agent 1, which is moving north\n"
    "this step - entering a cell being vacated is still risky if agent 1\n"
    "waits, so agent 0 steps south via (2, 1). Agent 1 moves north toward its\n"
    "goal; (1, 2) is an obstacle, so it must first step east or west - west is\n"
    "(2, 1), which agent 0 wants; agent 1 takes east to (2, 3) and will\n"
    "approach its goal around the obstacle.\n"
    "ACTIONS:\n"
    "agent 0: SOUTH\n"
    "agent 1: EAST\n";

std::string coord_str(const Coord& c) {
  return "(" + std::to_string(c.row) + ", " + std::to_string(c.col) + ")";
}

std::string obstacles_str(const std::vector<Coord>& obstacles, size_t limit) {
  std::string out;
  size_t shown = std::min(limit, obstacles.size());
  for (size_t i = 0; i < shown; ++i) {
    if (i) out += ", ";
    out += coord_str(obstacles[i]);
  }
  if (shown < obstacles.size())
    out += ", ... (" + std::to_string(obstacles.size() - shown) + " more omitted)";
  if (obstacles.empty()) out = "none";
  return out;
}

std::string build_query(const WorldSnapshot& snapshot, std::span<const int> controlled_ids,
                        const std::vector<Coord>& obstacles, size_t obstacle_limit) {
  std::string q;
  q += "Current problem:\n";
  q += "Grid " + std::to_string(snapshot.height) + "x" + std::to_string(snapshot.width) +
       ", timestep " + std::to_string(snapshot.clock) + ".\n";
  q += "Obstacles: " + obstacles_str(obstacles, obstacle_limit) + "\n";
  q += "Agents:\n";
  for (const auto& a : snapshot.agents) {
    if (a.done) continue;
    q += "  agent " + std::to_string(a.id) + " at " + coord_str(a.pos) + ", goal " +
         coord_str(a.goal) + "\n";
  }
  q += "Provide the next action for:";
  for (int id : controlled_ids) q += " agent " + std::to_string(id);
  q += ".\n";
  return q;
}

}  // namespace

PromptBundle build_prompt(const WorldSnapshot& snapshot, std::span<const int> controlled_ids,
                          int max_prompt_chars) {
  if (controlled_ids.empty())
    throw std::invalid_argument("build_prompt: no controlled agents to ask about");

  PromptBundle bundle;
  bundle.system_preamble = kPreamble;
  bundle.examples = std::string(kSimpleExample) + "\n" + kChallengingExample;

  bundle.query = build_query(snapshot, controlled_ids, snapshot.obstacles, snapshot.obstacles.size());
  if (int(bundle.full_text().size()) <= max_prompt_chars) return bundle;

  // over budget: keep only obstacles inside some controlled agent's FOV window
  std::vector<Coord> relevant;
  for (const Coord& obstacle : snapshot.obstacles) {
    for (int id : controlled_ids) {
      for (const auto& a : snapshot.agents) {
        if (a.id != id || a.done) continue;
        const int r0 = a.pos.row - Observation::kCenter;
        const int c0 = a.pos.col - Observation::kCenter;
        if (obstacle.row >= r0 && obstacle.row < r0 + Observation::kSize && obstacle.col >= c0 &&
            obstacle.col < c0 + Observation::kSize) {
          relevant.push_back(obstacle);
          goto next_obstacle;
        }
      }
    }
  next_obstacle:;
  }
  bundle.query = build_query(snapshot, controlled_ids, relevant, relevant.size());
  if (int(bundle.full_text().size()) <= max_prompt_chars) return bundle;

  // still over: truncate the obstacle list outright
  for (size_t limit : {size_t(64), size_t(16), size_t(0)}) {
    bundle.query = build_query(snapshot, controlled_ids, relevant, limit);
    if (int(bundle.full_text().size()) <= max_prompt_chars) return bundle;
  }
  throw std::runtime_error("build_prompt: prompt exceeds the hard budget even after truncation (" +
                           std::to_string(bundle.full_text().size()) + " > " +
                           std::to_string(max_prompt_chars) + " chars)");
}

AdvisorResponse parse_response(const std::string& text, std::span<const int> controlled_ids) {
  AdvisorResponse response;
  response.raw_text = text;

  static const std::regex line_re(R"(^\s*agent\s+(\d+)\s*[:\-]\s*([A-Za-z_]+)\s*$)",
                                  std::regex::icase);
  static const std::regex marker_re(R"(^\s*actions\s*:?\s*$)", std::regex::icase);

  std::vector<std::string> lines;
  {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
  }

  // parse after the last ACTIONS: marker when present; otherwise fall back to
  // the last maximal run of well-formed action lines (reasoning prose breaks
  // runs, so chain-of-thought text ahead of the block is ignored)
  size_t begin = 0, end = lines.size();
  bool found_marker = false;
  for (size_t i = 0; i < lines.size(); ++i)
    if (std::regex_match(lines[i], marker_re)) {
      begin = i + 1;
      found_marker = true;
    }
  if (!found_marker) {
    size_t best_begin = lines.size(), best_end = lines.size();
    size_t run_begin = 0;
    bool in_run = false;
    for (size_t i = 0; i <= lines.size(); ++i) {
      const bool matches = i < lines.size() && std::regex_match(lines[i], line_re);
      if (matches && !in_run) {
        run_begin = i;
        in_run = true;
      } else if (!matches && in_run) {
        best_begin = run_begin;
        best_end = i;
        in_run = false;
      }
    }
    begin = best_begin;
    end = best_end;
  }

  auto action_from_name = [](std::string name) -> std::optional<Action> {
    for (char& c : name) c = char(std::toupper(static_cast<unsigned char>(c)));
    for (Action a : kAllActions)
      if (name == action_name(a)) return a;
    return std::nullopt;
  };

  std::map<int, std::pair<std::optional<Action>, std::string>> parsed;
  for (size_t i = begin; i < end && i < lines.size(); ++i) {
    std::smatch m;
    if (!std::regex_match(lines[i], m, line_re)) continue;
    const int id = std::stoi(m[1].str());
    auto action = action_from_name(m[2]);
    if (action)
      parsed[id] = {*action, ""};
    else
      parsed[id] = {std::nullopt, "unknown action '" + m[2].str() + "'"};
  }

  for (int id : controlled_ids) {
    auto it = parsed.find(id);
    if (it == parsed.end()) {
      response.fallback_reasons[id] = "agent missing from answer block";
    } else if (!it->second.first) {
      response.fallback_reasons[id] = it->second.second;
    } else {
      response.actions[id] = *it->second.first;
    }
  }
  return response;
}

// ---------------------------------------------------------------------------
// transport

namespace {

// splits "http://host:port/path" into base and path
bool split_url(const std::string& url, std::string* base, std::string* path) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) return false;
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    *base = url;
    *path = "/";
  } else {
    *base = url.substr(0, path_start);
    *path = url.substr(path_start);
  }
  return true;
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* value = std::getenv(name);
  return value ? std::string(value) : fallback;
}

}  // namespace

LlmClient::LlmClient(LlmConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) config_.endpoint = env_or("LLM_API_URL", "");
  if (config_.api_key.empty()) config_.api_key = env_or("LLM_API_KEY", "");
}

std::optional<std::string> LlmClient::post_with_retries(const std::string& body,
                                                        std::string* error) {
  std::string base, path;
  if (config_.endpoint.empty() || !split_url(config_.endpoint, &base, &path)) {
    *error = "no usable endpoint (set LLM_API_URL)";
    return std::nullopt;
  }
  httplib::Client client(base);
  client.set_connection_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
  client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
  httplib::Headers headers;
  if (!config_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + config_.api_key);

  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    auto res = client.Post(path, headers, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) return res->body;
    if (res && res->status >= 400 && res->status < 500) {
      *error = "HTTP " + std::to_string(res->status);
      return std::nullopt;  // client errors are not retried
    }
    *error = res ? "HTTP " + std::to_string(res->status) : "transport timeout/connection failure";
  }
  return std::nullopt;
}

void LlmClient::log_call(const std::string& prompt, const std::string& response,
                         const std::string& status, double latency_ms) {
  if (config_.log_path.empty()) return;
  json entry;
  entry["prompt_sha256"] = Sha256::of_string(prompt);
  entry["prompt"] = prompt;
  entry["response"] = response;
  entry["status"] = status;
  entry["latency_ms"] = latency_ms;
  std::ofstream out(config_.log_path, std::ios::app);
  out << entry.dump() << "\n";
}

std::vector<Action> LlmClient::advise(const WorldSnapshot& snapshot,
                                      std::span<const int> controlled_ids) {
  ++stats_.calls;
  auto fallback_all = [&](const std::string& prompt, const std::string& status,
                          double latency_ms) {
    ++stats_.transport_failures;
    log_call(prompt, "", status, latency_ms);
    if (config_.fallback == LlmConfig::Fallback::Oracle)
      return oracle_advise(snapshot, controlled_ids);
    return std::vector<Action>(controlled_ids.size(), Action::Wait);
  };

  PromptBundle prompt;
  try {
    prompt = build_prompt(snapshot, controlled_ids, config_.max_prompt_chars);
  } catch (const std::exception& e) {
    return fallback_all("", std::string("prompt_error: ") + e.what(), 0.0);
  }

  json body;
  body["model"] = config_.model;
  body["messages"] = json::array({
      json{{"role", "system"}, {"content", prompt.system_preamble}},
      json{{"role", "user"}, {"content", prompt.user_message()}},
  });

  const auto t0 = std::chrono::steady_clock::now();
  std::string error;
  auto reply = post_with_retries(body.dump(), &error);
  const double latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (!reply) return fallback_all(prompt.full_text(), "transport_error: " + error, latency_ms);

  std::string content;
  try {
    json parsed = json::parse(*reply);
    content = parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const std::exception&) {
    content = *reply;  // permissive: stub servers may return the block directly
  }

  AdvisorResponse response = parse_response(content, controlled_ids);
  log_call(prompt.full_text(), content,
           response.fallback_reasons.empty() ? "ok" : "partial_parse", latency_ms);

  std::vector<Action> fallback_actions;
  if (!response.fallback_reasons.empty()) {
    ++stats_.parse_fallbacks;
    if (config_.fallback == LlmConfig::Fallback::Oracle)
      fallback_actions = oracle_advise(snapshot, controlled_ids);
    else
      fallback_actions.assign(controlled_ids.size(), Action::Wait);
  }
  std::vector<Action> out;
  out.reserve(controlled_ids.size());
  for (size_t i = 0; i < controlled_ids.size(); ++i) {
    auto it = response.actions.find(controlled_ids[i]);
    if (it != response.actions.end())
      out.push_back(it->second);
    else
      out.push_back(fallback_actions[i]);
  }
  return out;
}

}  // namespace mapfdt
