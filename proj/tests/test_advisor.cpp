#include <doctest.h>

#include <atomic>
#include <deque>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <thread>

#include "mapfdt/advisor.hpp"
#include "mapfdt/util/rng.hpp"

using namespace mapfdt;

namespace {

WorldSnapshot snapshot_from(const WorldState& state) { return WorldSnapshot::take(state); }

// Independent BFS distance map for the oracle property checks (deliberately
// not the library helper).
std::vector<int> reference_distances(const WorldSnapshot& snap, Coord goal,
                                     const std::vector<uint8_t>& blocked) {
  const int w = snap.width, h = snap.height;
  std::vector<uint8_t> obstacle(size_t(w) * h, 0);
  for (const Coord& c : snap.obstacles) obstacle[size_t(c.row) * w + c.col] = 1;
  std::vector<int> dist(size_t(w) * h, -1);
  std::deque<Coord> queue;
  auto idx = [&](Coord c) { return size_t(c.row) * w + c.col; };
  if (obstacle[idx(goal)] || blocked[idx(goal)]) return dist;
  dist[idx(goal)] = 0;
  queue.push_back(goal);
  while (!queue.empty()) {
    Coord c = queue.front();
    queue.pop_front();
    const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      Coord n{c.row + dr[k], c.col + dc[k]};
      if (n.row < 0 || n.row >= h || n.col < 0 || n.col >= w) continue;
      if (obstacle[idx(n)] || blocked[idx(n)] || dist[idx(n)] != -1) continue;
      dist[idx(n)] = dist[idx(c)] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

}  // namespace

TEST_CASE("oracle_advise: clear straight run advises the direct move") {
  GridMap map = generate_map(8, 8, 0.0, 0);
  WorldState world = make_world(map, {{{3, 3}, {3, 6}}});
  auto actions = oracle_advise(snapshot_from(world), std::vector<int>{0});
  REQUIRE(actions.size() == 1);
  CHECK(actions[0] == Action::East);
}

TEST_CASE("oracle_advise: fully boxed-in agent waits") {
  GridMap map = generate_map(5, 5, 0.0, 0);
  Instance inst{{{2, 2}, {0, 0}}, {{1, 2}, {4, 4}}, {{3, 2}, {4, 0}},
                {{2, 1}, {0, 4}}, {{2, 3}, {4, 2}}};
  WorldState world = make_world(map, inst);
  auto actions = oracle_advise(snapshot_from(world), std::vector<int>{0});
  CHECK(actions[0] == Action::Wait);
}

TEST_CASE("oracle_advise: advised step stays on a shortest path (random snapshots)") {
  Rng rng(2025);
  int checked = 0;
  while (checked < 120) {
    GridMap map = generate_map(10, 10, 0.15, rng.next_u64());
    Instance inst;
    try {
      inst = sample_instance(map, 4, rng.next_u64());
    } catch (const std::runtime_error&) {
      continue;
    }
    WorldState world = make_world(map, inst);
    WorldSnapshot snap = snapshot_from(world);
    std::vector<int> ids{0, 1, 2, 3};
    auto actions = oracle_advise(snap, ids);
    for (int id : ids) {
      std::vector<uint8_t> blocked(size_t(map.cell_count()), 0);
      for (const auto& a : snap.agents)
        if (!a.done && a.id != id) blocked[size_t(a.pos.row) * map.width + a.pos.col] = 1;
      auto dist = reference_distances(snap, inst[size_t(id)].goal, blocked);
      const int here = dist[size_t(inst[size_t(id)].start.row) * map.width +
                            inst[size_t(id)].start.col];
      Coord next = apply_action(inst[size_t(id)].start, actions[size_t(id)]);
      if (here > 0) {
        // reachable: the move must step down the distance field
        CHECK(dist[size_t(next.row) * map.width + next.col] == here - 1);
      } else {
        CHECK(actions[size_t(id)] == Action::Wait);
      }
      ++checked;
    }
  }
}

TEST_CASE("build_prompt: deterministic, contains examples before the query") {
  GridMap map = generate_map(10, 10, 0.1, 4);
  Instance inst = sample_instance(map, 3, 5);
  WorldState world = make_world(map, inst);
  WorldSnapshot snap = snapshot_from(world);
  std::vector<int> ids{0, 2};
  PromptBundle a = build_prompt(snap, ids);
  PromptBundle b = build_prompt(snap, ids);
  CHECK(a.full_text() == b.full_text());
  CHECK(a.full_text().find("Example (simple)") != std::string::npos);
  CHECK(a.full_text().find("Example (challenging)") != std::string::npos);
  CHECK(a.full_text().find("Example (simple)") < a.full_text().find("Current problem"));
  CHECK(a.query.find("agent 0") != std::string::npos);
  CHECK(a.query.find("agent 2") != std::string::npos);
}

TEST_CASE("build_prompt: zero controlled agents is an error") {
  GridMap map = generate_map(5, 5, 0.0, 0);
  WorldState world = make_world(map, {{{0, 0}, {4, 4}}});
  CHECK_THROWS_AS(build_prompt(snapshot_from(world), std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("build_prompt: over-budget prompts truncate obstacles to FOV relevance first") {
  GridMap map = generate_map(60, 60, 0.2, 6);
  Instance inst = sample_instance(map, 2, 7);
  WorldState world = make_world(map, inst);
  WorldSnapshot snap = snapshot_from(world);
  std::vector<int> ids{0};
  PromptBundle full = build_prompt(snap, ids, 1 << 20);
  PromptBundle tight = build_prompt(snap, ids, 4000);
  CHECK(tight.full_text().size() <= 4000);
  CHECK(tight.full_text().size() < full.full_text().size());
  // an absurdly small budget cannot be met
  CHECK_THROWS_AS(build_prompt(snap, ids, 64), std::runtime_error);
}

TEST_CASE("parse_response: plain block parses") {
  std::vector<int> ids{0, 1};
  AdvisorResponse r = parse_response("agent 0: EAST\nagent 1: WAIT", ids);
  CHECK(r.fallback_reasons.empty());
  CHECK(r.actions.at(0) == Action::East);
  CHECK(r.actions.at(1) == Action::Wait);
}

TEST_CASE("parse_response: case-insensitive names and marker extraction") {
  std::vector<int> ids{3};
  AdvisorResponse r = parse_response("reasoning...\nACTIONS:\nagent 3: south\n", ids);
  CHECK(r.actions.at(3) == Action::South);
}

TEST_CASE("parse_response: chain-of-thought prose before the block is ignored") {
  std::vector<int> ids{0, 1};
  std::string text =
      "Agent 0 should go EAST because the corridor is clear.\n"
      "But wait, agent 1: WEST would collide, so agent 1 must wait.\n"
      "Let me reconsider agent 0 once more...\n"
      "ACTIONS:\n"
      "agent 0: NORTH\n"
      "agent 1: WAIT\n";
  AdvisorResponse r = parse_response(text, ids);
  CHECK(r.actions.at(0) == Action::North);  // the block, not the prose
  CHECK(r.actions.at(1) == Action::Wait);
}

TEST_CASE("parse_response: block without marker is found as the last run of action lines") {
  std::vector<int> ids{0, 1};
  std::string text =
      "Here is my plan.\n"
      "agent 0: EAST\n"
      "agent 1: SOUTH\n";
  AdvisorResponse r = parse_response(text, ids);
  CHECK(r.actions.at(0) == Action::East);
  CHECK(r.actions.at(1) == Action::South);
}

TEST_CASE("parse_response: garbled text degrades each agent with a reason") {
  std::vector<int> ids{0, 1};
  AdvisorResponse r = parse_response("%%% total nonsense ###", ids);
  CHECK(r.actions.empty());
  REQUIRE(r.fallback_reasons.size() == 2);
  CHECK(r.fallback_reasons.at(0) == "agent missing from answer block");
}

TEST_CASE("parse_response: unknown action names fall back with the token") {
  std::vector<int> ids{0};
  AdvisorResponse r = parse_response("ACTIONS:\nagent 0: JUMP\n", ids);
  CHECK(r.actions.empty());
  CHECK(r.fallback_reasons.at(0).find("JUMP") != std::string::npos);
}

// ---------------------------------------------------------------------------
// transport contract against a local stub server (no external network)

namespace {

struct StubServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit StubServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server.Post("/v1/chat/completions", std::move(handler));
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubServer() {
    server.stop();
    thread.join();
  }
  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  }
};

std::string openai_reply(const std::string& content) {
  nlohmann::json j;
  j["choices"] = nlohmann::json::array(
      {nlohmann::json{{"message", nlohmann::json{{"role", "assistant"}, {"content", content}}}}});
  return j.dump();
}

WorldState two_agent_world() {
  GridMap map = generate_map(8, 8, 0.0, 0);
  return make_world(map, {{{1, 1}, {1, 5}}, {{4, 4}, {6, 4}}});
}

}  // namespace

TEST_CASE("llm_advise: valid stub response is parsed into actions") {
  StubServer stub([](const httplib::Request& req, httplib::Response& res) {
    CHECK(req.get_header_value("Authorization") == "Bearer test-key");
    auto body = nlohmann::json::parse(req.body);
    CHECK(body.at("model") == "gpt-4o");
    CHECK(body.at("messages").size() == 2);
    res.set_content(openai_reply("ACTIONS:\nagent 0: EAST\nagent 1: SOUTH\n"), "application/json");
  });
  LlmConfig config;
  config.endpoint = stub.endpoint();
  config.api_key = "test-key";
  LlmClient client(config);
  WorldState world = two_agent_world();
  auto actions = client.advise(WorldSnapshot::take(world), std::vector<int>{0, 1});
  REQUIRE(actions.size() == 2);
  CHECK(actions[0] == Action::East);
  CHECK(actions[1] == Action::South);
  CHECK(client.stats().transport_failures == 0);
}

TEST_CASE("llm_advise: 500 twice then success succeeds via retries") {
  std::atomic<int> hits{0};
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    if (hits++ < 2) {
      res.status = 500;
      res.set_content("overloaded", "text/plain");
    } else {
      res.set_content(openai_reply("ACTIONS:\nagent 0: NORTH\nagent 1: WAIT\n"),
                      "application/json");
    }
  });
  LlmConfig config;
  config.endpoint = stub.endpoint();
  config.max_retries = 2;
  LlmClient client(config);
  WorldState world = two_agent_world();
  auto actions = client.advise(WorldSnapshot::take(world), std::vector<int>{0, 1});
  CHECK(hits == 3);
  CHECK(actions[0] == Action::North);
  CHECK(actions[1] == Action::Wait);
}

TEST_CASE("llm_advise: exhausted retries fall back for every agent") {
  std::atomic<int> hits{0};
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 500;
    res.set_content("overloaded", "text/plain");
  });
  LlmConfig config;
  config.endpoint = stub.endpoint();
  config.max_retries = 1;
  config.fallback = LlmConfig::Fallback::Wait;
  LlmClient client(config);
  WorldState world = two_agent_world();
  auto actions = client.advise(WorldSnapshot::take(world), std::vector<int>{0, 1});
  CHECK(hits == 2);  // first try + one retry
  CHECK(actions == std::vector<Action>{Action::Wait, Action::Wait});
  CHECK(client.stats().transport_failures == 1);
}

TEST_CASE("llm_advise: oracle fallback still makes progress on failure") {
  LlmConfig config;
  config.endpoint = "http://127.0.0.1:9";  // nothing listens on the discard port
  config.timeout_ms = 200;
  config.max_retries = 0;
  config.fallback = LlmConfig::Fallback::Oracle;
  LlmClient client(config);
  WorldState world = two_agent_world();
  auto actions = client.advise(WorldSnapshot::take(world), std::vector<int>{0, 1});
  REQUIRE(actions.size() == 2);
  CHECK(actions[0] == Action::East);   // oracle answer on the open map
  CHECK(actions[1] == Action::South);
}

TEST_CASE("llm_advise: malformed response body degrades to fallback") {
  StubServer stub([](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"unexpected\": true}", "application/json");
  });
  LlmConfig config;
  config.endpoint = stub.endpoint();
  config.fallback = LlmConfig::Fallback::Wait;
  LlmClient client(config);
  WorldState world = two_agent_world();
  auto actions = client.advise(WorldSnapshot::take(world), std::vector<int>{0, 1});
  CHECK(actions == std::vector<Action>{Action::Wait, Action::Wait});
}
