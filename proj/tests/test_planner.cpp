#include <doctest.h>

#include "mapfdt/planner.hpp"
#include "mapfdt/util/rng.hpp"
#include "mapfdt/oracles.hpp"

using namespace mapfdt;

namespace {

GridMap empty_map(int w, int h) {
  GridMap m;
  m.width = w;
  m.height = h;
  m.obstacles.assign(size_t(w) * h, 0);
  return m;
}

}  // namespace

TEST_CASE("astar: straight shot on empty grid achieves Manhattan distance") {
  GridMap map = empty_map(5, 5);
  auto path = single_agent_astar(map, {0, 0}, {4, 4}, {}, 64);
  REQUIRE(path.has_value());
  CHECK(path->size() == 9);  // 8 moves
  CHECK(path->front() == Coord{0, 0});
  CHECK(path->back() == Coord{4, 4});
}

TEST_CASE("astar: walled-off goal fails") {
  GridMap map = empty_map(5, 5);
  // box in the goal at (2,2)
  for (Coord c : {Coord{1, 2}, Coord{3, 2}, Coord{2, 1}, Coord{2, 3}})
    map.obstacles[size_t(c.row) * 5 + c.col] = 1;
  CHECK_FALSE(single_agent_astar(map, {0, 0}, {2, 2}, {}, 64).has_value());
}

TEST_CASE("astar: vertex constraint forces one extra step") {
  GridMap map = empty_map(5, 1);
  SpaceTimeConstraint block;
  block.agent = 0;
  block.type = SpaceTimeConstraint::Type::Vertex;
  block.cell = {0, 1};
  block.t = 1;
  std::vector<SpaceTimeConstraint> cs{block};
  auto unconstrained = single_agent_astar(map, {0, 0}, {0, 4}, {}, 64, 0);
  auto constrained = single_agent_astar(map, {0, 0}, {0, 4}, cs, 64, 0);
  REQUIRE(unconstrained.has_value());
  REQUIRE(constrained.has_value());
  CHECK(constrained->size() == unconstrained->size() + 1);
  // agree with the space-time BFS oracle
  auto oracle_cost = oracle::spacetime_bfs_cost(map, {0, 0}, {0, 4}, cs, 64, 0);
  REQUIRE(oracle_cost.has_value());
  CHECK(int(constrained->size()) - 1 == *oracle_cost);
}

TEST_CASE("astar: constrained costs match space-time BFS oracle on random instances") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    GridMap map = generate_map(5, 5, 0.1, rng.next_u64());
    auto free = map.free_cells();
    Coord start = free[size_t(rng.uniform_below(free.size()))];
    Coord goal = free[size_t(rng.uniform_below(free.size()))];
    std::vector<SpaceTimeConstraint> cs;
    for (int k = 0; k < 6; ++k) {
      SpaceTimeConstraint c;
      c.agent = -1;
      c.type = SpaceTimeConstraint::Type::Vertex;
      c.cell = free[size_t(rng.uniform_below(free.size()))];
      c.t = 1 + int(rng.uniform_below(6));
      if (c.cell == start && c.t == 0) continue;
      cs.push_back(c);
    }
    auto got = single_agent_astar(map, start, goal, cs, 32, 0);
    auto expect = oracle::spacetime_bfs_cost(map, start, goal, cs, 32, 0);
    CHECK(got.has_value() == expect.has_value());
    if (got && expect) CHECK(int(got->size()) - 1 == *expect);
  }
}

TEST_CASE("astar: paths never revisit the goal mid-way") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    GridMap map = generate_map(6, 6, 0.2, rng.next_u64());
    auto free = map.free_cells();
    Coord start = free[size_t(rng.uniform_below(free.size()))];
    Coord goal = free[size_t(rng.uniform_below(free.size()))];
    auto path = single_agent_astar(map, start, goal, {}, 64);
    if (!path) continue;
    for (size_t t = 0; t + 1 < path->size(); ++t) CHECK((*path)[t] != goal);
  }
}

TEST_CASE("cbs: single agent equals plain A*") {
  GridMap map = generate_map(8, 8, 0.1, 3);
  auto free = map.free_cells();
  Instance inst{{free[0], free[20]}};
  PlanResult result = plan_cbs(map, inst);
  REQUIRE(result.ok());
  auto astar = single_agent_astar(map, free[0], free[20], {}, 256);
  REQUIRE(astar.has_value());
  CHECK(result.plan->paths[0] == *astar);
}

TEST_CASE("cbs: two agents crossing on empty 3x3 match joint-state optimum") {
  GridMap map = empty_map(3, 3);
  Instance inst{{{0, 0}, {0, 2}}, {{0, 2}, {0, 0}}};
  PlanResult result = plan_cbs(map, inst);
  REQUIRE(result.ok());
  CHECK(validate_plan(map, *result.plan).empty());
  auto oracle_soc = oracle::joint_optimal_soc_2agents(map, inst);
  REQUIRE(oracle_soc.has_value());
  CHECK(result.plan->soc == *oracle_soc);
}

TEST_CASE("cbs: head-on corridor with no passing cell is infeasible") {
  GridMap map = empty_map(5, 1);
  Instance inst{{{0, 0}, {0, 4}}, {{0, 4}, {0, 0}}};
  CHECK_FALSE(oracle::joint_optimal_soc_2agents(map, inst).has_value());
  PlanResult result = plan_cbs(map, inst, {.horizon = 16, .node_budget = 100000});
  CHECK_FALSE(result.ok());
  CHECK_FALSE(result.error.empty());
}

TEST_CASE("cbs: SoC matches joint-state oracle on seeded 4x4 sample") {
  Rng rng(2024);
  int tested = 0;
  while (tested < 60) {
    GridMap map = generate_map(4, 4, 0.15, rng.next_u64());
    if (map.obstacle_count() > 3) continue;
    Instance inst;
    try {
      inst = sample_instance(map, 2, rng.next_u64());
    } catch (const std::runtime_error&) {
      continue;
    }
    auto expect = oracle::joint_optimal_soc_2agents(map, inst);
    PlanResult result = plan_cbs(map, inst, {.horizon = 64, .node_budget = 100000});
    REQUIRE(expect.has_value() == result.ok());
    if (result.ok()) {
      CHECK(result.plan->soc == *expect);
      CHECK(validate_plan(map, *result.plan).empty());
    }
    ++tested;
  }
}

TEST_CASE("cbs: determinism") {
  GridMap map = generate_map(6, 6, 0.1, 9);
  Instance inst = sample_instance(map, 4, 10);
  PlanResult a = plan_cbs(map, inst);
  PlanResult b = plan_cbs(map, inst);
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(a.plan->paths == b.plan->paths);
}

TEST_CASE("cbs: adding an obstacle never lowers optimal SoC") {
  Rng rng(55);
  int tested = 0;
  while (tested < 30) {
    GridMap map = empty_map(4, 4);
    Instance inst;
    try {
      inst = sample_instance(map, 2, rng.next_u64());
    } catch (const std::runtime_error&) {
      continue;
    }
    PlanResult base = plan_cbs(map, inst, {.horizon = 64});
    REQUIRE(base.ok());
    // drop an obstacle on a cell not used as a start or goal
    GridMap harder = map;
    Coord block{int(rng.uniform_below(4)), int(rng.uniform_below(4))};
    bool clash = false;
    for (const AgentTask& t : inst) clash |= (block == t.start || block == t.goal);
    if (clash) continue;
    harder.obstacles[size_t(block.row) * 4 + block.col] = 1;
    PlanResult blocked = plan_cbs(harder, inst, {.horizon = 64});
    if (blocked.ok()) CHECK(blocked.plan->soc >= base.plan->soc);
    ++tested;
  }
}

TEST_CASE("validate_plan: detects constructed vertex conflict") {
  GridMap map = empty_map(8, 1);
  JointPlan plan = JointPlan::from_paths({
      {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {0, 4}},
      {{0, 6}, {0, 5}, {0, 4}, {0, 3}, {0, 2}},
  });
  auto conflicts = validate_plan(map, plan);
  REQUIRE_FALSE(conflicts.empty());
  bool found_vertex_t3 = false;
  for (const auto& c : conflicts)
    if (c.kind == PlanConflict::Kind::Vertex && c.t == 3 && c.cell == Coord{0, 3})
      found_vertex_t3 = true;
  CHECK(found_vertex_t3);
}

TEST_CASE("validate_plan: detects constructed edge conflict") {
  GridMap map = empty_map(4, 1);
  JointPlan plan = JointPlan::from_paths({
      {{0, 0}, {0, 0}, {0, 1}, {0, 2}},
      {{0, 2}, {0, 2}, {0, 2}, {0, 1}},
  });
  auto conflicts = validate_plan(map, plan);
  bool found_edge = false;
  for (const auto& c : conflicts)
    if (c.kind == PlanConflict::Kind::Edge && c.t == 3) found_edge = true;
  CHECK(found_edge);
}

TEST_CASE("validate_plan: vacated goals are passable") {
  GridMap map = empty_map(4, 1);
  // agent 0 arrives at (0,1) at t=1 and vacates; agent 1 passes through later
  JointPlan plan = JointPlan::from_paths({
      {{0, 0}, {0, 1}},
      {{0, 3}, {0, 2}, {0, 1}, {0, 0}},
  });
  CHECK(validate_plan(map, plan).empty());
}

TEST_CASE("validate_plan: malformed paths throw") {
  GridMap map = empty_map(3, 3);
  CHECK_THROWS_AS(validate_plan(map, JointPlan::from_paths({{{0, 0}, {2, 2}}})),
                  MalformedPlanError);
  GridMap blocked = map;
  blocked.obstacles[4] = 1;  // (1,1)
  CHECK_THROWS_AS(validate_plan(blocked, JointPlan::from_paths({{{1, 1}, {1, 2}}})),
                  MalformedPlanError);
}

TEST_CASE("prioritized: single agent identical to A*") {
  GridMap map = generate_map(7, 7, 0.1, 13);
  auto free = map.free_cells();
  Instance inst{{free[1], free[30]}};
  std::vector<int> order{0};
  PlanResult result = plan_prioritized(map, inst, order);
  REQUIRE(result.ok());
  auto astar = single_agent_astar(map, free[1], free[30], {}, 256);
  CHECK(result.plan->paths[0] == *astar);
}

TEST_CASE("prioritized: independent corridors equal CBS") {
  GridMap map = empty_map(5, 3);
  map.obstacles[1 * 5 + 0] = map.obstacles[1 * 5 + 1] = map.obstacles[1 * 5 + 2] =
      map.obstacles[1 * 5 + 3] = map.obstacles[1 * 5 + 4] = 1;
  Instance inst{{{0, 0}, {0, 4}}, {{2, 4}, {2, 0}}};
  std::vector<int> order{0, 1};
  PlanResult pp = plan_prioritized(map, inst, order);
  PlanResult cbs = plan_cbs(map, inst);
  REQUIRE(pp.ok());
  REQUIRE(cbs.ok());
  CHECK(pp.plan->soc == cbs.plan->soc);
}

TEST_CASE("prioritized: returned plans are conflict-free") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    GridMap map = generate_map(8, 8, 0.1, rng.next_u64());
    Instance inst;
    try {
      inst = sample_instance(map, 5, rng.next_u64());
    } catch (const std::runtime_error&) {
      continue;
    }
    std::vector<int> order{0, 1, 2, 3, 4};
    PlanResult result = plan_prioritized(map, inst, order);
    if (result.ok()) CHECK(validate_plan(map, *result.plan).empty());
  }
}

TEST_CASE("prioritized: blocked priority inversion fails where CBS succeeds") {
  // Corridor with one nook:
  //   ....
  //   #.##
  // Agent 0 marches (0,0)->(0,3) along its shortest path; planned first, its
  // moving reservation leaves agent 1 ((0,3)->(0,0)) no window to duck into
  // the nook at (1,1). CBS reorders the interaction and succeeds.
  GridMap map = empty_map(4, 2);
  for (Coord c : {Coord{1, 0}, Coord{1, 2}, Coord{1, 3}})
    map.obstacles[size_t(c.row) * 4 + c.col] = 1;
  Instance inst{{{0, 0}, {0, 3}}, {{0, 3}, {0, 0}}};
  CHECK(oracle::joint_optimal_soc_2agents(map, inst).has_value());
  PlanResult cbs = plan_cbs(map, inst, {.horizon = 16});
  REQUIRE(cbs.ok());
  CHECK(validate_plan(map, *cbs.plan).empty());
  CHECK(cbs.plan->soc == *oracle::joint_optimal_soc_2agents(map, inst));
  std::vector<int> order{0, 1};
  PlanResult pp = plan_prioritized(map, inst, order, {.horizon = 16});
  CHECK_FALSE(pp.ok());
  CHECK(pp.blocking_agent == 1);
}

TEST_CASE("plan JSON round-trips and validates consistency fields") {
  GridMap map = empty_map(4, 4);
  Instance inst{{{0, 0}, {3, 3}}, {{3, 0}, {0, 3}}};
  PlanResult result = plan_cbs(map, inst);
  REQUIRE(result.ok());
  std::string text = plan_to_json(*result.plan);
  JointPlan back = plan_from_json(text);
  CHECK(back.paths == result.plan->paths);
  CHECK(back.soc == result.plan->soc);
  CHECK(back.makespan == result.plan->makespan);
}
