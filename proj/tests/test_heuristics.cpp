#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "neulns/heuristics.hpp"
#include "support.hpp"

using namespace neulns;
using namespace neulns::testing;

namespace {

void check_operator_contract(const Instance& inst, const Solution& sol, const std::vector<NodeId>& nodes) {
  REQUIRE_FALSE(nodes.empty());
  std::set<NodeId> unique(nodes.begin(), nodes.end());
  CHECK(unique.size() == nodes.size());
  CHECK(unique.count(0) == 0);
  CHECK_NOTHROW(validate_proposal(inst, sol, Proposal{nodes, {}}));
}

Solution solve_initial(const Instance& inst, std::uint64_t seed) {
  Rng rng(seed);
  return build_initial_solution(inst, rng);
}

}  // namespace

TEST_CASE("random_destroy") {
  const Instance inst = small_instance(10, 1, Variant::CVRP);
  const Solution sol = solve_initial(inst, 1);

  SUBCASE("M = n is a permutation") {
    Rng rng(3);
    auto all = random_destroy(inst, sol, 10, rng);
    std::sort(all.begin(), all.end());
    CHECK(all == all_customers(inst));
  }
  SUBCASE("single draws are uniform") {
    Rng rng(4);
    std::vector<int> hits(11, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++hits[static_cast<std::size_t>(random_destroy(inst, sol, 1, rng)[0])];
    const double sigma = std::sqrt(0.1 * 0.9 / n);
    for (int c = 1; c <= 10; ++c) CHECK(std::abs(hits[static_cast<std::size_t>(c)] / double(n) - 0.1) <= 3 * sigma);
  }
  SUBCASE("same seed same list") {
    Rng a(9), b(9);
    CHECK(random_destroy(inst, sol, 4, a) == random_destroy(inst, sol, 4, b));
  }
}

TEST_CASE("alns roulette is uniform under equal weights") {
  AlnsState state;
  Rng rng(5);
  std::array<int, 3> hits{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++hits[static_cast<std::size_t>(alns_select(state, rng))];
  const double sigma = std::sqrt((1.0 / 3) * (2.0 / 3) / n);
  for (int h : hits) CHECK(std::abs(h / double(n) - 1.0 / 3) <= 3 * sigma);
}

TEST_CASE("alns weights follow simulated outcomes") {
  AlnsParams params;
  AlnsState state;
  Rng rng(6);
  for (int it = 0; it < 10 * params.segment_length; ++it) {
    state.last_selected = static_cast<int>(alns_select(state, rng));
    alns_update(state, params, state.last_selected == 1 ? Outcome::NewBest : Outcome::Rejected);
    const auto p = state.probabilities();
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
    for (double w : state.weights) CHECK(w > 0.0);
  }
  CHECK(state.probabilities()[1] > 0.5);
}

TEST_CASE("alns weights stay positive when nothing succeeds") {
  AlnsParams params;
  AlnsState state;
  for (int it = 0; it < 200000; ++it) {
    state.last_selected = it % 3;
    alns_update(state, params, Outcome::Rejected);
  }
  for (double w : state.weights) CHECK(w > 0.0);
}

TEST_CASE("worst removal takes the grossly detoured customer first") {
  // customers on a line, except customer 4 which sits far off to the side
  std::vector<Node> nodes{customer(0, 0, 0, 0),  customer(1, 10, 0, 1), customer(2, 20, 0, 1),
                          customer(3, 30, 0, 1), customer(4, 35, 80, 1), customer(5, 40, 0, 1)};
  const Instance inst = Instance::euclidean("detour", nodes, 100);
  const Solution sol{{Route{{1, 2, 3, 4, 5}}}, {}};
  // exhaustive saving computation
  NodeId worst = 0;
  double best_saving = -kInfinity;
  for (std::size_t p = 0; p < 5; ++p) {
    const auto& v = sol.routes[0].visits;
    const NodeId prev = p == 0 ? 0 : v[p - 1];
    const NodeId next = p == 4 ? 0 : v[p + 1];
    const double s = inst.distance(prev, v[p]) + inst.distance(v[p], next) - inst.distance(prev, next);
    if (s > best_saving) best_saving = s, worst = v[p];
  }
  REQUIRE(worst == 4);
  Rng rng(7);
  const auto removed = worst_removal(inst, sol, 2, 1e9, rng);
  CHECK(removed.front() == 4);
}

TEST_CASE("shaw removal picks related customers") {
  const Instance inst = small_instance(60, 3, Variant::CVRPTW);
  const Solution sol = solve_initial(inst, 3);
  Rng rng(8);
  AlnsParams params;
  for (int i = 0; i < 50; ++i) {
    const auto removed = shaw_removal(inst, sol, 6, params, rng);
    CHECK(removed.size() == 6);
    check_operator_contract(inst, sol, removed);
  }
}

TEST_CASE("sisr with unit strings on one route removes one node") {
  const Instance inst = small_instance(8, 2, Variant::CVRP);
  Solution sol{{Route{all_customers(inst)}}, {}};
  Rng rng(2);
  SisrParams params;
  params.max_string_length = 1;
  for (int i = 0; i < 100; ++i) CHECK(sisr_propose(inst, sol, params, 5, rng).size() == 1);
}

TEST_CASE("sisr strings are contiguous within one route") {
  const Instance inst = small_instance(99, 4, Variant::CVRP);
  const Solution sol = solve_initial(inst, 4);
  std::vector<std::pair<int, int>> where(static_cast<std::size_t>(inst.size()));  // (route, position)
  for (std::size_t r = 0; r < sol.routes.size(); ++r) {
    for (std::size_t p = 0; p < sol.routes[r].size(); ++p) {
      where[static_cast<std::size_t>(sol.routes[r].visits[p])] = {static_cast<int>(r), static_cast<int>(p)};
    }
  }
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const auto removed = sisr_propose(inst, sol, SisrParams{}, 10, rng);
    check_operator_contract(inst, sol, removed);
    std::map<int, std::vector<int>> by_route;
    for (NodeId c : removed) by_route[where[static_cast<std::size_t>(c)].first].push_back(where[static_cast<std::size_t>(c)].second);
    CHECK(by_route.size() <= 3);
    for (auto& [route, positions] : by_route) {
      std::sort(positions.begin(), positions.end());
      CHECK(positions.back() - positions.front() + 1 == static_cast<int>(positions.size()));
    }
    for (std::size_t k = 1; k < removed.size(); ++k) {
      CHECK(inst.node(removed[k - 1]).demand >= inst.node(removed[k]).demand);
    }
  }
}

TEST_CASE("sisr removal count averages M") {
  const Instance inst = small_instance(99, 6, Variant::CVRP);
  const Solution sol = solve_initial(inst, 6);
  Rng rng(6);
  double total = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) total += static_cast<double>(sisr_propose(inst, sol, SisrParams{}, 10, rng).size());
  CHECK(std::abs(total / n - 10.0) <= 1.0);
}

TEST_CASE("all baseline operators honour the operator contract") {
  std::vector<std::unique_ptr<Operator>> ops;
  ops.push_back(std::make_unique<RandomOperator>());
  ops.push_back(std::make_unique<AlnsOperator>());
  ops.push_back(std::make_unique<SisrOperator>());
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Instance inst = small_instance(40, seed, seed % 2 ? Variant::CVRPTW : Variant::CVRP);
    const Solution sol = solve_initial(inst, seed);
    Rng rng(seed);
    for (auto& op : ops) {
      const Proposal p = op->propose(inst, sol, ProposalContext{4, DecodeMode::Sample}, rng);
      check_operator_contract(inst, sol, p.nodes);
      op->observe(Outcome::Rejected);
    }
  }
}
