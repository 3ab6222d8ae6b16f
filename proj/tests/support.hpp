// Test-only helpers: fixtures and oracles that recompute schedules and costs
// independently of the library's incremental paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "neulns/instance_io.hpp"
#include "neulns/vrp.hpp"

namespace neulns::testing {

inline Node customer(NodeId id, double x, double y, double demand, double s = 0.0, double e = kInfinity,
                     double service = 0.0) {
  return Node{id, x, y, demand, s, e, service};
}

inline Instance small_instance(int n, std::uint64_t seed, Variant variant, double map = 100.0) {
  GeneratorConfig cfg;
  cfg.n_customers = n;
  cfg.seed = seed;
  cfg.variant = variant;
  cfg.map_size = map;
  return generate(cfg);
}

// Full replay of one route. `forced_delay` postpones the service start at
// position `delay_at` by that amount; downstream times are recomputed.
inline bool replay_route_feasible(const Instance& inst, const std::vector<NodeId>& route, int delay_at = -1,
                                  double forced_delay = 0.0, double tol = 0.0) {
  double time = inst.depot().tw_start;
  double load = 0.0;
  NodeId prev = 0;
  for (std::size_t p = 0; p < route.size(); ++p) {
    const Node& n = inst.node(route[p]);
    double start = std::max(time + inst.distance(prev, route[p]), n.tw_start);
    if (static_cast<int>(p) == delay_at) start += forced_delay;
    if (start > n.tw_end + tol) return false;
    load += n.demand;
    time = start + n.service_time;
    prev = route[p];
  }
  if (load > inst.capacity()) return false;
  return time + inst.distance(prev, 0) <= inst.depot().tw_end + tol;
}

inline bool replay_feasible(const Instance& inst, const std::vector<std::vector<NodeId>>& routes) {
  std::vector<int> seen(static_cast<std::size_t>(inst.size()), 0);
  for (const auto& r : routes) {
    for (NodeId c : r) {
      if (c <= 0 || c >= inst.size() || seen[static_cast<std::size_t>(c)]++) return false;
    }
    if (!replay_route_feasible(inst, r)) return false;
  }
  return true;
}

inline double naive_cost(const Instance& inst, const std::vector<std::vector<NodeId>>& routes) {
  double total = 0.0;
  for (const auto& r : routes) {
    if (r.empty()) continue;
    std::vector<NodeId> tour{0};
    tour.insert(tour.end(), r.begin(), r.end());
    tour.push_back(0);
    for (std::size_t i = 0; i + 1 < tour.size(); ++i) total += inst.distance(tour[i], tour[i + 1]);
    total += inst.vehicle_cost();
  }
  return total;
}

inline std::vector<std::vector<NodeId>> as_vectors(const Solution& s) {
  std::vector<std::vector<NodeId>> out;
  for (const Route& r : s.routes) out.push_back(r.visits);
  return out;
}

// Sorted multiset of customers across routes and unassigned.
inline std::vector<NodeId> customer_multiset(const Solution& s) {
  std::vector<NodeId> all(s.unassigned.begin(), s.unassigned.end());
  for (const Route& r : s.routes) all.insert(all.end(), r.visits.begin(), r.visits.end());
  std::sort(all.begin(), all.end());
  return all;
}

inline std::vector<NodeId> all_customers(const Instance& inst) {
  std::vector<NodeId> v(static_cast<std::size_t>(inst.num_customers()));
  std::iota(v.begin(), v.end(), 1);
  return v;
}

// Exact optimum over all partitions of the customers into routes and all
// visiting orders within each route. Feasible only for a handful of customers.
inline double exhaustive_optimum(const Instance& inst) {
  const int n = inst.num_customers();
  const int full = (1 << n) - 1;
  std::vector<double> route_cost(static_cast<std::size_t>(full) + 1, kInfinity);
  for (int mask = 1; mask <= full; ++mask) {
    std::vector<NodeId> members;
    for (int i = 0; i < n; ++i) {
      if (mask & (1 << i)) members.push_back(i + 1);
    }
    do {
      if (replay_route_feasible(inst, members)) {
        route_cost[static_cast<std::size_t>(mask)] =
            std::min(route_cost[static_cast<std::size_t>(mask)], naive_cost(inst, {members}));
      }
    } while (std::next_permutation(members.begin(), members.end()));
  }
  std::vector<double> best(static_cast<std::size_t>(full) + 1, kInfinity);
  best[0] = 0.0;
  for (int mask = 1; mask <= full; ++mask) {
    const int low = mask & -mask;
    // sub ranges over subsets of mask that contain its lowest customer
    for (int sub = mask; sub > 0; sub = (sub - 1) & mask) {
      if (!(sub & low)) continue;
      const double c = route_cost[static_cast<std::size_t>(sub)] + best[static_cast<std::size_t>(mask ^ sub)];
      best[static_cast<std::size_t>(mask)] = std::min(best[static_cast<std::size_t>(mask)], c);
    }
  }
  return best[static_cast<std::size_t>(full)];
}

}  // namespace neulns::testing
