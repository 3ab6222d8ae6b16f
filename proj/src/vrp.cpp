#include "neulns/vrp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

namespace neulns {

namespace {

void validate_nodes(const std::vector<Node>& nodes) {
  if (nodes.empty()) throw SchemaError("instance has no depot");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    const std::string where = "node " + std::to_string(i);
    if (n.id != static_cast<NodeId>(i)) throw SchemaError(where + ": id must equal its index");
    if (!(n.demand >= 0.0)) throw SchemaError(where + ": negative demand");
    if (!(n.tw_start <= n.tw_end)) throw SchemaError(where + ": tw_start > tw_end");
    if (!(n.service_time >= 0.0)) throw SchemaError(where + ": negative service time");
  }
  if (nodes.front().demand != 0.0) throw SchemaError("depot demand must be 0");
}

}  // namespace

Instance::Instance(std::string name, std::vector<Node> nodes, std::vector<double> matrix,
                   double capacity, double vehicle_cost)
    : name_(std::move(name)),
      nodes_(std::move(nodes)),
      matrix_(std::move(matrix)),
      capacity_(capacity),
      vehicle_cost_(vehicle_cost) {
  validate_nodes(nodes_);
  const std::size_t n = nodes_.size();
  if (matrix_.size() != n * n) {
    throw SchemaError("distance matrix has " + std::to_string(matrix_.size()) +
                      " entries, expected " + std::to_string(n * n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = matrix_[i * n + j];
      if (!std::isfinite(d) || d < 0.0) throw SchemaError("distance matrix entry is negative or non-finite");
      if (i == j && d != 0.0) throw SchemaError("distance matrix diagonal must be 0");
    }
  }
  if (!(capacity_ > 0.0)) throw SchemaError("capacity must be positive");
  if (!(vehicle_cost_ >= 0.0)) throw SchemaError("vehicle_cost must be non-negative");
}

Instance Instance::euclidean(std::string name, std::vector<Node> nodes, double capacity,
                             double vehicle_cost) {
  const std::size_t n = nodes.size();
  std::vector<double> matrix(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) matrix[i * n + j] = std::hypot(nodes[i].x - nodes[j].x, nodes[i].y - nodes[j].y);
    }
  }
  Instance inst(std::move(name), std::move(nodes), std::move(matrix), capacity, vehicle_cost);
  inst.euclidean_ = true;
  return inst;
}

bool Instance::has_time_windows() const {
  return std::any_of(nodes_.begin() + 1, nodes_.end(),
                     [](const Node& n) { return std::isfinite(n.tw_end); });
}

double Instance::distance_scale() const {
  if (map_size_ > 0.0) return map_size_ * std::sqrt(2.0);
  const double m = matrix_.empty() ? 0.0 : *std::max_element(matrix_.begin(), matrix_.end());
  return m > 0.0 ? m : 1.0;
}

double Instance::time_scale() const {
  const double end = depot().tw_end;
  return std::isfinite(end) && end > 0.0 ? end : distance_scale();
}

int Solution::vehicle_count() const {
  return static_cast<int>(std::count_if(routes.begin(), routes.end(),
                                        [](const Route& r) { return !r.empty(); }));
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::Capacity: return "Capacity";
    case ViolationKind::TimeWindow: return "TimeWindow";
    case ViolationKind::Duplicate: return "Duplicate";
    case ViolationKind::Missing: return "Missing";
  }
  return "?";
}

RouteSchedule schedule_route(const Instance& instance, const Route& route) {
  const std::size_t len = route.size();
  RouteSchedule s;
  s.arrival.resize(len);
  s.wait.resize(len);
  s.start.resize(len);
  s.departure.resize(len);
  s.forward_slack.resize(len);
  s.cumulative_load.resize(len);
  s.cumulative_distance.resize(len);
  s.cumulative_time.resize(len);

  const Node& depot = instance.depot();
  s.depot_departure = depot.tw_start;

  NodeId prev = 0;
  double time = s.depot_departure;
  double load = 0.0;
  double dist = 0.0;
  for (std::size_t p = 0; p < len; ++p) {
    const NodeId c = route.visits[p];
    if (!instance.is_customer(c)) {
      throw InvalidRoute("route visits invalid node id " + std::to_string(c));
    }
    const Node& node = instance.node(c);
    const double leg = instance.distance(prev, c);
    dist += leg;
    load += node.demand;
    s.arrival[p] = time + leg;
    s.start[p] = std::max(s.arrival[p], node.tw_start);
    s.wait[p] = s.start[p] - s.arrival[p];
    s.departure[p] = s.start[p] + node.service_time;
    s.cumulative_load[p] = load;
    s.cumulative_distance[p] = dist;
    s.cumulative_time[p] = s.arrival[p] - s.depot_departure;
    time = s.departure[p];
    prev = c;
  }
  const double back = instance.distance(prev, 0);
  s.distance = dist + back;
  s.return_time = time + back;
  s.route_load = load;
  s.return_slack = depot.tw_end - s.return_time;

  // F_p = min(e_p - b_p, F_{p+1} + w_{p+1}); the return to the depot closes the
  // recursion with zero wait.
  double next_slack = s.return_slack;
  double next_wait = 0.0;
  for (std::size_t p = len; p-- > 0;) {
    const Node& node = instance.node(route.visits[p]);
    s.forward_slack[p] = std::min(node.tw_end - s.start[p], next_slack + next_wait);
    next_slack = s.forward_slack[p];
    next_wait = s.wait[p];
  }
  s.depot_slack = next_slack + next_wait;
  return s;
}

double route_distance(const Instance& instance, const Route& route) {
  double d = 0.0;
  NodeId prev = 0;
  for (NodeId c : route.visits) {
    d += instance.distance(prev, c);
    prev = c;
  }
  return d + instance.distance(prev, 0);
}

CostBreakdown evaluate(const Instance& instance, const Solution& solution) {
  if (!solution.complete()) {
    throw IncompleteSolution(std::to_string(solution.unassigned.size()) +
                             " customers are unassigned");
  }
  CostBreakdown cost;
  for (const Route& r : solution.routes) {
    if (r.empty()) continue;
    cost.total_distance += route_distance(instance, r);
    ++cost.vehicle_count;
  }
  cost.total_cost = cost.total_distance + instance.vehicle_cost() * cost.vehicle_count;
  return cost;
}

std::vector<Violation> check_feasibility(const Instance& instance, const Solution& solution) {
  std::vector<Violation> out;
  std::vector<int> seen(static_cast<std::size_t>(instance.size()), 0);

  for (std::size_t r = 0; r < solution.routes.size(); ++r) {
    const Route& route = solution.routes[r];
    const int ri = static_cast<int>(r);
    for (NodeId c : route.visits) {
      if (!instance.is_customer(c)) {
        throw InvalidRoute("route " + std::to_string(r) + " visits invalid node id " + std::to_string(c));
      }
      if (seen[static_cast<std::size_t>(c)]++ > 0) out.push_back({ri, c, ViolationKind::Duplicate, 1.0});
    }
    const RouteSchedule s = schedule_route(instance, route);
    if (s.route_load > instance.capacity()) {
      out.push_back({ri, route.empty() ? 0 : route.visits.back(), ViolationKind::Capacity,
                     s.route_load - instance.capacity()});
    }
    for (std::size_t p = 0; p < route.size(); ++p) {
      const Node& node = instance.node(route.visits[p]);
      if (s.start[p] > node.tw_end) {
        out.push_back({ri, node.id, ViolationKind::TimeWindow, s.start[p] - node.tw_end});
      }
    }
    if (!route.empty() && s.return_time > instance.depot().tw_end) {
      out.push_back({ri, 0, ViolationKind::TimeWindow, s.return_time - instance.depot().tw_end});
    }
  }
  if (auto limit = instance.fleet_limit(); limit && solution.vehicle_count() > *limit) {
    out.push_back({-1, 0, ViolationKind::Capacity,
                   static_cast<double>(solution.vehicle_count() - *limit)});
  }
  for (NodeId c = 1; c < instance.size(); ++c) {
    if (seen[static_cast<std::size_t>(c)] == 0) out.push_back({-1, c, ViolationKind::Missing, 1.0});
  }
  return out;
}

Solution remove_nodes(const Instance& instance, Solution solution, std::span<const NodeId> nodes) {
  if (nodes.empty()) return solution;
  std::vector<char> drop(static_cast<std::size_t>(instance.size()), 0);
  for (NodeId c : nodes) {
    if (!instance.is_customer(c)) {
      throw InvalidDestroySet("cannot remove node " + std::to_string(c));
    }
    if (drop[static_cast<std::size_t>(c)]) {
      throw InvalidDestroySet("node " + std::to_string(c) + " listed twice");
    }
    drop[static_cast<std::size_t>(c)] = 1;
  }
  std::size_t found = 0;
  for (Route& r : solution.routes) {
    auto it = std::remove_if(r.visits.begin(), r.visits.end(), [&](NodeId c) {
      return drop[static_cast<std::size_t>(c)] != 0;
    });
    found += static_cast<std::size_t>(std::distance(it, r.visits.end()));
    r.visits.erase(it, r.visits.end());
  }
  if (found != nodes.size()) throw InvalidDestroySet("some listed nodes are not assigned to a route");
  std::erase_if(solution.routes, [](const Route& r) { return r.empty(); });
  solution.unassigned.insert(solution.unassigned.end(), nodes.begin(), nodes.end());
  return solution;
}

bool customer_feasible_alone(const Instance& instance, NodeId node) {
  if (!instance.is_customer(node)) return false;
  const Node& c = instance.node(node);
  if (c.demand > instance.capacity()) return false;
  const Node& depot = instance.depot();
  const double start = std::max(depot.tw_start + instance.distance(0, node), c.tw_start);
  if (start > c.tw_end) return false;
  return start + c.service_time + instance.distance(node, 0) <= depot.tw_end;
}

std::optional<InsertionChoice> best_insertion(const Instance& instance, const Solution& solution,
                                              NodeId node) {
  const Node& u = instance.node(node);
  const double capacity = instance.capacity();
  const double depot_end = instance.depot().tw_end;
  std::optional<InsertionChoice> best;

  for (std::size_t r = 0; r < solution.routes.size(); ++r) {
    const Route& route = solution.routes[r];
    if (route.empty()) continue;
    const RouteSchedule s = schedule_route(instance, route);
    if (s.route_load + u.demand > capacity) continue;
    const std::size_t len = route.size();
    for (std::size_t p = 0; p <= len; ++p) {
      const NodeId prev = p == 0 ? 0 : route.visits[p - 1];
      const NodeId next = p == len ? 0 : route.visits[p];
      const double delta = instance.distance(prev, node) + instance.distance(node, next) -
                           instance.distance(prev, next);
      if (best && !(delta < best->delta_cost)) continue;

      const double prev_departure = p == 0 ? s.depot_departure : s.departure[p - 1];
      const double start_u = std::max(prev_departure + instance.distance(prev, node), u.tw_start);
      if (start_u > u.tw_end) continue;
      const double arrive_next = start_u + u.service_time + instance.distance(node, next);
      if (p == len) {
        if (arrive_next > depot_end) continue;
      } else {
        const double new_start = std::max(arrive_next, instance.node(next).tw_start);
        if (new_start - s.start[p] > s.forward_slack[p]) continue;
      }
      best = InsertionChoice{static_cast<int>(r), static_cast<int>(p), delta};
    }
  }

  const auto limit = instance.fleet_limit();
  const bool may_open = !limit || solution.vehicle_count() < *limit;
  if (may_open && customer_feasible_alone(instance, node)) {
    const double delta = instance.distance(0, node) + instance.distance(node, 0) + instance.vehicle_cost();
    if (!best || delta < best->delta_cost) {
      best = InsertionChoice{static_cast<int>(solution.routes.size()), 0, delta};
    }
  }
  return best;
}

Solution least_cost_insert(const Instance& instance, Solution solution, NodeId node) {
  auto pos = std::find(solution.unassigned.begin(), solution.unassigned.end(), node);
  if (pos == solution.unassigned.end()) {
    throw InvalidDestroySet("node " + std::to_string(node) + " is not unassigned");
  }
  const auto choice = best_insertion(instance, solution, node);
  if (!choice) throw InfeasibleNode("no feasible insertion for node " + std::to_string(node));
  solution.unassigned.erase(pos);
  if (choice->route == static_cast<int>(solution.routes.size())) {
    solution.routes.push_back(Route{{node}});
  } else {
    auto& visits = solution.routes[static_cast<std::size_t>(choice->route)].visits;
    visits.insert(visits.begin() + choice->position, node);
  }
  return solution;
}

Solution repair(const Instance& instance, Solution solution, std::span<const NodeId> order) {
  for (NodeId c : order) solution = least_cost_insert(instance, std::move(solution), c);
  return solution;
}

Solution build_initial_solution(const Instance& instance, Rng& rng) {
  std::vector<NodeId> order(static_cast<std::size_t>(instance.num_customers()));
  std::iota(order.begin(), order.end(), 1);
  for (NodeId c : order) {
    if (!customer_feasible_alone(instance, c)) {
      throw InfeasibleNode("customer " + std::to_string(c) + " cannot be served by a fresh vehicle");
    }
  }
  std::shuffle(order.begin(), order.end(), rng);
  Solution s;
  s.unassigned = order;
  return repair(instance, std::move(s), order);
}

}  // namespace neulns
