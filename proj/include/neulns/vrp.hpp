// Core data model for capacitated vehicle routing with optional time windows.
//
// An Instance is a directed graph over a depot (node 0) and customers with an
// explicit distance matrix; travel time equals distance. A Solution is a set of
// depot-to-depot routes plus the customers currently removed from them.
#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace neulns {

using NodeId = int;
using Rng = std::mt19937_64;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Error hierarchy. Each kind maps onto a distinct failure the callers may want
// to tell apart (the CLI turns them into exit codes).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define NEULNS_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

NEULNS_DEFINE_ERROR(InvalidRoute);
NEULNS_DEFINE_ERROR(IncompleteSolution);
NEULNS_DEFINE_ERROR(InvalidDestroySet);
NEULNS_DEFINE_ERROR(InfeasibleNode);
NEULNS_DEFINE_ERROR(SchemaError);

struct Node {
  NodeId id = 0;
  double x = 0.0;
  double y = 0.0;
  double demand = 0.0;
  double tw_start = 0.0;
  double tw_end = kInfinity;
  double service_time = 0.0;
};

class Instance {
 public:
  Instance() = default;

  // Builds an instance with a Euclidean distance matrix.
  static Instance euclidean(std::string name, std::vector<Node> nodes, double capacity,
                            double vehicle_cost = 0.0);

  // Builds an instance with an explicit row-major N x N matrix. Throws
  // SchemaError if the node invariants or the matrix shape/diagonal are violated.
  Instance(std::string name, std::vector<Node> nodes, std::vector<double> matrix,
           double capacity, double vehicle_cost = 0.0);

  const std::string& name() const { return name_; }
  std::span<const Node> nodes() const { return nodes_; }
  const Node& node(NodeId i) const { return nodes_[static_cast<std::size_t>(i)]; }
  const Node& depot() const { return nodes_.front(); }

  int size() const { return static_cast<int>(nodes_.size()); }
  int num_customers() const { return size() - 1; }
  bool contains(NodeId i) const { return i >= 0 && i < size(); }
  bool is_customer(NodeId i) const { return i > 0 && i < size(); }

  double distance(NodeId from, NodeId to) const {
    return matrix_[static_cast<std::size_t>(from) * nodes_.size() + static_cast<std::size_t>(to)];
  }
  std::span<const double> matrix() const { return matrix_; }

  double capacity() const { return capacity_; }
  double vehicle_cost() const { return vehicle_cost_; }
  void set_vehicle_cost(double c) { vehicle_cost_ = c; }

  std::optional<int> fleet_limit() const { return fleet_limit_; }
  void set_fleet_limit(std::optional<int> k) { fleet_limit_ = k; }

  // True when any customer carries a finite window end, i.e. a CVRPTW instance.
  bool has_time_windows() const;

  // Side length of the square map the instance was generated on; 0 if unknown.
  double map_size() const { return map_size_; }
  void set_map_size(double s) { map_size_ = s; }

  // Set by the Euclidean constructor and by loaders that read "euclidean".
  bool is_euclidean() const { return euclidean_; }

  // Scale used to normalise distances: map diagonal when known, otherwise the
  // largest matrix entry.
  double distance_scale() const;
  // Scale used to normalise times: depot window end when finite, otherwise the
  // distance scale (unit speed).
  double time_scale() const;

 private:
  std::string name_;
  std::vector<Node> nodes_;
  std::vector<double> matrix_;
  double capacity_ = 0.0;
  double vehicle_cost_ = 0.0;
  std::optional<int> fleet_limit_;
  double map_size_ = 0.0;
  bool euclidean_ = false;
};

struct Route {
  std::vector<NodeId> visits;  // customers only; depot implicit at both ends

  bool empty() const { return visits.empty(); }
  std::size_t size() const { return visits.size(); }
  bool operator==(const Route&) const = default;
};

struct Solution {
  std::vector<Route> routes;
  std::vector<NodeId> unassigned;

  bool complete() const { return unassigned.empty(); }
  int vehicle_count() const;
  bool operator==(const Solution&) const = default;
};

// Timing and load profile of one route. Index p refers to the p-th customer of
// the route; the return leg to the depot is reported separately.
struct RouteSchedule {
  std::vector<double> arrival;
  std::vector<double> wait;
  std::vector<double> start;      // service start b
  std::vector<double> departure;
  std::vector<double> forward_slack;
  std::vector<double> cumulative_load;
  std::vector<double> cumulative_distance;
  std::vector<double> cumulative_time;  // arrival minus depot departure

  double depot_departure = 0.0;
  double depot_slack = kInfinity;  // slack for delaying the route start itself
  double return_time = 0.0;
  double return_slack = kInfinity;
  double route_load = 0.0;
  double distance = 0.0;
};

struct CostBreakdown {
  double total_distance = 0.0;
  int vehicle_count = 0;
  double total_cost = 0.0;
};

enum class ViolationKind { Capacity, TimeWindow, Duplicate, Missing };

struct Violation {
  int route = -1;  // -1 when not tied to a route (Missing)
  NodeId node = 0;
  ViolationKind kind = ViolationKind::Capacity;
  double magnitude = 0.0;
};

const char* to_string(ViolationKind kind);

RouteSchedule schedule_route(const Instance& instance, const Route& route);

// Distance of a single route including both depot legs.
double route_distance(const Instance& instance, const Route& route);

CostBreakdown evaluate(const Instance& instance, const Solution& solution);

std::vector<Violation> check_feasibility(const Instance& instance, const Solution& solution);

inline bool is_feasible(const Instance& instance, const Solution& solution) {
  return check_feasibility(instance, solution).empty();
}

// Moves the listed customers to the unassigned set. Empty routes are dropped.
Solution remove_nodes(const Instance& instance, Solution solution, std::span<const NodeId> nodes);

struct InsertionChoice {
  int route = -1;  // == routes.size() means "open a new route"
  int position = 0;
  double delta_cost = kInfinity;
};

// Cheapest feasible (route, position) for `node`, ties broken by route index,
// then position, with a new route ordered last. Returns nullopt if no
// position is feasible, including a fresh route.
std::optional<InsertionChoice> best_insertion(const Instance& instance, const Solution& solution,
                                              NodeId node);

Solution least_cost_insert(const Instance& instance, Solution solution, NodeId node);

Solution repair(const Instance& instance, Solution solution, std::span<const NodeId> order);

Solution build_initial_solution(const Instance& instance, Rng& rng);

// Whether a customer can be served alone by a fresh vehicle.
bool customer_feasible_alone(const Instance& instance, NodeId node);

}  // namespace neulns
