#include "neulns/instance_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace neulns {

using nlohmann::json;

const char* to_string(Variant v) { return v == Variant::CVRP ? "cvrp" : "cvrptw"; }

Variant parse_variant(const std::string& s) {
  if (s == "cvrp") return Variant::CVRP;
  if (s == "cvrptw") return Variant::CVRPTW;
  throw Error("unknown variant '" + s + "' (expected cvrp or cvrptw)");
}

void validate(const GeneratorConfig& c) {
  if (c.n_customers < 1) throw Error("n_customers must be >= 1");
  if (!(c.map_size > 0.0)) throw Error("map_size must be positive");
  if (c.demand_range.first > c.demand_range.second || c.demand_range.first < 0) {
    throw Error("demand_range is empty or negative");
  }
  if (!(c.capacity > 0.0) || c.demand_range.second > c.capacity) {
    throw Error("capacity must cover the largest demand");
  }
  if (c.variant == Variant::CVRPTW) {
    if (!(c.tw_start_range.first <= c.tw_start_range.second)) throw Error("tw_start_range is empty");
    if (!(c.tw_start_range.second + c.tw_due_range.first <= c.tw_due_range.second)) {
      throw Error("tw_due_range leaves no room after the latest window start");
    }
    if (!(c.depot_window.first <= c.depot_window.second)) throw Error("depot_window is empty");
  }
}

Instance generate(const GeneratorConfig& config) {
  validate(config);
  Rng rng(config.seed);
  std::uniform_real_distribution<double> coord(0.0, config.map_size);
  std::uniform_int_distribution<int> demand(config.demand_range.first, config.demand_range.second);
  std::uniform_real_distribution<double> start(config.tw_start_range.first, config.tw_start_range.second);
  const bool tw = config.variant == Variant::CVRPTW;

  std::vector<Node> nodes;
  nodes.reserve(static_cast<std::size_t>(config.n_customers) + 1);
  Node depot;
  depot.x = coord(rng);
  depot.y = coord(rng);
  if (tw) {
    depot.tw_start = config.depot_window.first;
    depot.tw_end = config.depot_window.second;
  }
  nodes.push_back(depot);

  // Redraw guard: the decided sampling rule already keeps windows non-empty,
  // this rejects customers that cannot return to the depot in time.
  constexpr int kMaxDraws = 10000;
  for (int i = 1; i <= config.n_customers; ++i) {
    Node c;
    int draws = 0;
    for (;;) {
      c = Node{};
      c.id = i;
      c.x = coord(rng);
      c.y = coord(rng);
      c.demand = demand(rng);
      if (tw) {
        c.tw_start = start(rng);
        std::uniform_real_distribution<double> due(c.tw_start + config.tw_due_range.first,
                                                   config.tw_due_range.second);
        c.tw_end = due(rng);
        c.service_time = config.service_time;
        const double d = std::hypot(c.x - depot.x, c.y - depot.y);
        const double b = std::max(depot.tw_start + d, c.tw_start);
        if (b <= c.tw_end && b + c.service_time + d <= depot.tw_end) break;
      } else {
        break;
      }
      if (++draws >= kMaxDraws) throw Error("generator could not place a feasible customer");
    }
    nodes.push_back(c);
  }

  Instance inst = Instance::euclidean(std::string(to_string(config.variant)) + "-" +
                                          std::to_string(config.n_customers) + "-" +
                                          std::to_string(config.seed),
                                      std::move(nodes), config.capacity, config.vehicle_cost);
  inst.set_map_size(config.map_size);
  return inst;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ParseError("line " + std::to_string(line) + ": " + e.what());
  }
}

const json& field(const json& obj, const char* key, const std::string& context) {
  if (!obj.is_object()) throw SchemaError(context + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(context + ": missing field '" + key + "'");
  return *it;
}

double number(const json& obj, const char* key, const std::string& context) {
  const json& v = field(obj, key, context);
  if (!v.is_number()) throw ParseError(context + ": field '" + key + "' is not a number");
  return v.get<double>();
}

// Infinite window ends are written as null.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_inf(const json& obj, const char* key, const std::string& context) {
  const json& v = field(obj, key, context);
  if (v.is_null()) return kInfinity;
  if (!v.is_number()) throw ParseError(context + ": field '" + key + "' is not a number");
  return v.get<double>();
}

}  // namespace

std::string instance_to_json(const Instance& instance) {
  json j;
  j["name"] = instance.name();
  j["capacity"] = instance.capacity();
  j["vehicle_cost"] = instance.vehicle_cost();
  if (instance.map_size() > 0.0) j["map_size"] = instance.map_size();
  if (auto k = instance.fleet_limit()) j["fleet_limit"] = *k;
  json nodes = json::array();
  for (const Node& n : instance.nodes()) {
    nodes.push_back({{"id", n.id},
                     {"x", n.x},
                     {"y", n.y},
                     {"demand", n.demand},
                     {"tw_start", n.tw_start},
                     {"tw_end", finite_or_null(n.tw_end)},
                     {"service", n.service_time}});
  }
  j["nodes"] = std::move(nodes);
  if (instance.is_euclidean()) {
    j["matrix"] = "euclidean";
  } else {
    j["matrix"] = std::vector<double>(instance.matrix().begin(), instance.matrix().end());
  }
  return j.dump(1);
}

namespace {

Instance instance_from_json_impl(const std::string& text) {
  const json j = parse_json(text);
  const std::string ctx = "instance";
  const json& jn = field(j, "nodes", ctx);
  if (!jn.is_array()) throw SchemaError("instance: 'nodes' must be an array");
  std::vector<Node> nodes;
  for (std::size_t i = 0; i < jn.size(); ++i) {
    const std::string nctx = "nodes[" + std::to_string(i) + "]";
    const json& o = jn[i];
    Node n;
    const json& id = field(o, "id", nctx);
    if (!id.is_number_integer()) throw ParseError(nctx + ": field 'id' is not an integer");
    n.id = id.get<int>();
    n.x = number(o, "x", nctx);
    n.y = number(o, "y", nctx);
    n.demand = number(o, "demand", nctx);
    n.tw_start = number(o, "tw_start", nctx);
    n.tw_end = number_or_inf(o, "tw_end", nctx);
    n.service_time = number(o, "service", nctx);
    nodes.push_back(n);
  }
  std::string name = field(j, "name", ctx).get<std::string>();
  const double capacity = number(j, "capacity", ctx);
  const double vehicle_cost = j.contains("vehicle_cost") ? number(j, "vehicle_cost", ctx) : 0.0;

  const json& m = field(j, "matrix", ctx);
  Instance inst;
  if (m.is_string()) {
    if (m.get<std::string>() != "euclidean") throw SchemaError("instance: 'matrix' must be an array or \"euclidean\"");
    inst = Instance::euclidean(std::move(name), std::move(nodes), capacity, vehicle_cost);
  } else if (m.is_array()) {
    std::vector<double> matrix;
    matrix.reserve(m.size());
    for (const json& v : m) {
      if (!v.is_number()) throw ParseError("instance: non-numeric matrix entry");
      matrix.push_back(v.get<double>());
    }
    inst = Instance(std::move(name), std::move(nodes), std::move(matrix), capacity, vehicle_cost);
  } else {
    throw SchemaError("instance: 'matrix' must be an array or \"euclidean\"");
  }
  if (j.contains("map_size")) inst.set_map_size(number(j, "map_size", ctx));
  if (j.contains("fleet_limit")) inst.set_fleet_limit(field(j, "fleet_limit", ctx).get<int>());
  return inst;
}

}  // namespace

Instance instance_from_json(const std::string& text) {
  try {
    return instance_from_json_impl(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("instance: ") + e.what());
  }
}

void save_instance(const Instance& instance, const std::filesystem::path& path) {
  write_file(path, instance_to_json(instance));
}

Instance load_instance(const std::filesystem::path& path) { return instance_from_json(read_file(path)); }

std::string solution_to_json(const Instance& instance, const Solution& solution) {
  json j;
  j["instance_name"] = instance.name();
  json routes = json::array();
  for (const Route& r : solution.routes) routes.push_back(r.visits);
  j["routes"] = std::move(routes);
  if (solution.complete()) {
    const CostBreakdown c = evaluate(instance, solution);
    j["total_distance"] = c.total_distance;
    j["vehicle_count"] = c.vehicle_count;
    j["total_cost"] = c.total_cost;
  } else {
    j["unassigned"] = solution.unassigned;
  }
  return j.dump(1);
}

namespace {

Solution solution_from_json_impl(const std::string& text) {
  const json j = parse_json(text);
  const json& routes = field(j, "routes", "solution");
  if (!routes.is_array()) throw SchemaError("solution: 'routes' must be an array");
  Solution s;
  for (std::size_t r = 0; r < routes.size(); ++r) {
    if (!routes[r].is_array()) throw SchemaError("solution: routes[" + std::to_string(r) + "] must be an array");
    Route route;
    for (const json& v : routes[r]) {
      if (!v.is_number_integer()) {
        throw ParseError("solution: routes[" + std::to_string(r) + "] has a non-integer entry");
      }
      route.visits.push_back(v.get<NodeId>());
    }
    s.routes.push_back(std::move(route));
  }
  if (j.contains("unassigned")) s.unassigned = j["unassigned"].get<std::vector<NodeId>>();
  return s;
}

}  // namespace

Solution solution_from_json(const std::string& text) {
  try {
    return solution_from_json_impl(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("solution: ") + e.what());
  }
}

void save_solution(const Instance& instance, const Solution& solution, const std::filesystem::path& path) {
  write_file(path, solution_to_json(instance, solution));
}

Solution load_solution(const std::filesystem::path& path) { return solution_from_json(read_file(path)); }

}  // namespace neulns
