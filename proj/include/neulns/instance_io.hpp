// Random instance generation and the JSON file formats for instances and
// solutions.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "neulns/vrp.hpp"

namespace neulns {

NEULNS_DEFINE_ERROR(ParseError);

enum class Variant { CVRP, CVRPTW };

const char* to_string(Variant v);
Variant parse_variant(const std::string& s);

struct GeneratorConfig {
  int n_customers = 99;
  double map_size = 100.0;
  std::pair<int, int> demand_range{1, 9};
  double capacity = 100.0;
  std::pair<double, double> tw_start_range{0.0, 290.0};
  std::pair<double, double> tw_due_range{10.0, 300.0};
  double service_time = 10.0;
  std::pair<double, double> depot_window{0.0, 300.0};
  double vehicle_cost = 0.0;
  std::uint64_t seed = 0;
  Variant variant = Variant::CVRP;
};

// Throws Error if a range is empty or n_customers < 1.
void validate(const GeneratorConfig& config);

// Depot at index 0 followed by n_customers customers. For CVRPTW, the window
// start is drawn from tw_start_range and the due time from
// [start + tw_due_range.first, tw_due_range.second]; customers that cannot be served
// alone (window unreachable or no timely return) are redrawn.
Instance generate(const GeneratorConfig& config);

void save_instance(const Instance& instance, const std::filesystem::path& path);
Instance load_instance(const std::filesystem::path& path);

std::string instance_to_json(const Instance& instance);
Instance instance_from_json(const std::string& text);

// The cost fields are informational; loading only restores the routes.
void save_solution(const Instance& instance, const Solution& solution, const std::filesystem::path& path);
Solution load_solution(const std::filesystem::path& path);

std::string solution_to_json(const Instance& instance, const Solution& solution);
Solution solution_from_json(const std::string& text);

}  // namespace neulns
