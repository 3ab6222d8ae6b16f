// Large neighbourhood search with simulated-annealing acceptance.
//
// Every iteration asks an Operator for an ordered removal list, removes those
// customers, re-inserts them in list order by least-cost insertion and then
// decides whether the candidate replaces the current solution.
#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neulns/vrp.hpp"

namespace neulns {

enum class DecodeMode { Greedy, Sample };

const char* to_string(DecodeMode m);
DecodeMode parse_decode_mode(const std::string& s);

// The destroy set in repair order, plus per-step log-probabilities for learned
// operators (empty otherwise).
struct Proposal {
  std::vector<NodeId> nodes;
  std::vector<double> log_probs;
};

enum class Outcome { NewBest, AcceptedImproving, AcceptedWorse, Rejected };

struct ProposalContext {
  int removal_count = 1;
  DecodeMode mode = DecodeMode::Sample;
};

class Operator {
 public:
  virtual ~Operator() = default;

  virtual std::string name() const = 0;

  // Returns distinct, currently assigned customers; 1 <= size <= customers.
  virtual Proposal propose(const Instance& instance, const Solution& solution,
                           const ProposalContext& ctx, Rng& rng) = 0;

  // Feedback on the candidate produced from the last proposal.
  virtual void observe(Outcome) {}

  // Fresh copy with the same configuration, for independent parallel searches.
  virtual std::unique_ptr<Operator> clone() const = 0;
};

// Throws InvalidDestroySet if the proposal breaks the operator contract.
void validate_proposal(const Instance& instance, const Solution& solution, const Proposal& p);

struct SAState {
  double temperature = 1.0;
  double decay = 1.0;
};

// Uniform draw on the open interval (0, 1) from exactly one engine call.
double open_unit(Rng& rng);

// Accept if fewer vehicles are needed, otherwise compare distances against the
// annealing threshold prev - T * log(U). Draws from rng only in the second case.
bool sa_accept(const CostBreakdown& prev, const CostBreakdown& cand, const SAState& sa, Rng& rng);

// Default removal count: 10% of the customers, at least two (one if only one
// customer exists).
int default_removal_count(int num_customers);

struct SearchConfig {
  int iterations = 1000;
  std::optional<double> initial_temperature;  // default: 1% of the initial distance
  std::optional<double> decay;                // default: 0.1^(1/iterations)
  std::optional<int> removal_count;           // default: default_removal_count(n)
  std::uint64_t seed = 0;
  DecodeMode mode = DecodeMode::Sample;
};

struct TraceRow {
  int iter = 0;
  double current_cost = 0.0;
  double best_cost = 0.0;
  int k = 0;
  double temperature = 0.0;
  bool accepted = false;
  std::string op;
  double wall_seconds = 0.0;  // not part of the CSV, which must be reproducible
};

using SearchTrace = std::vector<TraceRow>;

void write_trace_csv(std::ostream& out, const SearchTrace& trace);
void write_trace_csv(const std::string& path, const SearchTrace& trace);

struct StepResult {
  CostBreakdown candidate;
  bool accepted = false;
  Outcome outcome = Outcome::Rejected;
};

// Search state shared by run_search and the trainer's rollouts.
class LnsSearch {
 public:
  // Builds the initial solution from `rng` and derives the temperature
  // schedule from `config`.
  LnsSearch(const Instance& instance, const SearchConfig& config, Rng& rng);

  const Solution& current() const { return current_; }
  const CostBreakdown& current_cost() const { return current_cost_; }
  const Solution& best() const { return best_; }
  const CostBreakdown& best_cost() const { return best_cost_; }
  int iteration() const { return iteration_; }
  int removal_count() const { return removal_count_; }
  double initial_temperature() const { return t0_; }
  double decay() const { return decay_; }
  // Temperature used by the next call to apply().
  double next_temperature() const;

  // Applies one destroy/repair move given the ordered removal list.
  StepResult apply(std::span<const NodeId> removal, Rng& rng);

  // propose -> apply -> observe, with a trace row appended when trace != null.
  StepResult step(Operator& op, DecodeMode mode, Rng& rng, SearchTrace* trace);

 private:
  const Instance* instance_;
  Solution current_;
  CostBreakdown current_cost_;
  Solution best_;
  CostBreakdown best_cost_;
  int iteration_ = 0;
  int removal_count_ = 1;
  double t0_ = 1.0;
  double decay_ = 1.0;
  std::chrono::steady_clock::time_point started_;
};

struct SearchResult {
  Solution best;
  CostBreakdown best_cost;
  SearchTrace trace;
};

SearchResult run_search(const Instance& instance, Operator& op, const SearchConfig& config);

// Seed of batch member `member` on instance `instance_index`.
std::uint64_t member_seed(std::uint64_t base, std::size_t instance_index, std::size_t member);

struct BatchResult {
  // runs[i][b]: member b on instance i.
  std::vector<std::vector<SearchResult>> runs;
  std::vector<double> instance_best;  // per-instance minimum over members
  std::vector<int> instance_best_member;
  double mean_best = 0.0;             // mean of instance_best
};

// B independent searches per instance with seeds from member_seed(config.seed,
// i, b); the results do not depend on `parallelism`.
BatchResult run_batch(std::span<const Instance> instances, const Operator& prototype,
                      const SearchConfig& config, int batch, int parallelism);

// Worker count from NEULNS_THREADS, else hardware concurrency.
int default_parallelism();

// Runs fn(i) for i in [0, count) on up to `parallelism` threads.
void parallel_for(std::size_t count, int parallelism, const std::function<void(std::size_t)>& fn);

}  // namespace neulns
