#include "neulns/lns.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <thread>

namespace neulns {

const char* to_string(DecodeMode m) { return m == DecodeMode::Greedy ? "greedy" : "sample"; }

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::Greedy;
  if (s == "sample") return DecodeMode::Sample;
  throw Error("unknown decode mode '" + s + "' (expected greedy or sample)");
}

void validate_proposal(const Instance& instance, const Solution& solution, const Proposal& p) {
  if (p.nodes.empty() || static_cast<int>(p.nodes.size()) > instance.num_customers()) {
    throw InvalidDestroySet("proposal size " + std::to_string(p.nodes.size()) + " out of range");
  }
  std::vector<char> assigned(static_cast<std::size_t>(instance.size()), 0);
  for (const Route& r : solution.routes) {
    for (NodeId c : r.visits) assigned[static_cast<std::size_t>(c)] = 1;
  }
  for (NodeId c : p.nodes) {
    if (!instance.is_customer(c) || assigned[static_cast<std::size_t>(c)] != 1) {
      throw InvalidDestroySet("proposal contains unassigned, repeated or depot node " + std::to_string(c));
    }
    assigned[static_cast<std::size_t>(c)] = 2;
  }
}

double open_unit(Rng& rng) {
  // 53 random mantissa bits, shifted half a step off zero.
  const std::uint64_t k = rng() >> 11;
  return (static_cast<double>(k) + 0.5) * 0x1.0p-53;
}

bool sa_accept(const CostBreakdown& prev, const CostBreakdown& cand, const SAState& sa, Rng& rng) {
  if (cand.vehicle_count < prev.vehicle_count) return true;
  const double u = open_unit(rng);
  return cand.total_distance < prev.total_distance - sa.temperature * std::log(u);
}

int default_removal_count(int num_customers) {
  // A single removed customer can always go back where it was, so M = 1 turns
  // the search into pure descent.
  const int floor = std::min(2, std::max(1, num_customers));
  return std::max(floor, static_cast<int>(std::lround(0.10 * num_customers)));
}

void write_trace_csv(std::ostream& out, const SearchTrace& trace) {
  out << "iter,current_cost,best_cost,k,temperature,accepted,op\n";
  out << std::setprecision(17);
  for (const TraceRow& r : trace) {
    out << r.iter << ',' << r.current_cost << ',' << r.best_cost << ',' << r.k << ','
        << r.temperature << ',' << (r.accepted ? 1 : 0) << ',' << r.op << '\n';
  }
}

void write_trace_csv(const std::string& path, const SearchTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_trace_csv(out, trace);
}

LnsSearch::LnsSearch(const Instance& instance, const SearchConfig& config, Rng& rng)
    : instance_(&instance), started_(std::chrono::steady_clock::now()) {
  if (config.iterations < 1) throw Error("iterations must be >= 1");
  current_ = build_initial_solution(instance, rng);
  current_cost_ = evaluate(instance, current_);
  best_ = current_;
  best_cost_ = current_cost_;
  removal_count_ = std::clamp(config.removal_count.value_or(default_removal_count(instance.num_customers())),
                              1, std::max(1, instance.num_customers()));
  t0_ = config.initial_temperature.value_or(0.01 * current_cost_.total_distance);
  if (!(t0_ > 0.0)) t0_ = 1e-9;
  decay_ = config.decay.value_or(std::pow(0.1, 1.0 / config.iterations));
  if (!(decay_ > 0.0 && decay_ <= 1.0)) throw Error("temperature decay must lie in (0, 1]");
}

double LnsSearch::next_temperature() const { return t0_ * std::pow(decay_, iteration_ + 1); }

StepResult LnsSearch::apply(std::span<const NodeId> removal, Rng& rng) {
  const SAState sa{next_temperature(), decay_};
  ++iteration_;
  Solution cand = repair(*instance_, remove_nodes(*instance_, current_, removal), removal);
  StepResult res;
  res.candidate = evaluate(*instance_, cand);
  res.accepted = sa_accept(current_cost_, res.candidate, sa, rng);
  if (res.accepted) {
    const bool improving = res.candidate.total_cost < current_cost_.total_cost;
    current_ = std::move(cand);
    current_cost_ = res.candidate;
    if (current_cost_.total_cost < best_cost_.total_cost) {
      best_ = current_;
      best_cost_ = current_cost_;
      res.outcome = Outcome::NewBest;
    } else {
      res.outcome = improving ? Outcome::AcceptedImproving : Outcome::AcceptedWorse;
    }
  }
  return res;
}

StepResult LnsSearch::step(Operator& op, DecodeMode mode, Rng& rng, SearchTrace* trace) {
  const double temperature = next_temperature();
  const Proposal p = op.propose(*instance_, current_, ProposalContext{removal_count_, mode}, rng);
  validate_proposal(*instance_, current_, p);
  const StepResult res = apply(p.nodes, rng);
  op.observe(res.outcome);
  if (trace) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    trace->push_back(TraceRow{iteration_, current_cost_.total_cost, best_cost_.total_cost,
                              current_cost_.vehicle_count, temperature, res.accepted, op.name(), wall});
  }
  return res;
}

SearchResult run_search(const Instance& instance, Operator& op, const SearchConfig& config) {
  Rng rng(config.seed);
  LnsSearch search(instance, config, rng);
  SearchResult out;
  out.trace.reserve(static_cast<std::size_t>(config.iterations));
  for (int t = 0; t < config.iterations; ++t) search.step(op, config.mode, rng, &out.trace);
  out.best = search.best();
  out.best_cost = search.best_cost();
  return out;
}

std::uint64_t member_seed(std::uint64_t base, std::size_t instance_index, std::size_t member) {
  // splitmix64 finaliser over the combined key
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ instance_index) ^ member);
}

int default_parallelism() {
  if (const char* env = std::getenv("NEULNS_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, int parallelism, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, parallelism)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

BatchResult run_batch(std::span<const Instance> instances, const Operator& prototype,
                      const SearchConfig& config, int batch, int parallelism) {
  if (batch < 1) throw Error("batch size must be >= 1");
  const std::size_t b = static_cast<std::size_t>(batch);
  BatchResult out;
  out.runs.assign(instances.size(), std::vector<SearchResult>(b));
  parallel_for(instances.size() * b, parallelism, [&](std::size_t task) {
    const std::size_t i = task / b;
    const std::size_t m = task % b;
    SearchConfig cfg = config;
    cfg.seed = member_seed(config.seed, i, m);
    auto op = prototype.clone();
    out.runs[i][m] = run_search(instances[i], *op, cfg);
  });
  double sum = 0.0;
  for (const auto& members : out.runs) {
    std::size_t arg = 0;
    for (std::size_t m = 1; m < members.size(); ++m) {
      if (members[m].best_cost.total_cost < members[arg].best_cost.total_cost) arg = m;
    }
    out.instance_best.push_back(members[arg].best_cost.total_cost);
    out.instance_best_member.push_back(static_cast<int>(arg));
    sum += out.instance_best.back();
  }
  out.mean_best = instances.empty() ? 0.0 : sum / static_cast<double>(instances.size());
  return out;
}

}  // namespace neulns
