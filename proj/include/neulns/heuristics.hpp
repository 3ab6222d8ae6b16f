// Handcrafted destroy operators used as baselines: uniform random removal,
// adaptive LNS over three removal heuristics, and string removal.
#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "neulns/lns.hpp"

namespace neulns {

// M distinct customers uniformly without replacement, repaired in draw order.
std::vector<NodeId> random_destroy(const Instance& instance, const Solution& solution, int m, Rng& rng);

class RandomOperator final : public Operator {
 public:
  std::string name() const override { return "random"; }
  Proposal propose(const Instance& instance, const Solution& solution, const ProposalContext& ctx,
                   Rng& rng) override;
  std::unique_ptr<Operator> clone() const override { return std::make_unique<RandomOperator>(*this); }
};

enum class AlnsDestroy { Random = 0, Worst = 1, Shaw = 2 };
inline constexpr std::size_t kAlnsOperators = 3;

const char* to_string(AlnsDestroy d);

struct AlnsParams {
  std::array<double, 3> scores{10.0, 5.0, 1.0};  // new best, accepted improving, accepted worse
  double reaction = 0.8;
  int segment_length = 100;
  double worst_randomness = 3.0;  // p in floor(y^p * |L|)
  double shaw_randomness = 6.0;
  double shaw_distance_weight = 9.0;
  double shaw_demand_weight = 2.0;
  double shaw_time_weight = 3.0;
};

struct AlnsState {
  std::array<double, kAlnsOperators> weights{1.0, 1.0, 1.0};
  std::array<double, kAlnsOperators> segment_score{};
  std::array<int, kAlnsOperators> segment_uses{};
  int iterations_in_segment = 0;
  int last_selected = -1;

  std::array<double, kAlnsOperators> probabilities() const;
};

// Roulette-wheel draw over the state's weights.
AlnsDestroy alns_select(const AlnsState& state, Rng& rng);

// Greedy worst removal: repeatedly removes the customer whose removal saves
// the most distance, picking rank floor(y^p * |L|) with y uniform.
std::vector<NodeId> worst_removal(const Instance& instance, const Solution& solution, int m,
                                  double randomness, Rng& rng);

// Related removal around a random seed using distance, demand and (when the
// instance has windows) window-start similarity.
std::vector<NodeId> shaw_removal(const Instance& instance, const Solution& solution, int m,
                                 const AlnsParams& params, Rng& rng);

// Chooses an operator, runs it, shuffles the result into the repair order and
// records the choice in state.last_selected.
std::vector<NodeId> alns_propose(const Instance& instance, const Solution& solution, AlnsState& state,
                                 const AlnsParams& params, int m, Rng& rng);

// Credits the last selected operator and closes the segment when due:
// w <- reaction * w + (1 - reaction) * score / uses for every used operator.
void alns_update(AlnsState& state, const AlnsParams& params, Outcome outcome);

class AlnsOperator final : public Operator {
 public:
  explicit AlnsOperator(AlnsParams params = {}) : params_(params) {}
  std::string name() const override { return "alns"; }
  Proposal propose(const Instance& instance, const Solution& solution, const ProposalContext& ctx,
                   Rng& rng) override;
  void observe(Outcome outcome) override { alns_update(state_, params_, outcome); }
  std::unique_ptr<Operator> clone() const override { return std::make_unique<AlnsOperator>(params_); }

  const AlnsState& state() const { return state_; }

 private:
  AlnsParams params_;
  AlnsState state_;
};

struct SisrParams {
  int max_strings = 3;        // routes touched per call (k_s)
  int max_string_length = 10; // L_max
};

// String removal: a uniform seed customer, then one contiguous string from
// each of the routes nearest to it, centred on that route's closest customer.
// String lengths are drawn so the expected removal count is m. Repair order is
// by decreasing demand with random tie-break.
std::vector<NodeId> sisr_propose(const Instance& instance, const Solution& solution, const SisrParams& params,
                                 int m, Rng& rng);

class SisrOperator final : public Operator {
 public:
  explicit SisrOperator(SisrParams params = {}) : params_(params) {}
  std::string name() const override { return "sisr"; }
  Proposal propose(const Instance& instance, const Solution& solution, const ProposalContext& ctx,
                   Rng& rng) override;
  std::unique_ptr<Operator> clone() const override { return std::make_unique<SisrOperator>(*this); }

 private:
  SisrParams params_;
};

}  // namespace neulns
