#include "neulns/heuristics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace neulns {

namespace {

std::vector<NodeId> assigned_customers(const Solution& solution) {
  std::vector<NodeId> out;
  for (const Route& r : solution.routes) out.insert(out.end(), r.visits.begin(), r.visits.end());
  return out;
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Rank floor(y^p * n) with y ~ U[0,1): small ranks are favoured as p grows.
std::size_t biased_rank(std::size_t n, double p, Rng& rng) {
  const double y = uniform01(rng);
  return std::min(n - 1, static_cast<std::size_t>(std::pow(y, p) * static_cast<double>(n)));
}

}  // namespace

std::vector<NodeId> random_destroy(const Instance& instance, const Solution& solution, int m, Rng& rng) {
  (void)instance;
  std::vector<NodeId> pool = assigned_customers(solution);
  std::sort(pool.begin(), pool.end());
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(std::max(m, 0)), pool.size());
  // Partial Fisher-Yates: the first `take` slots are a uniform ordered sample.
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(take);
  return pool;
}

Proposal RandomOperator::propose(const Instance& instance, const Solution& solution,
                                 const ProposalContext& ctx, Rng& rng) {
  return Proposal{random_destroy(instance, solution, ctx.removal_count, rng), {}};
}

const char* to_string(AlnsDestroy d) {
  switch (d) {
    case AlnsDestroy::Random: return "random";
    case AlnsDestroy::Worst: return "worst";
    case AlnsDestroy::Shaw: return "shaw";
  }
  return "?";
}

std::array<double, kAlnsOperators> AlnsState::probabilities() const {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::array<double, kAlnsOperators> p{};
  for (std::size_t i = 0; i < kAlnsOperators; ++i) p[i] = weights[i] / total;
  return p;
}

AlnsDestroy alns_select(const AlnsState& state, Rng& rng) {
  std::discrete_distribution<int> wheel(state.weights.begin(), state.weights.end());
  return static_cast<AlnsDestroy>(wheel(rng));
}

std::vector<NodeId> worst_removal(const Instance& instance, const Solution& solution, int m,
                                  double randomness, Rng& rng) {
  std::vector<Route> routes = solution.routes;
  std::vector<NodeId> removed;
  struct Candidate {
    double saving;
    NodeId node;
    std::size_t route;
    std::size_t pos;
  };
  std::vector<Candidate> cands;
  while (static_cast<int>(removed.size()) < m) {
    cands.clear();
    for (std::size_t r = 0; r < routes.size(); ++r) {
      const auto& v = routes[r].visits;
      for (std::size_t p = 0; p < v.size(); ++p) {
        const NodeId prev = p == 0 ? 0 : v[p - 1];
        const NodeId next = p + 1 == v.size() ? 0 : v[p + 1];
        const double saving = instance.distance(prev, v[p]) + instance.distance(v[p], next) -
                              instance.distance(prev, next);
        cands.push_back({saving, v[p], r, p});
      }
    }
    if (cands.empty()) break;
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return a.saving != b.saving ? a.saving > b.saving : a.node < b.node;
    });
    const Candidate& c = cands[biased_rank(cands.size(), randomness, rng)];
    routes[c.route].visits.erase(routes[c.route].visits.begin() + static_cast<std::ptrdiff_t>(c.pos));
    removed.push_back(c.node);
  }
  return removed;
}

std::vector<NodeId> shaw_removal(const Instance& instance, const Solution& solution, int m,
                                 const AlnsParams& params, Rng& rng) {
  std::vector<NodeId> pool = assigned_customers(solution);
  std::sort(pool.begin(), pool.end());
  if (pool.empty() || m <= 0) return {};
  const double dscale = instance.distance_scale();
  const double tscale = instance.time_scale();
  const bool windows = instance.has_time_windows();
  auto relatedness = [&](NodeId a, NodeId b) {
    const Node& na = instance.node(a);
    const Node& nb = instance.node(b);
    double r = params.shaw_distance_weight * instance.distance(a, b) / dscale +
               params.shaw_demand_weight * std::abs(na.demand - nb.demand) / instance.capacity();
    if (windows) r += params.shaw_time_weight * std::abs(na.tw_start - nb.tw_start) / tscale;
    return r;
  };

  std::uniform_int_distribution<std::size_t> first(0, pool.size() - 1);
  const std::size_t s = first(rng);
  std::vector<NodeId> removed{pool[s]};
  pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(s));
  while (static_cast<int>(removed.size()) < m && !pool.empty()) {
    std::uniform_int_distribution<std::size_t> anchor_pick(0, removed.size() - 1);
    const NodeId anchor = removed[anchor_pick(rng)];
    std::stable_sort(pool.begin(), pool.end(), [&](NodeId a, NodeId b) {
      return relatedness(anchor, a) < relatedness(anchor, b);
    });
    const std::size_t k = biased_rank(pool.size(), params.shaw_randomness, rng);
    removed.push_back(pool[k]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(pool.begin(), pool.end());
  }
  return removed;
}

std::vector<NodeId> alns_propose(const Instance& instance, const Solution& solution, AlnsState& state,
                                 const AlnsParams& params, int m, Rng& rng) {
  const AlnsDestroy op = alns_select(state, rng);
  state.last_selected = static_cast<int>(op);
  std::vector<NodeId> removed;
  switch (op) {
    case AlnsDestroy::Random: removed = random_destroy(instance, solution, m, rng); break;
    case AlnsDestroy::Worst: removed = worst_removal(instance, solution, m, params.worst_randomness, rng); break;
    case AlnsDestroy::Shaw: removed = shaw_removal(instance, solution, m, params, rng); break;
  }
  std::shuffle(removed.begin(), removed.end(), rng);
  return removed;
}

void alns_update(AlnsState& state, const AlnsParams& params, Outcome outcome) {
  if (state.last_selected < 0) return;
  const auto i = static_cast<std::size_t>(state.last_selected);
  state.last_selected = -1;
  ++state.segment_uses[i];
  switch (outcome) {
    case Outcome::NewBest: state.segment_score[i] += params.scores[0]; break;
    case Outcome::AcceptedImproving: state.segment_score[i] += params.scores[1]; break;
    case Outcome::AcceptedWorse: state.segment_score[i] += params.scores[2]; break;
    case Outcome::Rejected: break;
  }
  if (++state.iterations_in_segment < params.segment_length) return;
  for (std::size_t k = 0; k < kAlnsOperators; ++k) {
    if (state.segment_uses[k] == 0) continue;
    const double mean = state.segment_score[k] / state.segment_uses[k];
    state.weights[k] = std::max(1e-9, params.reaction * state.weights[k] + (1.0 - params.reaction) * mean);
  }
  state.segment_score.fill(0.0);
  state.segment_uses.fill(0);
  state.iterations_in_segment = 0;
}

Proposal AlnsOperator::propose(const Instance& instance, const Solution& solution, const ProposalContext& ctx,
                               Rng& rng) {
  return Proposal{alns_propose(instance, solution, state_, params_, ctx.removal_count, rng), {}};
}

std::vector<NodeId> sisr_propose(const Instance& instance, const Solution& solution, const SisrParams& params,
                                 int m, Rng& rng) {
  std::vector<const Route*> routes;
  for (const Route& r : solution.routes) {
    if (!r.empty()) routes.push_back(&r);
  }
  if (routes.empty() || m <= 0) return {};

  std::vector<NodeId> customers = assigned_customers(solution);
  std::uniform_int_distribution<std::size_t> pick(0, customers.size() - 1);
  const NodeId seed = customers[pick(rng)];

  // Each route's closest customer to the seed, and routes ordered by that distance.
  struct Touch {
    double dist;
    std::size_t route;
    std::size_t pos;
  };
  std::vector<Touch> touches;
  for (std::size_t r = 0; r < routes.size(); ++r) {
    Touch t{kInfinity, r, 0};
    for (std::size_t p = 0; p < routes[r]->size(); ++p) {
      const NodeId c = routes[r]->visits[p];
      const double d = c == seed ? -1.0 : instance.distance(seed, c);
      if (d < t.dist) t = Touch{d, r, p};
    }
    touches.push_back(t);
  }
  std::stable_sort(touches.begin(), touches.end(),
                   [](const Touch& a, const Touch& b) { return a.dist < b.dist; });

  const int strings = std::min<int>(std::max(1, params.max_strings), static_cast<int>(touches.size()));
  double remaining = m;
  std::vector<NodeId> removed;
  for (int s = 0; s < strings; ++s) {
    const double target = remaining / (strings - s);
    // Stochastically rounded draw with mean `target`.
    const double x = target >= 1.0 ? std::uniform_real_distribution<double>(1.0, 2.0 * target - 1.0)(rng)
                                   : target;
    int len = static_cast<int>(std::floor(x)) + (uniform01(rng) < x - std::floor(x) ? 1 : 0);
    const Route& route = *routes[touches[static_cast<std::size_t>(s)].route];
    len = std::min({len, params.max_string_length, static_cast<int>(route.size())});
    if (s == 0) len = std::max(len, 1);
    if (len <= 0) continue;
    const int pos = static_cast<int>(touches[static_cast<std::size_t>(s)].pos);
    const int lo = std::max(0, pos - len + 1);
    const int hi = std::min(pos, static_cast<int>(route.size()) - len);
    const int begin = std::uniform_int_distribution<int>(lo, hi)(rng);
    for (int p = begin; p < begin + len; ++p) removed.push_back(route.visits[static_cast<std::size_t>(p)]);
    remaining -= len;
  }

  std::shuffle(removed.begin(), removed.end(), rng);
  std::stable_sort(removed.begin(), removed.end(), [&](NodeId a, NodeId b) {
    return instance.node(a).demand > instance.node(b).demand;
  });
  return removed;
}

Proposal SisrOperator::propose(const Instance& instance, const Solution& solution, const ProposalContext& ctx,
                               Rng& rng) {
  return Proposal{sisr_propose(instance, solution, params_, ctx.removal_count, rng), {}};
}

}  // namespace neulns
