#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "neulns/policy.hpp"
#include "support.hpp"

using namespace neulns;
using namespace neulns::testing;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t(r, c);
  for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = u(rng);
  return t;
}

PolicyConfig tiny_config(Variant v) {
  PolicyConfig c;
  c.variant = v;
  c.embed_dim = 6;
  c.edge_dim = 3;
  c.decoder_dim = 5;
  c.critic_dim = 4;
  return c;
}

ad::Adjacency complete_graph(int n) {
  ad::Adjacency a;
  a.offsets.push_back(0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j != i) a.targets.push_back(j);
    }
    a.offsets.push_back(static_cast<int>(a.targets.size()));
  }
  return a;
}

// Random graph where every node keeps at least one arc.
ad::Adjacency random_graph(int n, Rng& rng) {
  ad::Adjacency a;
  a.offsets.push_back(0);
  std::bernoulli_distribution keep(0.5);
  for (int i = 0; i < n; ++i) {
    const std::size_t before = a.targets.size();
    for (int j = 0; j < n; ++j) {
      if (j != i && keep(rng)) a.targets.push_back(j);
    }
    if (a.targets.size() == before) a.targets.push_back((i + 1) % n);
    a.offsets.push_back(static_cast<int>(a.targets.size()));
  }
  return a;
}

Solution initial(const Instance& inst, std::uint64_t seed) {
  Rng rng(seed);
  return build_initial_solution(inst, rng);
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "neulns_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("derivative of a square") {
  ad::Tape tape;
  const Var x = tape.leaf(Tensor::Constant(1, 1, 3.0));
  tape.backward(ad::square(x));
  CHECK(x.grad()(0, 0) == 6.0);
}

TEST_CASE("backward without a differentiable input") {
  ad::Tape tape;
  const Var c = tape.constant(Tensor::Constant(1, 1, 2.0));
  CHECK_THROWS_AS(tape.backward(ad::square(c)), NoGradPath);
}

TEST_CASE("every primitive op matches finite differences") {
  Rng rng(11);
  ad::Parameter a("a", random_tensor(3, 4, rng));
  ad::Parameter b("b", random_tensor(4, 2, rng));
  ad::Parameter r("r", random_tensor(1, 4, rng));
  ad::Parameter s("s", random_tensor(3, 4, rng));
  std::vector<ad::Parameter*> all{&a, &b, &r, &s};
  const double err = ad::grad_check(all, [&](ad::Tape& t) {
    const Var va = t.param(a), vb = t.param(b), vr = t.param(r), vs = t.param(s);
    Var x = ad::add_row(va, vr);
    x = ad::add(ad::mul(ad::tanh(x), ad::sigmoid(vs)), ad::scale(ad::leaky_relu(ad::sub(x, vs), 0.01), 0.5));
    x = ad::add(x, ad::exp(ad::scale(ad::relu(vs), 0.3)));
    Var y = ad::matmul(x, vb);
    y = ad::add_scalar(ad::square(y), 1.0);
    const Var pooled = ad::mean_rows(ad::slice_cols(x, 1, 3));
    const Var picked = ad::row(ad::slice_rows(y, 1, 2), 1);
    return ad::add(ad::mean(y), ad::add(ad::sum(pooled), ad::sum(picked)));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("log_softmax_pick and ppo_clip match finite differences") {
  Rng rng(12);
  ad::Parameter s("s", random_tensor(6, 1, rng, 2.0));
  std::vector<ad::Parameter*> all{&s};
  const std::vector<char> allowed{0, 1, 1, 0, 1, 1};
  CHECK(ad::grad_check(all, [&](ad::Tape& t) { return ad::log_softmax_pick(t.param(s), allowed, 4); }) < 1e-7);
  // rho = exp(logp - old) stays inside the clip range for these values
  CHECK(ad::grad_check(all, [&](ad::Tape& t) {
          return ad::ppo_clip(ad::log_softmax_pick(t.param(s), allowed, 2), -1.2, 0.7, 0.2);
        }) < 1e-6);
}

TEST_CASE("clipped surrogate branches") {
  // value and slope with respect to the new log-probability
  auto objective = [](double rho, double adv) {
    ad::Tape tape;
    const Var lp = tape.leaf(Tensor::Constant(1, 1, std::log(rho)));
    const Var out = ad::ppo_clip(lp, 0.0, adv, 0.2);
    tape.backward(out);
    return std::make_pair(out.scalar(), lp.grad()(0, 0));
  };
  CHECK(objective(1.0, 3.0).first == doctest::Approx(3.0));
  CHECK(objective(1.0, 3.0).second == doctest::Approx(3.0));
  // clipped from above while improving: no gradient
  CHECK(objective(2.0, 3.0).first == doctest::Approx(1.2 * 3.0));
  CHECK(objective(2.0, 3.0).second == 0.0);
  // min(0.5 * -3, 0.8 * -3): the clipped term is the smaller one
  CHECK(objective(0.5, -3.0).first == doctest::Approx(0.8 * -3.0));
  CHECK(objective(0.5, -3.0).second == 0.0);
  CHECK(objective(2.0, -3.0).first == doctest::Approx(2.0 * -3.0));
  CHECK(objective(2.0, -3.0).second == doctest::Approx(2.0 * -3.0));
  CHECK(objective(0.5, 3.0).first == doctest::Approx(0.5 * 3.0));
}

TEST_CASE("attention with zero layer weights averages the neighbours") {
  Rng rng(3);
  const int n = 7, e = 5, ie = 3;
  const ad::Adjacency g = random_graph(n, rng);
  ad::Tape tape;
  const Var x = tape.constant(random_tensor(n, e, rng));
  const Var edges = tape.constant(random_tensor(g.arcs(), ie, rng));
  const Var w = tape.constant(Tensor::Zero(2 * e + ie, e));
  const Tensor out = egate_forward(x, edges, g, w, 0.01).value();
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd expect = x.value().row(i);
    const int lo = g.offsets[static_cast<std::size_t>(i)], hi = g.offsets[static_cast<std::size_t>(i) + 1];
    for (int k = lo; k < hi; ++k) expect += x.value().row(g.targets[static_cast<std::size_t>(k)]) / (hi - lo);
    CHECK((out.row(i) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("attention weights are normalised per coordinate") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + trial % 9;
    const ad::Adjacency g = random_graph(n, rng);
    const Tensor w = ad::egate_weights(random_tensor(n, 4, rng, 3.0), random_tensor(n, 4, rng, 3.0),
                                       random_tensor(g.arcs(), 4, rng, 3.0), g, 0.01);
    for (int i = 0; i < n; ++i) {
      const int lo = g.offsets[static_cast<std::size_t>(i)], hi = g.offsets[static_cast<std::size_t>(i) + 1];
      for (int d = 0; d < 4; ++d) {
        double total = 0.0;
        for (int k = lo; k < hi; ++k) total += w(k, d);
        CHECK(std::abs(total - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("masked arcs have no influence") {
  Rng rng(5);
  const int e = 4, ie = 2;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + trial % 6;
    const ad::Adjacency g = random_graph(n, rng);
    const Tensor xv = random_tensor(n, e, rng);
    const Tensor ev = random_tensor(g.arcs(), ie, rng);
    const Tensor wv = random_tensor(2 * e + ie, e, rng);
    auto run = [&](const Tensor& x) {
      ad::Tape t;
      return egate_forward(t.constant(x), t.constant(ev), g, t.constant(wv), 0.01).value();
    };
    const Tensor base = run(xv);
    const int i = trial % n;
    const int lo = g.offsets[static_cast<std::size_t>(i)], hi = g.offsets[static_cast<std::size_t>(i) + 1];
    const std::set<int> nbrs(g.targets.begin() + lo, g.targets.begin() + hi);
    for (int j = 0; j < n; ++j) {
      if (j == i || nbrs.count(j)) continue;
      Tensor moved = xv;
      moved.row(j) += random_tensor(1, e, rng, 5.0);
      CHECK(run(moved).row(i) == base.row(i));
    }
  }
}

TEST_CASE("a node without arcs is rejected") {
  ad::Adjacency g{{0, 1, 1}, {1}};
  ad::Tape t;
  const Var x = t.constant(Tensor::Ones(2, 2));
  CHECK_THROWS_AS(egate_forward(x, t.constant(Tensor::Ones(1, 1)), g, t.constant(Tensor::Ones(5, 2)), 0.01),
                  IsolatedNode);
}

TEST_CASE("primitive embeddings") {
  const Instance inst = small_instance(30, 2, Variant::CVRPTW);
  const Solution sol = initial(inst, 2);
  const PolicyConfig cfg;
  const PrimitiveEmbeddings p = primitive_embed(inst, sol, cfg);
  CHECK(p.nodes.rows() == 31);
  CHECK(p.nodes.cols() == 8);
  CHECK(p.graph.arcs() == 31 * 30);
  // directed arcs used by the routes, counted from the routes themselves
  int used = 0;
  for (Eigen::Index k = 0; k < p.edges.rows(); ++k) used += p.edges(k, 1) == 1.0;
  CHECK(used == 30 + static_cast<int>(sol.routes.size()));
  for (const Route& r : sol.routes) {
    CHECK(p.edges(p.graph.offsets[0] + r.visits.front() - 1, 1) == 1.0);
  }
  for (int c = 1; c <= 30; ++c) CHECK(p.nodes(c, 2) == inst.node(c).demand / 100.0);
  CHECK(p.nodes.cwiseAbs().maxCoeff() <= 4.0);

  const Instance cvrp = small_instance(10, 3, Variant::CVRP);
  PolicyConfig c5;
  c5.variant = Variant::CVRP;
  CHECK(primitive_embed(cvrp, initial(cvrp, 3), c5).nodes.cols() == 5);

  Solution partial = sol;
  partial = remove_nodes(inst, partial, std::vector<NodeId>{3});
  CHECK_THROWS_AS(primitive_embed(inst, partial, cfg), IncompleteSolution);
}

TEST_CASE("demand feature of a q = 9 customer") {
  std::vector<Node> nodes{customer(0, 0, 0, 0), customer(1, 3, 4, 9)};
  const Instance inst = Instance::euclidean("q9", nodes, 100);
  PolicyConfig cfg;
  cfg.variant = Variant::CVRP;
  const PrimitiveEmbeddings p = primitive_embed(inst, Solution{{Route{{1}}}, {}}, cfg);
  CHECK(p.nodes(1, 0) == doctest::Approx(0.09));
}

TEST_CASE("large instances keep the nearest tenth plus route links") {
  const Instance inst = small_instance(399, 4, Variant::CVRPTW);
  const Solution sol = initial(inst, 4);
  const PolicyConfig cfg;
  const ad::Adjacency g = attention_graph(inst, sol, cfg);
  const int n = inst.size();
  std::vector<std::set<int>> links(static_cast<std::size_t>(n));
  for (const Route& r : sol.routes) {
    std::vector<int> full{0};
    full.insert(full.end(), r.visits.begin(), r.visits.end());
    full.push_back(0);
    for (std::size_t k = 1; k < full.size(); ++k) {
      links[static_cast<std::size_t>(full[k - 1])].insert(full[k]);
      links[static_cast<std::size_t>(full[k])].insert(full[k - 1]);
    }
  }
  for (int i = 0; i < n; ++i) {
    std::vector<int> order;
    for (int j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return inst.distance(i, a) < inst.distance(i, b); });
    std::set<int> expect(order.begin(), order.begin() + 40);
    if (i != 0) expect.insert(0);
    expect.insert(links[static_cast<std::size_t>(i)].begin(), links[static_cast<std::size_t>(i)].end());
    expect.erase(i);
    const std::set<int> got(g.targets.begin() + g.offsets[static_cast<std::size_t>(i)],
                            g.targets.begin() + g.offsets[static_cast<std::size_t>(i) + 1]);
    CHECK(got == expect);
  }
}

TEST_CASE("encoder shapes") {
  const Instance inst = small_instance(20, 5, Variant::CVRPTW);
  const ParameterStore params(PolicyConfig{}, 1);
  CHECK(params.get("W_L.0").value.rows() == 2 * 64 + 16);
  CHECK(params.get("W_L.1").value.cols() == 64);
  CHECK(params.get("W_edge").value.cols() == 16);
  CHECK(params.get("critic.W1").value.cols() == 64);
  ad::Tape tape;
  const BoundParams b = bind(tape, params);
  const EncoderOutput enc = encode(tape, primitive_embed(inst, initial(inst, 5), params.config()), b, params.config());
  CHECK(enc.nodes.rows() == 21);
  CHECK(enc.nodes.cols() == 64);
  CHECK(enc.pooled.rows() == 1);
  CHECK(enc.pooled.cols() == 64);
  Eigen::RowVectorXd mean = enc.nodes.value().colwise().sum() / 21.0;
  CHECK((mean - enc.pooled.value().row(0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("encoder is equivariant to customer relabelling") {
  Rng rng(6);
  const ParameterStore params(PolicyConfig{}, 6);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance inst = small_instance(15, 60 + static_cast<std::uint64_t>(trial), Variant::CVRPTW);
    const Solution sol = initial(inst, 60);
    std::vector<int> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin() + 1, perm.end(), rng);
    std::vector<Node> nodes(16);
    for (int i = 0; i < 16; ++i) {
      nodes[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = inst.node(i);
      nodes[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].id = perm[static_cast<std::size_t>(i)];
    }
    Instance moved = Instance::euclidean("p", nodes, inst.capacity());
    moved.set_map_size(inst.map_size());
    Solution msol = sol;
    for (Route& r : msol.routes) {
      for (NodeId& c : r.visits) c = perm[static_cast<std::size_t>(c)];
    }
    ad::Tape t1, t2;
    const EncoderOutput a = encode(t1, primitive_embed(inst, sol, params.config()), bind(t1, params), params.config());
    const EncoderOutput b =
        encode(t2, primitive_embed(moved, msol, params.config()), bind(t2, params), params.config());
    for (int i = 0; i < 16; ++i) {
      CHECK((a.nodes.value().row(i) - b.nodes.value().row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
            1e-5);
    }
    CHECK((a.pooled.value() - b.pooled.value()).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("decoder") {
  const Instance inst = small_instance(12, 7, Variant::CVRP);
  PolicyConfig cfg;
  cfg.variant = Variant::CVRP;
  const Solution sol = initial(inst, 7);

  SUBCASE("equal scores pick the lowest id greedily") {
    ParameterStore params(cfg, 7);
    params.get("ptr.v").value.setZero();
    Rng rng(1);
    const auto p = neural_propose(inst, sol, params, 3, DecodeMode::Greedy, rng);
    CHECK(p.proposal.nodes == std::vector<NodeId>{1, 2, 3});
  }
  SUBCASE("zeroed pointer samples uniformly") {
    ParameterStore params(cfg, 7);
    params.get("ptr.W1").value.setZero();
    params.get("ptr.W2").value.setZero();
    params.get("ptr.v").value.setZero();
    Rng rng(2);
    std::vector<int> hits(13, 0);
    const int n = 12000;
    for (int i = 0; i < n; ++i) ++hits[static_cast<std::size_t>(neural_propose(inst, sol, params, 1, DecodeMode::Sample, rng).proposal.nodes[0])];
    const double p = 1.0 / 12, sigma = std::sqrt(p * (1 - p) / n);
    CHECK(hits[0] == 0);
    for (int c = 1; c <= 12; ++c) CHECK(std::abs(hits[static_cast<std::size_t>(c)] / double(n) - p) <= 3 * sigma);
  }
  SUBCASE("sampled sequences") {
    const ParameterStore params(cfg, 8);
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      ad::Tape tape;
      const BoundParams b = bind(tape, params);
      const EncoderOutput enc = encode(tape, primitive_embed(inst, sol, cfg), b, cfg);
      const DecodeResult d = decode(enc, 5, DecodeMode::Sample, rng, b);
      CHECK(std::set<NodeId>(d.nodes.begin(), d.nodes.end()).size() == 5);
      double total = 0.0;
      for (double lp : d.step_log_probs) {
        CHECK(lp <= 0.0);
        total += lp;
      }
      CHECK(d.total_log_prob == total);
      CHECK(d.log_prob.scalar() == total);
    }
  }
  SUBCASE("step probabilities sum to one over the remaining customers") {
    const ParameterStore params(cfg, 9);
    Rng rng(4);
    ad::Tape tape;
    const BoundParams b = bind(tape, params);
    const EncoderOutput enc = encode(tape, primitive_embed(inst, sol, cfg), b, cfg);
    const DecodeResult d = decode(enc, 4, DecodeMode::Sample, rng, b);
    // rescore each step against every possible choice
    for (std::size_t step = 0; step < d.nodes.size(); ++step) {
      double total = 0.0;
      std::set<NodeId> used(d.nodes.begin(), d.nodes.begin() + static_cast<std::ptrdiff_t>(step));
      for (NodeId c = 1; c <= 12; ++c) {
        if (used.count(c)) continue;
        std::vector<NodeId> seq(d.nodes.begin(), d.nodes.begin() + static_cast<std::ptrdiff_t>(step));
        seq.push_back(c);
        ad::Tape t2;
        const BoundParams b2 = bind(t2, params);
        const EncoderOutput e2 = encode(t2, primitive_embed(inst, sol, cfg), b2, cfg);
        total += std::exp(decode(e2, static_cast<int>(seq.size()), DecodeMode::Greedy, rng, b2, &seq).step_log_probs.back());
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("M outside the customer range") {
    const ParameterStore params(cfg, 9);
    Rng rng(5);
    CHECK_THROWS_AS(neural_propose(inst, sol, params, 13, DecodeMode::Sample, rng), InvalidM);
    CHECK_THROWS_AS(neural_propose(inst, sol, params, 0, DecodeMode::Sample, rng), InvalidM);
  }
  SUBCASE("greedy decoding is deterministic") {
    const ParameterStore params(cfg, 10);
    Rng a(1), b(2);
    CHECK(neural_propose(inst, sol, params, 4, DecodeMode::Greedy, a).proposal.nodes ==
          neural_propose(inst, sol, params, 4, DecodeMode::Greedy, b).proposal.nodes);
    CHECK(a == Rng(1));
  }
}

TEST_CASE("critic head") {
  PolicyConfig cfg;
  ParameterStore zero = ParameterStore::zeros(cfg);
  ad::Tape tape;
  const BoundParams b = bind(tape, zero);
  CHECK(critic_value(tape.constant(Tensor::Ones(1, 64)), b).scalar() == 0.0);
  CHECK(zero.get("critic.W1").value.cols() == 64);

  const ParameterStore params(cfg, 3);
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    ad::Tape t;
    const BoundParams bb = bind(t, params);
    CHECK(std::isfinite(critic_value(t.constant(random_tensor(1, 64, rng, 10.0)), bb).scalar()));
  }
}

TEST_CASE("pipeline gradients match finite differences") {
  for (int point = 0; point < 3; ++point) {
    const Variant v = point % 2 ? Variant::CVRP : Variant::CVRPTW;
    const Instance inst = small_instance(6, 100 + static_cast<std::uint64_t>(point), v);
    const Solution sol = initial(inst, 100);
    ParameterStore params(tiny_config(v), 200 + static_cast<std::uint64_t>(point));
    const PrimitiveEmbeddings prim = primitive_embed(inst, sol, params.config());
    Rng rng(static_cast<std::uint64_t>(point));
    std::vector<NodeId> actions;
    {
      ad::Tape t;
      const BoundParams b = bind(t, params);
      actions = decode(encode(t, prim, b, params.config()), 3, DecodeMode::Sample, rng, b).nodes;
    }
    auto actor = params.actor();
    const double err = ad::grad_check(actor, [&](ad::Tape& t) {
      const BoundParams b = bind(t, params, true, false);
      return decode(encode(t, prim, b, params.config()), 3, DecodeMode::Greedy, rng, b, &actions).log_prob;
    });
    CHECK(err < 1e-3);

    auto critic = params.critic();
    const Tensor pooled = [&] {
      ad::Tape t;
      return encode(t, prim, bind(t, params), params.config()).pooled.value();
    }();
    const double cerr = ad::grad_check(critic, [&](ad::Tape& t) {
      const BoundParams b = bind(t, params, false, true);
      return ad::square(ad::add_scalar(critic_value(t.constant(pooled), b), -0.7));
    });
    CHECK(cerr < 1e-5);
  }
}

TEST_CASE("checkpoint round trip") {
  PolicyConfig cfg;
  cfg.layers = 3;
  CheckpointData data;
  data.params = ParameterStore(cfg, 42);
  data.epoch = 7;
  data.step = 99;
  data.state_json = R"({"note":"x"})";
  data.extra.emplace_back("adam.m.W_n", Tensor::Constant(2, 3, 0.25));
  const auto path = temp_path("ckpt.bin");
  save_checkpoint(path, data);

  const CheckpointData back = load_checkpoint(path, &cfg);
  CHECK(back.params.config().layers == 3);
  CHECK(back.epoch == 7);
  CHECK(back.step == 99);
  CHECK(back.state_json == data.state_json);
  REQUIRE(back.params.all().size() == data.params.all().size());
  for (std::size_t k = 0; k < back.params.all().size(); ++k) {
    const Tensor& x = data.params.all()[k].value;
    const Tensor& y = back.params.all()[k].value;
    CHECK(x.size() == y.size());
    CHECK(std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0);
  }
  REQUIRE(back.extra.size() == 1);
  CHECK(back.extra[0].second(1, 2) == 0.25);

  PolicyConfig cvrp = cfg;
  cvrp.variant = Variant::CVRP;
  CheckpointData small;
  small.params = ParameterStore(cvrp, 1);
  save_checkpoint(path, small);
  PolicyConfig tw;
  CHECK_THROWS_AS(load_checkpoint(path, &tw), CheckpointMismatch);
}

TEST_CASE("neural operator honours the operator contract") {
  Rng pick(77);
  PolicyConfig cfg = tiny_config(Variant::CVRPTW);
  for (int draw = 0; draw < 10000; ++draw) {
    const std::uint64_t seed = pick();
    const Variant v = draw % 2 ? Variant::CVRP : Variant::CVRPTW;
    cfg.variant = v;
    const Instance inst = small_instance(2 + draw % 9, seed % 500, v);
    const Solution sol = initial(inst, seed);
    NeuralOperator op(std::make_shared<const ParameterStore>(cfg, seed));
    Rng rng(seed);
    const int m = 1 + static_cast<int>(seed % static_cast<std::uint64_t>(inst.num_customers()));
    const Proposal p = op.propose(inst, sol, ProposalContext{m, draw % 3 ? DecodeMode::Sample : DecodeMode::Greedy}, rng);
    CHECK(static_cast<int>(p.nodes.size()) == m);
    CHECK(p.log_probs.size() == p.nodes.size());
    CHECK_NOTHROW(validate_proposal(inst, sol, p));
  }
}
