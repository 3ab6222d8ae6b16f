#include "neulns/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace neulns {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

int feature_count(Variant v) { return v == Variant::CVRPTW ? 8 : 5; }

bool PolicyConfig::same_shapes(const PolicyConfig& o) const {
  return node_features() == o.node_features() && embed_dim == o.embed_dim && edge_dim == o.edge_dim &&
         decoder_dim == o.decoder_dim && critic_dim == o.critic_dim && layers == o.layers;
}

namespace {

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void validate(const PolicyConfig& c) {
  if (c.embed_dim < 1 || c.edge_dim < 1 || c.decoder_dim < 1 || c.critic_dim < 1) {
    throw Error("policy dimensions must be positive");
  }
  if (c.layers < 1) throw Error("policy needs at least one attention layer");
  if (!(c.neighbour_fraction > 0.0 && c.neighbour_fraction <= 1.0)) {
    throw Error("neighbour_fraction must lie in (0, 1]");
  }
}

}  // namespace

ParameterStore::ParameterStore(const PolicyConfig& config, std::uint64_t seed) : config_(config) {
  validate(config);
  Rng rng(seed);
  const int d = config.node_features(), e = config.embed_dim, ie = config.edge_dim;
  const int h = config.decoder_dim, c = config.critic_dim;
  add("W_n", d, e, d, rng);
  add("W_edge", 2, ie, 2, rng);
  for (int l = 0; l < config.layers; ++l) add("W_L." + std::to_string(l), 2 * e + ie, e, 2 * e + ie, rng);
  add("gru.W_i", e, 3 * h, e, rng);
  add("gru.W_h", h, 3 * h, h, rng);
  add("gru.b_i", 1, 3 * h, h, rng);
  add("gru.b_h", 1, 3 * h, h, rng);
  add("ptr.W1", e, h, e, rng);
  add("ptr.W2", h, h, h, rng);
  add("ptr.v", h, 1, h, rng);
  add("critic.W1", e, c, e, rng);
  add("critic.b1", 1, c, e, rng);
  add("critic.W2", c, 1, c, rng);
  add("critic.b2", 1, 1, c, rng);
}

ParameterStore ParameterStore::zeros(const PolicyConfig& config) {
  ParameterStore s(config, 0);
  for (auto& p : s.params_) p.value.setZero();
  return s;
}

void ParameterStore::add(const std::string& name, int rows, int cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor v(rows, cols);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    v.data()[k] = static_cast<float>(bound * (2.0 * unit(rng) - 1.0));
  }
  params_.emplace_back(name, std::move(v));
}

ad::Parameter& ParameterStore::get(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw Error("unknown parameter " + name);
}

const ad::Parameter& ParameterStore::get(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

std::vector<ad::Parameter*> ParameterStore::actor() {
  std::vector<ad::Parameter*> out;
  for (auto& p : params_) {
    if (p.name.rfind("critic.", 0) != 0) out.push_back(&p);
  }
  return out;
}

std::vector<ad::Parameter*> ParameterStore::critic() {
  std::vector<ad::Parameter*> out;
  for (auto& p : params_) {
    if (p.name.rfind("critic.", 0) == 0) out.push_back(&p);
  }
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

namespace {

template <typename Store, typename F>
BoundParams bind_with(const Store& params, F&& put) {
  const PolicyConfig& c = params.config();
  BoundParams b;
  b.w_node = put("W_n", false);
  b.w_edge = put("W_edge", false);
  for (int l = 0; l < c.layers; ++l) b.w_layer.push_back(put("W_L." + std::to_string(l), false));
  b.gru_wi = put("gru.W_i", false);
  b.gru_wh = put("gru.W_h", false);
  b.gru_bi = put("gru.b_i", false);
  b.gru_bh = put("gru.b_h", false);
  b.ptr_w1 = put("ptr.W1", false);
  b.ptr_w2 = put("ptr.W2", false);
  b.ptr_v = put("ptr.v", false);
  b.critic_w1 = put("critic.W1", true);
  b.critic_b1 = put("critic.b1", true);
  b.critic_w2 = put("critic.W2", true);
  b.critic_b2 = put("critic.b2", true);
  return b;
}

}  // namespace

BoundParams bind(ad::Tape& tape, ParameterStore& params, bool track_actor, bool track_critic) {
  return bind_with(params, [&](const std::string& name, bool is_critic) {
    return tape.param(params.get(name), is_critic ? track_critic : track_actor);
  });
}

BoundParams bind(ad::Tape& tape, const ParameterStore& params) {
  return bind_with(params, [&](const std::string& name, bool) { return tape.constant(params.get(name).value); });
}

bool PrimitiveEmbeddings::has_arc(int i, int j) const {
  const auto lo = graph.targets.begin() + graph.offsets[static_cast<std::size_t>(i)];
  const auto hi = graph.targets.begin() + graph.offsets[static_cast<std::size_t>(i) + 1];
  return std::binary_search(lo, hi, j);
}

namespace {

struct Links {
  std::vector<NodeId> succ;  // customer -> next node (0 = depot)
  std::vector<NodeId> pred;  // customer -> previous node
  std::vector<char> first;   // customer starts a route
  std::vector<NodeId> depot_neighbours;
};

Links route_links(const Instance& instance, const Solution& solution) {
  const auto n = static_cast<std::size_t>(instance.size());
  Links l{std::vector<NodeId>(n, -1), std::vector<NodeId>(n, -1), std::vector<char>(n, 0), {}};
  for (const Route& r : solution.routes) {
    if (r.empty()) continue;
    for (std::size_t p = 0; p < r.size(); ++p) {
      const NodeId c = r.visits[p];
      if (!instance.is_customer(c)) throw InvalidRoute("route visits invalid node " + std::to_string(c));
      l.pred[static_cast<std::size_t>(c)] = p == 0 ? 0 : r.visits[p - 1];
      l.succ[static_cast<std::size_t>(c)] = p + 1 == r.size() ? 0 : r.visits[p + 1];
    }
    l.first[static_cast<std::size_t>(r.visits.front())] = 1;
    l.depot_neighbours.push_back(r.visits.front());
    l.depot_neighbours.push_back(r.visits.back());
  }
  return l;
}

double finite_or_one(double x) { return std::isfinite(x) ? x : 1.0; }

}  // namespace

ad::Adjacency attention_graph(const Instance& instance, const Solution& solution, const PolicyConfig& config) {
  const int n = instance.size();
  ad::Adjacency adj;
  adj.offsets.reserve(static_cast<std::size_t>(n) + 1);
  adj.offsets.push_back(0);
  if (n <= config.full_graph_max_nodes) {
    adj.targets.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (j != i) adj.targets.push_back(j);
      }
      adj.offsets.push_back(static_cast<int>(adj.targets.size()));
    }
    return adj;
  }

  const Links links = route_links(instance, solution);
  const int keep = std::max(1, static_cast<int>(std::ceil(config.neighbour_fraction * (n - 1) - 1e-9)));
  std::vector<int> others(static_cast<std::size_t>(n - 1));
  std::vector<int> row;
  for (int i = 0; i < n; ++i) {
    std::size_t k = 0;
    for (int j = 0; j < n; ++j) {
      if (j != i) others[k++] = j;
    }
    std::partial_sort(others.begin(), others.begin() + keep, others.end(), [&](int a, int b) {
      const double da = instance.distance(i, a), db = instance.distance(i, b);
      return da < db || (da == db && a < b);
    });
    row.assign(others.begin(), others.begin() + keep);
    if (i != 0) {
      row.push_back(0);
      const NodeId p = links.pred[static_cast<std::size_t>(i)];
      const NodeId s = links.succ[static_cast<std::size_t>(i)];
      if (p >= 0) row.push_back(p);
      if (s >= 0) row.push_back(s);
    } else {
      row.insert(row.end(), links.depot_neighbours.begin(), links.depot_neighbours.end());
    }
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    adj.targets.insert(adj.targets.end(), row.begin(), row.end());
    adj.offsets.push_back(static_cast<int>(adj.targets.size()));
  }
  return adj;
}

PrimitiveEmbeddings primitive_embed(const Instance& instance, const Solution& solution,
                                    const PolicyConfig& config) {
  if (!solution.complete()) throw IncompleteSolution("cannot embed a solution with unassigned customers");
  const int n = instance.size();
  const bool tw = config.variant == Variant::CVRPTW;
  const double dist_scale = instance.distance_scale();
  const double time_scale = instance.time_scale();
  const double q_scale = instance.capacity();

  PrimitiveEmbeddings out;
  out.nodes = Tensor::Zero(n, config.node_features());
  if (tw) {
    out.nodes(0, 0) = instance.depot().tw_start / time_scale;
    out.nodes(0, 1) = finite_or_one(instance.depot().tw_end / time_scale);
  }
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (const Route& r : solution.routes) {
    if (r.empty()) continue;
    const RouteSchedule s = schedule_route(instance, r);
    for (std::size_t p = 0; p < r.size(); ++p) {
      const NodeId c = r.visits[p];
      if (seen[static_cast<std::size_t>(c)]++) throw InvalidRoute("customer " + std::to_string(c) + " visited twice");
      const Node& node = instance.node(c);
      std::vector<double> f;
      if (tw) {
        f.push_back(node.tw_start / time_scale);
        f.push_back(finite_or_one(node.tw_end / time_scale));
      }
      f.push_back(node.demand / q_scale);
      f.push_back(s.route_load / q_scale);
      f.push_back(s.cumulative_load[p] / q_scale);
      f.push_back(s.cumulative_distance[p] / dist_scale);
      f.push_back(s.cumulative_time[p] / time_scale);
      if (tw) f.push_back(finite_or_one(s.forward_slack[p] / time_scale));
      for (std::size_t k = 0; k < f.size(); ++k) out.nodes(c, static_cast<Eigen::Index>(k)) = f[k];
    }
  }
  for (int c = 1; c < n; ++c) {
    if (!seen[static_cast<std::size_t>(c)]) throw IncompleteSolution("customer " + std::to_string(c) + " is not routed");
  }

  out.graph = attention_graph(instance, solution, config);
  const Links links = route_links(instance, solution);
  out.edges.resize(out.graph.arcs(), 2);
  for (int i = 0; i < n; ++i) {
    for (int k = out.graph.offsets[static_cast<std::size_t>(i)]; k < out.graph.offsets[static_cast<std::size_t>(i) + 1]; ++k) {
      const int j = out.graph.targets[static_cast<std::size_t>(k)];
      const bool used = i == 0 ? links.first[static_cast<std::size_t>(j)] != 0
                               : links.succ[static_cast<std::size_t>(i)] == j;
      out.edges(k, 0) = instance.distance(i, j) / dist_scale;
      out.edges(k, 1) = used ? 1.0 : 0.0;
    }
  }
  return out;
}

Var egate_forward(Var x, Var edge_ext, const ad::Adjacency& graph, Var w_layer, double slope) {
  const Eigen::Index e = x.cols();
  const Eigen::Index ie = edge_ext.cols();
  if (w_layer.rows() != 2 * e + ie || w_layer.cols() != e) throw Error("egate: layer weight has the wrong shape");
  const Var p = ad::matmul(x, ad::slice_rows(w_layer, 0, e));
  const Var q = ad::matmul(x, ad::slice_rows(w_layer, e, e));
  const Var a = ad::matmul(edge_ext, ad::slice_rows(w_layer, 2 * e, ie));
  return ad::egate_attend(p, q, a, x, graph, slope);
}

EncoderOutput encode(ad::Tape& tape, const PrimitiveEmbeddings& primitive, const BoundParams& params,
                     const PolicyConfig& config) {
  if (config.layers < 1 || static_cast<int>(params.w_layer.size()) < config.layers) {
    throw Error("encoder needs at least one attention layer");
  }
  Var x = ad::matmul(tape.constant(primitive.nodes), params.w_node);
  const Var edges = ad::matmul(tape.constant(primitive.edges), params.w_edge);
  for (int l = 0; l < config.layers; ++l) {
    x = egate_forward(x, edges, primitive.graph, params.w_layer[static_cast<std::size_t>(l)], config.leaky_slope);
  }
  return EncoderOutput{x, ad::mean_rows(x)};
}

DecodeResult decode(const EncoderOutput& enc, int m, DecodeMode mode, Rng& rng, const BoundParams& params,
                    const std::vector<NodeId>* forced) {
  ad::Tape& tape = *enc.nodes.tape();
  const Eigen::Index n = enc.nodes.rows();
  const int available = static_cast<int>(n) - 1;
  if (m < 1 || m > available) {
    throw InvalidM("cannot select " + std::to_string(m) + " of " + std::to_string(available) + " customers");
  }
  if (forced && static_cast<int>(forced->size()) != m) throw InvalidM("forced sequence length differs from M");

  const Eigen::Index hd = params.gru_wh.rows();
  const Var keys = ad::matmul(enc.nodes, params.ptr_w1);
  Var h = tape.constant(Tensor::Zero(1, hd));
  Var input = enc.pooled;
  std::vector<char> allowed(static_cast<std::size_t>(n), 1);
  allowed[0] = 0;

  DecodeResult out;
  for (int step = 0; step < m; ++step) {
    const Var gi = ad::add(ad::matmul(input, params.gru_wi), params.gru_bi);
    const Var gh = ad::add(ad::matmul(h, params.gru_wh), params.gru_bh);
    const Var r = ad::sigmoid(ad::add(ad::slice_cols(gi, 0, hd), ad::slice_cols(gh, 0, hd)));
    const Var z = ad::sigmoid(ad::add(ad::slice_cols(gi, hd, hd), ad::slice_cols(gh, hd, hd)));
    const Var cand = ad::tanh(ad::add(ad::slice_cols(gi, 2 * hd, hd), ad::mul(r, ad::slice_cols(gh, 2 * hd, hd))));
    h = ad::add(ad::mul(ad::add_scalar(ad::scale(z, -1.0), 1.0), cand), ad::mul(z, h));

    const Var scores = ad::matmul(ad::tanh(ad::add_row(keys, ad::matmul(h, params.ptr_w2))), params.ptr_v);

    Eigen::Index pick = -1;
    if (forced) {
      pick = (*forced)[static_cast<std::size_t>(step)];
      if (pick <= 0 || pick >= n || !allowed[static_cast<std::size_t>(pick)]) {
        throw InvalidDestroySet("forced sequence repeats or leaves the customer range");
      }
    } else if (mode == DecodeMode::Greedy) {
      const Tensor& s = scores.value();
      for (Eigen::Index j = 1; j < n; ++j) {
        if (allowed[static_cast<std::size_t>(j)] && (pick < 0 || s(j, 0) > s(pick, 0))) pick = j;
      }
    } else {
      const std::vector<double> prob = ad::masked_softmax(scores.value(), allowed);
      const double u = open_unit(rng);
      double acc = 0.0;
      for (Eigen::Index j = 1; j < n; ++j) {
        if (!allowed[static_cast<std::size_t>(j)]) continue;
        pick = j;
        acc += prob[static_cast<std::size_t>(j)];
        if (u < acc) break;
      }
    }

    const Var lp = ad::log_softmax_pick(scores, allowed, pick);
    out.nodes.push_back(static_cast<NodeId>(pick));
    out.step_log_probs.push_back(lp.scalar());
    out.total_log_prob += lp.scalar();
    out.log_prob = step == 0 ? lp : ad::add(out.log_prob, lp);
    allowed[static_cast<std::size_t>(pick)] = 0;
    input = ad::row(enc.nodes, pick);
  }
  return out;
}

Var critic_value(Var pooled, const BoundParams& params) {
  const Var hidden = ad::relu(ad::add(ad::matmul(pooled, params.critic_w1), params.critic_b1));
  return ad::add(ad::matmul(hidden, params.critic_w2), params.critic_b2);
}

NeuralProposal neural_propose(const Instance& instance, const Solution& solution, const ParameterStore& params,
                              int m, DecodeMode mode, Rng& rng) {
  ad::Tape tape;
  const BoundParams bound = bind(tape, params);
  const PrimitiveEmbeddings prim = primitive_embed(instance, solution, params.config());
  const EncoderOutput enc = encode(tape, prim, bound, params.config());
  DecodeResult dec = decode(enc, m, mode, rng, bound);
  NeuralProposal out;
  out.proposal = Proposal{std::move(dec.nodes), std::move(dec.step_log_probs)};
  out.pooled = enc.pooled.value();
  out.value = critic_value(enc.pooled, bound).scalar();
  return out;
}

Proposal NeuralOperator::propose(const Instance& instance, const Solution& solution, const ProposalContext& ctx,
                                 Rng& rng) {
  return neural_propose(instance, solution, *params_, ctx.removal_count, ctx.mode, rng).proposal;
}

namespace {

constexpr char kMagic[8] = {'N', 'E', 'U', 'L', 'N', 'S', 'C', 'K'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

json config_to_json(const PolicyConfig& c) {
  return json{{"variant", to_string(c.variant)},
              {"node_features", c.node_features()},
              {"embed_dim", c.embed_dim},
              {"edge_dim", c.edge_dim},
              {"decoder_dim", c.decoder_dim},
              {"critic_dim", c.critic_dim},
              {"layers", c.layers},
              {"leaky_slope", c.leaky_slope},
              {"full_graph_max_nodes", c.full_graph_max_nodes},
              {"neighbour_fraction", c.neighbour_fraction}};
}

PolicyConfig config_from_json(const json& j) {
  PolicyConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.embed_dim = j.at("embed_dim").get<int>();
  c.edge_dim = j.at("edge_dim").get<int>();
  c.decoder_dim = j.at("decoder_dim").get<int>();
  c.critic_dim = j.at("critic_dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.full_graph_max_nodes = j.at("full_graph_max_nodes").get<int>();
  c.neighbour_fraction = j.at("neighbour_fraction").get<double>();
  return c;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    const auto bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(t.data()[k])));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
}

void read_tensor(std::istream& in, Tensor& t) {
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    std::uint32_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    t.data()[k] = static_cast<double>(std::bit_cast<float>(to_little(bits)));
  }
}

std::string shape_text(Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  json tensors = json::array();
  for (const auto& p : data.params.all()) {
    tensors.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"group", "param"}});
  }
  for (const auto& [name, t] : data.extra) {
    tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"group", "extra"}});
  }
  const json manifest{{"format", "neulns-checkpoint"},
                      {"version", 1},
                      {"dtype", "float32"},
                      {"byte_order", "little"},
                      {"config", config_to_json(data.params.config())},
                      {"epoch", data.epoch},
                      {"step", data.step},
                      {"state", json::parse(data.state_json)},
                      {"tensors", tensors}};
  const std::string text = manifest.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const auto len = to_little(static_cast<std::uint64_t>(text.size()));
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : data.params.all()) write_tensor(out, p.value);
    for (const auto& [name, t] : data.extra) write_tensor(out, t);
    if (!out) throw Error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path, const PolicyConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw SchemaError(path.string() + " is not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  len = to_little(len);
  if (!in || len > (std::uint64_t{1} << 30)) throw SchemaError("corrupt checkpoint header in " + path.string());
  std::string text(static_cast<std::size_t>(len), '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));

  json manifest;
  PolicyConfig config;
  try {
    manifest = json::parse(text);
    config = config_from_json(manifest.at("config"));
  } catch (const json::exception& e) {
    throw SchemaError("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (expected && !expected->same_shapes(config)) {
    throw CheckpointMismatch("checkpoint " + path.string() + " has " + std::to_string(config.node_features()) +
                             " node features, width " + std::to_string(config.embed_dim) + ", " +
                             std::to_string(config.layers) + " layers; expected " +
                             std::to_string(expected->node_features()) + ", " +
                             std::to_string(expected->embed_dim) + ", " + std::to_string(expected->layers));
  }

  CheckpointData data;
  data.params = ParameterStore::zeros(config);
  data.epoch = manifest.value("epoch", 0);
  data.step = manifest.value("step", std::int64_t{0});
  data.state_json = manifest.contains("state") ? manifest["state"].dump() : "{}";

  std::size_t next_param = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    if (entry.at("group").get<std::string>() == "param") {
      if (next_param >= data.params.all().size()) throw CheckpointMismatch("unexpected tensor " + name);
      ad::Parameter& p = data.params.all()[next_param++];
      if (p.name != name || p.value.rows() != rows || p.value.cols() != cols) {
        throw CheckpointMismatch("tensor " + name + " " + shape_text(rows, cols) + " does not match " + p.name +
                                 " " + shape_text(p.value.rows(), p.value.cols()));
      }
      read_tensor(in, p.value);
    } else {
      Tensor t(rows, cols);
      read_tensor(in, t);
      data.extra.emplace_back(name, std::move(t));
    }
  }
  if (next_param != data.params.all().size()) throw CheckpointMismatch("checkpoint is missing parameters");
  if (!in) throw SchemaError("checkpoint " + path.string() + " is truncated");
  return data;
}

}  // namespace neulns
