// Learned destroy/repair operator: graph attention encoder over the current
// solution, recurrent pointer decoder choosing the ordered removal list, and
// a small value head used during training.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "neulns/autodiff.hpp"
#include "neulns/instance_io.hpp"
#include "neulns/lns.hpp"
#include "neulns/vrp.hpp"

namespace neulns {

NEULNS_DEFINE_ERROR(InvalidM);
NEULNS_DEFINE_ERROR(CheckpointMismatch);

// Node feature width: 8 with time windows, 5 without.
int feature_count(Variant v);

struct PolicyConfig {
  Variant variant = Variant::CVRPTW;
  int embed_dim = 64;     // node embedding width
  int edge_dim = 16;      // extended edge embedding width
  int decoder_dim = 64;   // GRU hidden width
  int critic_dim = 64;    // value head hidden width
  int layers = 2;         // stacked attention layers
  double leaky_slope = 0.01;
  // Instances up to this many nodes use the complete graph; larger ones keep
  // only the nearest `neighbour_fraction` of nodes plus route neighbours and
  // the depot.
  int full_graph_max_nodes = 100;
  double neighbour_fraction = 0.10;

  int node_features() const { return feature_count(variant); }
  bool same_shapes(const PolicyConfig& o) const;
};

class ParameterStore {
 public:
  ParameterStore() = default;
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, values rounded
  // to float so a checkpoint stores them exactly.
  ParameterStore(const PolicyConfig& config, std::uint64_t seed);
  static ParameterStore zeros(const PolicyConfig& config);

  const PolicyConfig& config() const { return config_; }

  std::vector<ad::Parameter>& all() { return params_; }
  const std::vector<ad::Parameter>& all() const { return params_; }
  ad::Parameter& get(const std::string& name);
  const ad::Parameter& get(const std::string& name) const;

  // Encoder and decoder tensors.
  std::vector<ad::Parameter*> actor();
  // Value head tensors.
  std::vector<ad::Parameter*> critic();

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  void add(const std::string& name, int rows, int cols, int fan_in, Rng& rng);

  PolicyConfig config_;
  std::vector<ad::Parameter> params_;
};

// Parameters placed on a tape. Tracked parameters receive gradients.
struct BoundParams {
  ad::Var w_node, w_edge;
  std::vector<ad::Var> w_layer;
  ad::Var gru_wi, gru_wh, gru_bi, gru_bh;
  ad::Var ptr_w1, ptr_w2, ptr_v;
  ad::Var critic_w1, critic_b1, critic_w2, critic_b2;
};

BoundParams bind(ad::Tape& tape, ParameterStore& params, bool track_actor, bool track_critic);
BoundParams bind(ad::Tape& tape, const ParameterStore& params);

struct PrimitiveEmbeddings {
  ad::Tensor nodes;     // N x node_features
  ad::Adjacency graph;  // unmasked arcs i -> j, j != i
  ad::Tensor edges;     // one row (distance, in-solution flag) per arc, CSR order

  int size() const { return static_cast<int>(nodes.rows()); }
  bool has_arc(int i, int j) const;
};

// Attention graph: complete for small instances, sparse above
// config.full_graph_max_nodes.
ad::Adjacency attention_graph(const Instance& instance, const Solution& solution, const PolicyConfig& config);

PrimitiveEmbeddings primitive_embed(const Instance& instance, const Solution& solution,
                                    const PolicyConfig& config);

// One attention layer. `edge_ext` holds the extended edge embeddings (arcs x
// edge_dim), `w_layer` is (2 * embed + edge) x embed.
ad::Var egate_forward(ad::Var x, ad::Var edge_ext, const ad::Adjacency& graph, ad::Var w_layer, double slope);

struct EncoderOutput {
  ad::Var nodes;   // N x embed_dim
  ad::Var pooled;  // 1 x embed_dim, mean of the node rows
};

EncoderOutput encode(ad::Tape& tape, const PrimitiveEmbeddings& primitive, const BoundParams& params,
                     const PolicyConfig& config);

struct DecodeResult {
  std::vector<NodeId> nodes;
  std::vector<double> step_log_probs;
  double total_log_prob = 0.0;
  ad::Var log_prob;  // total, on the tape
};

// Chooses M distinct customers. With `forced` the given sequence is scored
// instead of chosen, for re-evaluating stored actions.
DecodeResult decode(const EncoderOutput& enc, int m, DecodeMode mode, Rng& rng, const BoundParams& params,
                    const std::vector<NodeId>* forced = nullptr);

ad::Var critic_value(ad::Var pooled, const BoundParams& params);

struct NeuralProposal {
  Proposal proposal;
  ad::Tensor pooled;
  double value = 0.0;  // critic estimate of the state
};

NeuralProposal neural_propose(const Instance& instance, const Solution& solution, const ParameterStore& params,
                              int m, DecodeMode mode, Rng& rng);

class NeuralOperator final : public Operator {
 public:
  explicit NeuralOperator(std::shared_ptr<const ParameterStore> params) : params_(std::move(params)) {}

  std::string name() const override { return "neural"; }
  Proposal propose(const Instance& instance, const Solution& solution, const ProposalContext& ctx,
                   Rng& rng) override;
  std::unique_ptr<Operator> clone() const override { return std::make_unique<NeuralOperator>(params_); }

 private:
  std::shared_ptr<const ParameterStore> params_;
};

struct CheckpointData {
  ParameterStore params;
  int epoch = 0;
  std::int64_t step = 0;
  std::string state_json = "{}";  // free-form trainer state stored in the manifest
  std::vector<std::pair<std::string, ad::Tensor>> extra;  // e.g. optimiser moments
};

// Header "NEULNSCK", little-endian u64 manifest length, JSON manifest, then
// every tensor as little-endian float32 in manifest order.
void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
// Throws CheckpointMismatch when `expected` is given and its shapes differ.
CheckpointData load_checkpoint(const std::filesystem::path& path, const PolicyConfig* expected = nullptr);

}  // namespace neulns
