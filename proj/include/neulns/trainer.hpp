// Actor-critic training of the neural operator: rollouts through the LNS loop,
// k-step TD advantages, clipped policy-gradient updates for the actor and
// value regression for the critic, both with Adam.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neulns/instance_io.hpp"
#include "neulns/lns.hpp"
#include "neulns/policy.hpp"

namespace neulns {

NEULNS_DEFINE_ERROR(TrainingDiverged);

// Which state each k-step sample of a rollout is attached to.
//   Start:   all m samples use the rollout's first state and action, k = 1..m.
//   Sliding: sample t uses state t and the return to the rollout end, k = m - t.
enum class TdAnchor { Start, Sliding };

const char* to_string(TdAnchor a);
TdAnchor parse_td_anchor(const std::string& s);

struct TrainConfig {
  Variant variant = Variant::CVRP;
  int n_customers = 99;
  int epochs = 1000;
  int instances_per_epoch = 128;
  int batch_size = 64;
  int rollout_steps = 10;  // m
  int rollouts = 20;       // per instance
  double gamma = 0.99;
  double clip_eps = 0.2;
  double learning_rate = 3e-4;
  double critic_lr_scale = 1.0;
  int ppo_epochs = 1;
  bool normalize_advantages = true;
  TdAnchor anchor = TdAnchor::Start;
  int removal_count = 0;  // 0: default for the instance size
  int val_instances = 16;
  int val_iterations = 200;
  int layers = 2;
  int embed_dim = 64;
  int edge_dim = 16;
  int decoder_dim = 64;
  int critic_dim = 64;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: default_parallelism()

  PolicyConfig policy() const;
  // Samples produced by one epoch.
  std::int64_t samples_per_epoch() const;
};

void validate(const TrainConfig& config);

// Keys are the field names above. Unknown keys raise SchemaError listing the
// valid ones.
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});
std::string train_config_to_json(const TrainConfig& config);
std::vector<std::string> train_config_keys();

// Cost reduction from prev to cur; positive when cur is cheaper.
double reward(const CostBreakdown& prev, const CostBreakdown& cur);

// sum_j gamma^(j-1) r_j + gamma^k v_end - v_start, k = rewards.size().
double k_step_td(std::span<const double> rewards, double v_end, double v_start, double gamma);

struct TrainingSample {
  std::shared_ptr<const PrimitiveEmbeddings> state;
  ad::Tensor pooled;  // state encoding under the collecting parameters
  std::vector<NodeId> actions;
  double old_log_prob = 0.0;
  int k = 1;
  double discounted_reward = 0.0;
  double value_start = 0.0;
  double value_end = 0.0;
  double advantage = 0.0;
  double target = 0.0;  // advantage + value_start
};

struct RolloutStats {
  double mean_reward = 0.0;
  std::int64_t steps = 0;
};

// Runs config.rollouts consecutive m-step rollouts per instance with sampled
// decoding; the search state carries over between an instance's rollouts.
std::vector<TrainingSample> collect_rollouts(std::span<const Instance> instances, const ParameterStore& params,
                                             const TrainConfig& config, std::uint64_t seed,
                                             RolloutStats* stats = nullptr);

class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<ad::Parameter*>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // One update from the accumulated gradients. Parameters and moments are
  // rounded to float afterwards.
  void step(const std::vector<ad::Parameter*>& params, double lr);

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::vector<ad::Tensor>& first() { return m_; }
  std::vector<ad::Tensor>& second() { return v_; }
  const std::vector<ad::Tensor>& first() const { return m_; }
  const std::vector<ad::Tensor>& second() const { return v_; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<ad::Tensor> m_, v_;
};

struct Optimizers {
  Adam actor;
  Adam critic;
};

Optimizers make_optimizers(ParameterStore& params);

struct UpdateStats {
  double actor_loss = 0.0;   // mean over mini-batches
  double critic_loss = 0.0;
  int batches = 0;
};

UpdateStats ppo_update(std::vector<TrainingSample>& samples, ParameterStore& params, Optimizers& opt,
                       const TrainConfig& config, Rng& rng);

// Mean over instances of the best cost found with the neural operator.
double evaluate_policy(std::span<const Instance> instances, const ParameterStore& params, int iterations,
                       DecodeMode mode, std::uint64_t seed, int threads);

struct EpochMetrics {
  int epoch = 0;
  double mean_reward = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double val_cost = 0.0;
};

struct TrainResult {
  ParameterStore params;
  std::vector<EpochMetrics> metrics;
};

// Writes metrics.csv and ckpt_{epoch}.bin under out_dir. With `resume`, the
// run continues after the checkpoint's epoch using its stored configuration
// except for `epochs`.
TrainResult train(const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume = std::nullopt);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch);

// Training and validation instances used for a given seed.
Instance training_instance(const TrainConfig& config, int epoch, int index);
std::vector<Instance> validation_instances(const TrainConfig& config);

}  // namespace neulns
