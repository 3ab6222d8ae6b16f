#include "neulns/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace neulns {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

const char* to_string(TdAnchor a) { return a == TdAnchor::Start ? "start" : "sliding"; }

TdAnchor parse_td_anchor(const std::string& s) {
  if (s == "start") return TdAnchor::Start;
  if (s == "sliding") return TdAnchor::Sliding;
  throw SchemaError("unknown TD anchor '" + s + "' (expected start or sliding)");
}

PolicyConfig TrainConfig::policy() const {
  PolicyConfig p;
  p.variant = variant;
  p.layers = layers;
  p.embed_dim = embed_dim;
  p.edge_dim = edge_dim;
  p.decoder_dim = decoder_dim;
  p.critic_dim = critic_dim;
  return p;
}

std::int64_t TrainConfig::samples_per_epoch() const {
  return std::int64_t{instances_per_epoch} * rollout_steps * rollouts;
}

void validate(const TrainConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw SchemaError("invalid training config: " + what);
  };
  require(c.n_customers >= 1, "n_customers must be >= 1");
  require(c.epochs >= 1, "epochs must be >= 1");
  require(c.instances_per_epoch >= 1, "instances_per_epoch must be >= 1");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.rollout_steps >= 1, "rollout_steps must be >= 1");
  require(c.rollouts >= 1, "rollouts must be >= 1");
  require(c.gamma > 0.0 && c.gamma <= 1.0, "gamma must lie in (0, 1]");
  require(c.clip_eps > 0.0 && c.clip_eps < 1.0, "clip_eps must lie in (0, 1)");
  require(c.learning_rate > 0.0, "learning_rate must be positive");
  require(c.critic_lr_scale > 0.0, "critic_lr_scale must be positive");
  require(c.ppo_epochs >= 1, "ppo_epochs must be >= 1");
  require(c.removal_count >= 0 && c.removal_count <= c.n_customers, "removal_count must lie in [0, n_customers]");
  require(c.val_instances >= 0, "val_instances must be >= 0");
  require(c.val_iterations >= 1, "val_iterations must be >= 1");
  require(c.layers >= 1, "layers must be >= 1");
  require(c.embed_dim >= 1 && c.edge_dim >= 1 && c.decoder_dim >= 1 && c.critic_dim >= 1,
          "network widths must be >= 1");
  require(c.threads >= 0, "threads must be >= 0");
}

namespace {

json config_json(const TrainConfig& c) {
  return json{{"variant", to_string(c.variant)},
              {"n_customers", c.n_customers},
              {"epochs", c.epochs},
              {"instances_per_epoch", c.instances_per_epoch},
              {"batch_size", c.batch_size},
              {"rollout_steps", c.rollout_steps},
              {"rollouts", c.rollouts},
              {"gamma", c.gamma},
              {"clip_eps", c.clip_eps},
              {"learning_rate", c.learning_rate},
              {"critic_lr_scale", c.critic_lr_scale},
              {"ppo_epochs", c.ppo_epochs},
              {"normalize_advantages", c.normalize_advantages},
              {"anchor", to_string(c.anchor)},
              {"removal_count", c.removal_count},
              {"val_instances", c.val_instances},
              {"val_iterations", c.val_iterations},
              {"layers", c.layers},
              {"embed_dim", c.embed_dim},
              {"edge_dim", c.edge_dim},
              {"decoder_dim", c.decoder_dim},
              {"critic_dim", c.critic_dim},
              {"seed", c.seed},
              {"threads", c.threads}};
}

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string("config key '") + key + "' has the wrong type");
  }
}

std::uint64_t channel_seed(std::uint64_t seed, std::size_t channel, std::size_t index) {
  return member_seed(member_seed(seed, channel, 0), index, 0);
}

}  // namespace

std::vector<std::string> train_config_keys() {
  std::vector<std::string> keys;
  const json defaults = config_json(TrainConfig{});
  for (const auto& item : defaults.items()) keys.push_back(item.key());
  return keys;
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("training config: " + std::string(e.what()));
  }
  if (!j.is_object()) throw SchemaError("training config must be a JSON object");
  const auto keys = train_config_keys();
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      std::string list;
      for (const auto& key : keys) list += (list.empty() ? "" : ", ") + key;
      throw SchemaError("unknown config key '" + k + "'; valid keys: " + list);
    }
  }
  TrainConfig c = base;
  std::string variant = to_string(c.variant), anchor = to_string(c.anchor);
  take(j, "variant", variant);
  take(j, "anchor", anchor);
  c.variant = parse_variant(variant);
  c.anchor = parse_td_anchor(anchor);
  take(j, "n_customers", c.n_customers);
  take(j, "epochs", c.epochs);
  take(j, "instances_per_epoch", c.instances_per_epoch);
  take(j, "batch_size", c.batch_size);
  take(j, "rollout_steps", c.rollout_steps);
  take(j, "rollouts", c.rollouts);
  take(j, "gamma", c.gamma);
  take(j, "clip_eps", c.clip_eps);
  take(j, "learning_rate", c.learning_rate);
  take(j, "critic_lr_scale", c.critic_lr_scale);
  take(j, "ppo_epochs", c.ppo_epochs);
  take(j, "normalize_advantages", c.normalize_advantages);
  take(j, "removal_count", c.removal_count);
  take(j, "val_instances", c.val_instances);
  take(j, "val_iterations", c.val_iterations);
  take(j, "layers", c.layers);
  take(j, "embed_dim", c.embed_dim);
  take(j, "edge_dim", c.edge_dim);
  take(j, "decoder_dim", c.decoder_dim);
  take(j, "critic_dim", c.critic_dim);
  take(j, "seed", c.seed);
  take(j, "threads", c.threads);
  validate(c);
  return c;
}

std::string train_config_to_json(const TrainConfig& config) { return config_json(config).dump(2); }

double reward(const CostBreakdown& prev, const CostBreakdown& cur) { return prev.total_cost - cur.total_cost; }

double k_step_td(std::span<const double> rewards, double v_end, double v_start, double gamma) {
  double total = 0.0, discount = 1.0;
  for (double r : rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total + discount * v_end - v_start;
}

namespace {

struct StateEval {
  Tensor pooled;
  double value = 0.0;
  std::vector<NodeId> actions;
  double log_prob = 0.0;
};

// Encodes the state and, when m > 0, samples an action.
StateEval evaluate_state(const PrimitiveEmbeddings& prim, const ParameterStore& params, int m, Rng& rng) {
  ad::Tape tape;
  const BoundParams b = bind(tape, params);
  const EncoderOutput enc = encode(tape, prim, b, params.config());
  StateEval out;
  out.pooled = enc.pooled.value();
  out.value = critic_value(enc.pooled, b).scalar();
  if (m > 0) {
    DecodeResult d = decode(enc, m, DecodeMode::Sample, rng, b);
    out.actions = std::move(d.nodes);
    out.log_prob = d.total_log_prob;
  }
  return out;
}

std::vector<TrainingSample> rollouts_for_instance(const Instance& inst, const ParameterStore& params,
                                                  const TrainConfig& cfg, std::uint64_t seed, double& reward_sum) {
  Rng rng(seed);
  SearchConfig sc;
  sc.iterations = cfg.rollout_steps * cfg.rollouts;
  sc.mode = DecodeMode::Sample;
  if (cfg.removal_count > 0) sc.removal_count = cfg.removal_count;
  LnsSearch search(inst, sc, rng);
  const int m = cfg.rollout_steps;
  const PolicyConfig& pcfg = params.config();

  std::vector<TrainingSample> out;
  out.reserve(static_cast<std::size_t>(cfg.rollouts) * static_cast<std::size_t>(m));
  std::vector<std::shared_ptr<const PrimitiveEmbeddings>> states(static_cast<std::size_t>(m) + 1);
  std::vector<StateEval> evals(static_cast<std::size_t>(m) + 1);
  std::vector<double> rewards(static_cast<std::size_t>(m));

  for (int r = 0; r < cfg.rollouts; ++r) {
    for (int t = 0; t <= m; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      states[ut] = std::make_shared<const PrimitiveEmbeddings>(primitive_embed(inst, search.current(), pcfg));
      evals[ut] = evaluate_state(*states[ut], params, t < m ? search.removal_count() : 0, rng);
      if (t == m) break;
      const CostBreakdown before = search.current_cost();
      const StepResult step = search.apply(evals[ut].actions, rng);
      rewards[ut] = reward(before, step.candidate);
      reward_sum += rewards[ut];
    }

    auto emit = [&](int state, int k) {
      const auto us = static_cast<std::size_t>(state);
      TrainingSample s;
      s.state = states[us];
      s.pooled = evals[us].pooled;
      s.actions = evals[us].actions;
      s.old_log_prob = evals[us].log_prob;
      s.k = k;
      const std::span<const double> rs(rewards.data() + state, static_cast<std::size_t>(k));
      s.value_start = evals[us].value;
      s.value_end = evals[us + static_cast<std::size_t>(k)].value;
      s.discounted_reward = k_step_td(rs, 0.0, 0.0, cfg.gamma);
      s.advantage = k_step_td(rs, s.value_end, s.value_start, cfg.gamma);
      s.target = s.advantage + s.value_start;
      out.push_back(std::move(s));
    };
    for (int j = 0; j < m; ++j) {
      if (cfg.anchor == TdAnchor::Start) {
        emit(0, j + 1);
      } else {
        emit(j, m - j);
      }
    }
  }
  return out;
}

bool all_finite(const Tensor& t) { return t.allFinite(); }

}  // namespace

std::vector<TrainingSample> collect_rollouts(std::span<const Instance> instances, const ParameterStore& params,
                                             const TrainConfig& config, std::uint64_t seed, RolloutStats* stats) {
  std::vector<std::vector<TrainingSample>> per(instances.size());
  std::vector<double> sums(instances.size(), 0.0);
  const int threads = config.threads > 0 ? config.threads : default_parallelism();
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    per[i] = rollouts_for_instance(instances[i], params, config, member_seed(seed, i, 0), sums[i]);
  });
  std::vector<TrainingSample> all;
  all.reserve(static_cast<std::size_t>(config.samples_per_epoch()));
  for (auto& v : per) std::move(v.begin(), v.end(), std::back_inserter(all));
  if (stats) {
    stats->steps = std::int64_t{config.rollout_steps} * config.rollouts * static_cast<std::int64_t>(instances.size());
    stats->mean_reward = std::accumulate(sums.begin(), sums.end(), 0.0) / static_cast<double>(stats->steps);
  }
  return all;
}

Adam::Adam(const std::vector<ad::Parameter*>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const ad::Parameter* p : params) {
    m_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(const std::vector<ad::Parameter*>& params, double lr) {
  if (params.size() != m_.size()) throw Error("optimizer was built for a different parameter list");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto round = [](double x) { return static_cast<double>(static_cast<float>(x)); };
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Parameter& p = *params[k];
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data()[i];
      const double mi = round(beta1_ * m.data()[i] + (1.0 - beta1_) * g);
      const double vi = round(beta2_ * v.data()[i] + (1.0 - beta2_) * g * g);
      m.data()[i] = mi;
      v.data()[i] = vi;
      p.value.data()[i] = round(p.value.data()[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps_));
    }
  }
}

Optimizers make_optimizers(ParameterStore& params) { return Optimizers{Adam(params.actor()), Adam(params.critic())}; }

UpdateStats ppo_update(std::vector<TrainingSample>& samples, ParameterStore& params, Optimizers& opt,
                       const TrainConfig& config, Rng& rng) {
  if (samples.empty()) throw Error("ppo_update needs at least one sample");
  const PolicyConfig& pcfg = params.config();
  const auto actor = params.actor();
  const auto critic = params.critic();
  UpdateStats stats;
  std::vector<std::size_t> order(samples.size());
  Rng unused(0);

  for (int pass = 0; pass < config.ppo_epochs; ++pass) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double b = static_cast<double>(end - start);

      std::vector<double> adv;
      for (std::size_t k = start; k < end; ++k) adv.push_back(samples[order[k]].advantage);
      if (config.normalize_advantages && adv.size() > 1) {
        const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / b;
        double var = 0.0;
        for (double a : adv) var += (a - mean) * (a - mean);
        const double sd = std::sqrt(var / b);
        for (double& a : adv) a = sd > 1e-12 ? (a - mean) / sd : a - mean;
      }

      params.zero_grad();
      double actor_loss = 0.0, critic_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const TrainingSample& s = samples[order[k]];
        {
          ad::Tape tape;
          const BoundParams bp = bind(tape, params, true, false);
          const EncoderOutput enc = encode(tape, *s.state, bp, pcfg);
          const DecodeResult d =
              decode(enc, static_cast<int>(s.actions.size()), DecodeMode::Greedy, unused, bp, &s.actions);
          const Var loss = ad::scale(ad::ppo_clip(d.log_prob, s.old_log_prob, adv[k - start], config.clip_eps), -1.0 / b);
          actor_loss += loss.scalar();
          tape.backward(loss);
        }
        {
          ad::Tape tape;
          const BoundParams bp = bind(tape, params, false, true);
          const Var v = critic_value(tape.constant(s.pooled), bp);
          const Var loss = ad::scale(ad::square(ad::add_scalar(v, -s.target)), 0.5 / b);
          critic_loss += loss.scalar();
          tape.backward(loss);
        }
      }

      bool finite = std::isfinite(actor_loss) && std::isfinite(critic_loss);
      for (const auto& p : params.all()) finite = finite && all_finite(p.grad);
      if (!finite) {
        std::ostringstream msg;
        msg << "non-finite loss or gradient in mini-batch starting at " << start << ": actor_loss=" << actor_loss
            << " critic_loss=" << critic_loss << " advantages=[";
        for (std::size_t k = 0; k < adv.size() && k < 8; ++k) msg << (k ? ", " : "") << adv[k];
        msg << (adv.size() > 8 ? ", ...]" : "]");
        throw TrainingDiverged(msg.str());
      }
      opt.actor.step(actor, config.learning_rate);
      opt.critic.step(critic, config.learning_rate * config.critic_lr_scale);
      for (const auto& p : params.all()) {
        if (!all_finite(p.value)) throw TrainingDiverged("parameter " + p.name + " became non-finite");
      }
      stats.actor_loss += actor_loss;
      stats.critic_loss += critic_loss;
      ++stats.batches;
    }
  }
  stats.actor_loss /= stats.batches;
  stats.critic_loss /= stats.batches;
  return stats;
}

double evaluate_policy(std::span<const Instance> instances, const ParameterStore& params, int iterations,
                       DecodeMode mode, std::uint64_t seed, int threads) {
  if (instances.empty()) return std::numeric_limits<double>::quiet_NaN();
  NeuralOperator op(std::make_shared<const ParameterStore>(params));
  SearchConfig sc;
  sc.iterations = iterations;
  sc.seed = seed;
  sc.mode = mode;
  return run_batch(instances, op, sc, 1, threads > 0 ? threads : default_parallelism()).mean_best;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch) {
  return dir / ("ckpt_" + std::to_string(epoch) + ".bin");
}

Instance training_instance(const TrainConfig& config, int epoch, int index) {
  GeneratorConfig g;
  g.n_customers = config.n_customers;
  g.variant = config.variant;
  g.seed = member_seed(channel_seed(config.seed, 1, 0), static_cast<std::size_t>(epoch), static_cast<std::size_t>(index));
  return generate(g);
}

std::vector<Instance> validation_instances(const TrainConfig& config) {
  std::vector<Instance> out;
  for (int v = 0; v < config.val_instances; ++v) {
    GeneratorConfig g;
    g.n_customers = config.n_customers;
    g.variant = config.variant;
    g.seed = channel_seed(config.seed, 3, static_cast<std::size_t>(v));
    out.push_back(generate(g));
  }
  return out;
}

namespace {

const char* kMetricsHeader = "epoch,mean_reward,actor_loss,critic_loss,val_cost";

std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream out;
  out << std::setprecision(17) << m.epoch << ',' << m.mean_reward << ',' << m.actor_loss << ',' << m.critic_loss
      << ',' << m.val_cost;
  return out.str();
}

void save_training_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, ParameterStore& params,
                              const Optimizers& opt, int epoch) {
  CheckpointData data;
  data.params = params;
  data.epoch = epoch;
  data.step = opt.actor.steps();
  data.state_json = json{{"train_config", config_json(cfg)},
                         {"actor_steps", opt.actor.steps()},
                         {"critic_steps", opt.critic.steps()}}
                        .dump();
  const auto actor = params.actor();
  const auto critic = params.critic();
  for (std::size_t k = 0; k < actor.size(); ++k) {
    data.extra.emplace_back("adam.actor.m." + actor[k]->name, opt.actor.first()[k]);
    data.extra.emplace_back("adam.actor.v." + actor[k]->name, opt.actor.second()[k]);
  }
  for (std::size_t k = 0; k < critic.size(); ++k) {
    data.extra.emplace_back("adam.critic.m." + critic[k]->name, opt.critic.first()[k]);
    data.extra.emplace_back("adam.critic.v." + critic[k]->name, opt.critic.second()[k]);
  }
  save_checkpoint(path, data);
}

void restore_moments(const CheckpointData& data, const std::string& group, const std::vector<ad::Parameter*>& ps,
                     Adam& adam) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : data.extra) {
      if (n == name) return t;
    }
    throw CheckpointMismatch("checkpoint lacks optimizer state " + name);
  };
  for (std::size_t k = 0; k < ps.size(); ++k) {
    adam.first()[k] = find("adam." + group + ".m." + ps[k]->name);
    adam.second()[k] = find("adam." + group + ".v." + ps[k]->name);
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume) {
  TrainConfig cfg = config;
  int first_epoch = 1;
  TrainResult result;
  Optimizers opt;
  std::vector<std::string> kept_rows;

  std::filesystem::create_directories(out_dir);
  const auto metrics_path = out_dir / "metrics.csv";

  if (resume) {
    CheckpointData data = load_checkpoint(*resume);
    const json state = json::parse(data.state_json);
    if (!state.contains("train_config")) throw SchemaError("checkpoint has no training state");
    cfg = train_config_from_json(state["train_config"].dump());
    cfg.epochs = config.epochs;
    validate(cfg);
    if (!cfg.policy().same_shapes(data.params.config())) {
      throw CheckpointMismatch("checkpoint network does not match its stored training config");
    }
    result.params = std::move(data.params);
    opt = make_optimizers(result.params);
    restore_moments(data, "actor", result.params.actor(), opt.actor);
    restore_moments(data, "critic", result.params.critic(), opt.critic);
    opt.actor.set_steps(state.at("actor_steps").get<std::int64_t>());
    opt.critic.set_steps(state.at("critic_steps").get<std::int64_t>());
    first_epoch = data.epoch + 1;

    std::ifstream old(metrics_path);
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line)) {
      if (!line.empty() && std::stoi(line.substr(0, line.find(','))) <= data.epoch) kept_rows.push_back(line);
    }
  } else {
    validate(cfg);
    result.params = ParameterStore(cfg.policy(), channel_seed(cfg.seed, 0, 0));
    opt = make_optimizers(result.params);
  }

  {
    std::ofstream out(metrics_path, std::ios::trunc);
    out << kMetricsHeader << '\n';
    for (const auto& row : kept_rows) out << row << '\n';
  }

  const std::vector<Instance> val = validation_instances(cfg);
  const int threads = cfg.threads > 0 ? cfg.threads : default_parallelism();

  for (int epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
    std::vector<Instance> batch;
    for (int i = 0; i < cfg.instances_per_epoch; ++i) batch.push_back(training_instance(cfg, epoch, i));

    RolloutStats rs;
    std::vector<TrainingSample> samples =
        collect_rollouts(batch, result.params, cfg, channel_seed(cfg.seed, 2, static_cast<std::size_t>(epoch)), &rs);
    Rng rng(channel_seed(cfg.seed, 4, static_cast<std::size_t>(epoch)));
    UpdateStats us;
    try {
      us = ppo_update(samples, result.params, opt, cfg, rng);
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged("epoch " + std::to_string(epoch) + ": " + e.what() + " (last good checkpoint: " +
                             (epoch > 1 ? checkpoint_path(out_dir, epoch - 1).string() : std::string("none")) + ")");
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.mean_reward = rs.mean_reward;
    m.actor_loss = us.actor_loss;
    m.critic_loss = us.critic_loss;
    m.val_cost = evaluate_policy(val, result.params, cfg.val_iterations, DecodeMode::Greedy,
                                 channel_seed(cfg.seed, 5, 0), threads);

    save_training_checkpoint(checkpoint_path(out_dir, epoch), cfg, result.params, opt, epoch);
    std::ofstream out(metrics_path, std::ios::app);
    out << metrics_row(m) << '\n';
    result.metrics.push_back(m);
  }
  return result;
}

}  // namespace neulns
