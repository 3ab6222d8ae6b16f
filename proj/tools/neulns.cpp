// neulns: instance generation, single-instance solving, training and
// benchmarking from the command line.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "neulns/heuristics.hpp"
#include "neulns/instance_io.hpp"
#include "neulns/lns.hpp"
#include "neulns/policy.hpp"
#include "neulns/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace neulns;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kData = 3;
constexpr int kDiverged = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

DecodeMode parse_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::Greedy;
  if (s == "sample") return DecodeMode::Sample;
  throw UsageError("unknown decode mode '" + s + "' (greedy or sample)");
}

// Instances that no route can serve are reported up front instead of failing
// deep inside the search.
void require_servable(const Instance& inst, const std::string& label) {
  for (NodeId c = 1; c < inst.size(); ++c) {
    if (!customer_feasible_alone(inst, c)) {
      throw InfeasibleNode(label + ": customer " + std::to_string(c) +
                           " cannot be served by any route (capacity or time window)");
    }
  }
}

std::unique_ptr<Operator> make_operator(const std::string& name, const std::string& ckpt, const Instance* sample) {
  if (name == "random") return std::make_unique<RandomOperator>();
  if (name == "alns") return std::make_unique<AlnsOperator>();
  if (name == "sisr") return std::make_unique<SisrOperator>();
  if (name == "neural") {
    if (ckpt.empty()) throw UsageError("--op neural requires --ckpt");
    CheckpointData data = load_checkpoint(ckpt);
    if (sample) {
      const Variant want = sample->has_time_windows() ? Variant::CVRPTW : Variant::CVRP;
      if (data.params.config().variant != want) {
        throw CheckpointMismatch(std::string("checkpoint was trained for ") + to_string(data.params.config().variant) +
                                 " but the instance is " + to_string(want));
      }
    }
    return std::make_unique<NeuralOperator>(std::make_shared<const ParameterStore>(std::move(data.params)));
  }
  throw UsageError("unknown operator '" + name + "' (random, alns, sisr, neural)");
}

std::vector<fs::path> instance_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ParseError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "manifest.json") {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ParseError("no instance files in " + dir.string());
  return out;
}

// ---- gen ----

struct GenArgs {
  std::string variant = "cvrp";
  int n = 99;
  int count = 1;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  GeneratorConfig g;
  g.variant = parse_variant(a.variant);
  g.n_customers = a.n;
  validate(g);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  json files = json::array();
  for (int i = 0; i < a.count; ++i) {
    g.seed = member_seed(a.seed, static_cast<std::size_t>(i), 0);
    std::ostringstream name;
    name << "inst_" << std::setw(4) << std::setfill('0') << i << ".json";
    save_instance(generate(g), dir / name.str());
    files.push_back({{"file", name.str()}, {"seed", g.seed}});
  }
  const json manifest{{"variant", to_string(g.variant)},
                      {"n_customers", a.n},
                      {"count", a.count},
                      {"seed", a.seed},
                      {"files", files}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << json{{"out", dir.string()}, {"count", a.count}}.dump() << "\n";
  return kOk;
}

// ---- solve ----

struct SolveArgs {
  std::string instance;
  std::string op = "random";
  int iters = 1000;
  int batch = 1;
  std::uint64_t seed = 0;
  std::string ckpt;
  std::string trace;
  std::string solution;
  std::string mode = "sample";
};

int cmd_solve(const SolveArgs& a) {
  const Instance inst = load_instance(a.instance);
  require_servable(inst, a.instance);
  auto op = make_operator(a.op, a.ckpt, &inst);
  SearchConfig sc;
  sc.iterations = a.iters;
  sc.seed = a.seed;
  sc.mode = parse_mode(a.mode);
  const std::vector<Instance> one{inst};
  const BatchResult br = run_batch(one, *op, sc, a.batch, default_parallelism());
  const int best = br.instance_best_member[0];
  const SearchResult& r = br.runs[0][static_cast<std::size_t>(best)];
  if (!a.trace.empty()) write_trace_csv(a.trace, r.trace);
  if (!a.solution.empty()) save_solution(inst, r.best, a.solution);

  json members = json::array();
  for (const auto& run : br.runs[0]) members.push_back(run.best_cost.total_cost);
  json out{{"instance", a.instance},
           {"operator", a.op},
           {"iterations", a.iters},
           {"batch", a.batch},
           {"seed", a.seed},
           {"mode", a.mode},
           {"best_cost", r.best_cost.total_cost},
           {"total_distance", r.best_cost.total_distance},
           {"vehicles", r.best_cost.vehicle_count},
           {"best_member", best},
           {"member_costs", members},
           {"solution", json::parse(solution_to_json(inst, r.best))}};
  std::cout << out.dump(2) << "\n";
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string variant;
  std::string config;
  std::string out;
  std::string resume;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(read_file(a.config), cfg);
  if (!a.variant.empty()) cfg.variant = parse_variant(a.variant);
  validate(cfg);
  std::optional<fs::path> resume;
  if (!a.resume.empty()) resume = fs::path(a.resume);
  fs::create_directories(a.out);
  write_file(fs::path(a.out) / "config.json", train_config_to_json(cfg) + "\n");
  const TrainResult r = train(cfg, a.out, resume);
  json out{{"out", a.out}, {"epochs_run", r.metrics.size()}};
  if (!r.metrics.empty()) {
    out["last_epoch"] = r.metrics.back().epoch;
    out["last_val_cost"] = r.metrics.back().val_cost;
  }
  std::cout << out.dump() << "\n";
  return kOk;
}

// ---- bench ----

struct BenchArgs {
  std::string instances;
  std::string ops = "random,alns,sisr";
  int iters = 1000;
  int batch = 1;
  std::string seeds = "0";
  std::string ckpt;
  std::string mode = "sample";
  std::string out;
};

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_bench(const BenchArgs& a) {
  const auto files = instance_files(a.instances);
  std::vector<Instance> insts;
  for (const auto& f : files) {
    insts.push_back(load_instance(f));
    require_servable(insts.back(), f.string());
  }
  const auto ops = split(a.ops);
  if (ops.empty()) throw UsageError("--ops is empty");
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split(a.seeds)) {
    try {
      seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + s + "'");
    }
  }
  if (seeds.empty()) throw UsageError("--seeds is empty");

  const fs::path out(a.out);
  fs::create_directories(out / "traces");
  std::ofstream runs(out / "runs.csv"), minima(out / "instance_best.csv"), timing(out / "timing.csv");
  runs << "operator,seed,instance,member,best_cost,total_distance,vehicles,iterations\n";
  minima << "operator,seed,instance,best_cost,best_member\n";
  timing << "operator,seed,instance,member,wall_seconds\n";

  json aggregates = json::array();
  std::vector<std::vector<double>> curves;  // per operator, mean batch-min best cost per iteration
  std::ofstream agg(out / "aggregate.csv");
  agg << "operator,runs,mean_cost\n";

  SearchConfig sc;
  sc.iterations = a.iters;
  sc.mode = parse_mode(a.mode);
  for (const auto& name : ops) {
    auto op = make_operator(name, a.ckpt, &insts.front());
    double sum = 0.0;
    int count = 0;
    std::vector<double> curve(static_cast<std::size_t>(a.iters), 0.0);
    for (std::uint64_t seed : seeds) {
      sc.seed = seed;
      const BatchResult br = run_batch(insts, *op, sc, a.batch, default_parallelism());
      for (std::size_t i = 0; i < insts.size(); ++i) {
        const std::string label = files[i].stem().string();
        for (std::size_t b = 0; b < br.runs[i].size(); ++b) {
          const SearchResult& r = br.runs[i][b];
          runs << name << ',' << seed << ',' << label << ',' << b << ',' << fmt(r.best_cost.total_cost) << ','
               << fmt(r.best_cost.total_distance) << ',' << r.best_cost.vehicle_count << ',' << r.trace.size()
               << '\n';
          timing << name << ',' << seed << ',' << label << ',' << b << ','
                 << (r.trace.empty() ? 0.0 : r.trace.back().wall_seconds) << '\n';
          write_trace_csv((out / "traces" / (name + "_" + std::to_string(seed) + "_" + label + "_" +
                                             std::to_string(b) + ".csv"))
                              .string(),
                          r.trace);
        }
        minima << name << ',' << seed << ',' << label << ',' << fmt(br.instance_best[i]) << ','
               << br.instance_best_member[i] << '\n';
        sum += br.instance_best[i];
        ++count;
        for (int t = 0; t < a.iters; ++t) {
          double best = std::numeric_limits<double>::infinity();
          for (const auto& r : br.runs[i]) best = std::min(best, r.trace[static_cast<std::size_t>(t)].best_cost);
          curve[static_cast<std::size_t>(t)] += best;
        }
      }
    }
    for (double& v : curve) v /= count;
    curves.push_back(std::move(curve));
    agg << name << ',' << count << ',' << fmt(sum / count) << '\n';
    aggregates.push_back({{"operator", name}, {"runs", count}, {"mean_cost", sum / count}});
  }

  std::ofstream conv(out / "convergence.csv");
  conv << "iter";
  for (const auto& name : ops) conv << ',' << name;
  conv << '\n';
  for (int t = 0; t < a.iters; ++t) {
    conv << t + 1;
    for (const auto& c : curves) conv << ',' << fmt(c[static_cast<std::size_t>(t)]);
    conv << '\n';
  }

  json names = json::array();
  for (const auto& f : files) names.push_back(f.filename().string());
  const json report{{"config",
                     {{"instances", a.instances},
                      {"instance_files", names},
                      {"ops", ops},
                      {"iters", a.iters},
                      {"batch", a.batch},
                      {"seeds", seeds},
                      {"mode", a.mode},
                      {"ckpt", a.ckpt}}},
                    {"aggregates", aggregates}};
  write_file(out / "report.json", report.dump(2) + "\n");
  std::cout << json{{"out", out.string()}, {"aggregates", aggregates}}.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural large neighbourhood search for vehicle routing"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate random instances");
  g->add_option("--variant", gen.variant, "cvrp or cvrptw")->check(CLI::IsMember({"cvrp", "cvrptw"}));
  g->add_option("--n", gen.n, "customers per instance")->check(CLI::PositiveNumber);
  g->add_option("--count", gen.count, "number of instances")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "base seed");
  g->add_option("--out", gen.out, "output directory")->required();

  SolveArgs solve;
  auto* s = app.add_subcommand("solve", "run the search on one instance");
  s->add_option("--instance", solve.instance, "instance JSON")->required();
  s->add_option("--op", solve.op, "random, alns, sisr or neural");
  s->add_option("--iters", solve.iters, "iterations")->check(CLI::PositiveNumber);
  s->add_option("--batch", solve.batch, "independent runs; the best is reported")->check(CLI::PositiveNumber);
  s->add_option("--seed", solve.seed, "base seed");
  s->add_option("--ckpt", solve.ckpt, "checkpoint for --op neural");
  s->add_option("--mode", solve.mode, "neural decoding: sample or greedy");
  s->add_option("--trace", solve.trace, "trace CSV of the best run");
  s->add_option("--solution", solve.solution, "write the best solution here");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the neural operator");
  t->add_option("--variant", tr.variant, "cvrp or cvrptw (overrides the config)")
      ->check(CLI::IsMember({"cvrp", "cvrptw"}));
  t->add_option("--config", tr.config, "JSON config with TrainConfig field names");
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--resume", tr.resume, "checkpoint to continue from");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "compare operators on a directory of instances");
  b->add_option("--instances", bench.instances, "instance directory")->required();
  b->add_option("--ops", bench.ops, "comma separated operators");
  b->add_option("--iters", bench.iters, "iterations")->check(CLI::PositiveNumber);
  b->add_option("--batch", bench.batch, "runs per instance")->check(CLI::PositiveNumber);
  b->add_option("--seeds", bench.seeds, "comma separated seeds");
  b->add_option("--ckpt", bench.ckpt, "checkpoint for the neural operator");
  b->add_option("--mode", bench.mode, "neural decoding: sample or greedy");
  b->add_option("--out", bench.out, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*s) return cmd_solve(solve);
    if (*t) return cmd_train(tr);
    if (*b) return cmd_bench(bench);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const SchemaError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
