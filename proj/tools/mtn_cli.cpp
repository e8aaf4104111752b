// Command line front end: incremental runs, ablation sweeps, checkpoint
// inspection, and artifact validation. Exit codes: 0 success, 2 invalid
// input or arguments, 1 internal failure.

#include "mtn/data_io.hpp"
#include "mtn/evaluation.hpp"
#include "mtn/model.hpp"
#include "mtn/trainer.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace mtn;

namespace {

// ---- config handling -------------------------------------------------------

using Config = std::map<std::string, std::string>;

Config default_config() {
  return {
      {"method", "mtn"},
      {"seed", "0"},
      {"epochs_per_task", "10"},
      {"batch_new", "128"},
      {"batch_replay", "32"},
      {"learning_rate", "0.1"},
      {"momentum", "0.9"},
      {"weight_decay", "0.0001"},
      {"k", "10"},
      {"memory_budget", "2000"},
      {"distill_temperature", "1"},
      {"model_dim", "128"},
      {"num_layers", "4"},
      {"num_heads", "4"},
      {"ffn_multiplier", "4"},
      {"rank_embedding", "0"},
      {"classes", "8"},
      {"dim", "32"},
      {"train_per_class", "60"},
      {"eval_per_class", "20"},
      {"spread", "1.3"},
      {"spread_max", "0"},
      {"separation", "1"},
      {"data_seed", "0"},
      {"task_size", "2"},
      {"train_features", ""},
      {"eval_features", ""},
  };
}

int to_int(const Config& cfg, const std::string& key) {
  const std::string& v = cfg.at(key);
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    throw ArgumentError("config key '" + key + "': not an integer: '" + v + "'");
  }
  if (used != v.size())
    throw ArgumentError("config key '" + key + "': not an integer: '" + v + "'");
  return out;
}

double to_double(const Config& cfg, const std::string& key) {
  const std::string& v = cfg.at(key);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ArgumentError("config key '" + key + "': not a number: '" + v + "'");
  }
  if (used != v.size())
    throw ArgumentError("config key '" + key + "': not a number: '" + v + "'");
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---- object construction from a resolved config ----------------------------

TaskStream build_stream(const Config& cfg) {
  const int task_size = to_int(cfg, "task_size");
  if (!cfg.at("train_features").empty() || !cfg.at("eval_features").empty()) {
    if (cfg.at("train_features").empty() || cfg.at("eval_features").empty())
      throw ArgumentError("train_features and eval_features must be given together");
    int train_dim = 0;
    int eval_dim = 0;
    std::vector<FeatureRecord> train = read_feature_file(cfg.at("train_features"), train_dim);
    std::vector<FeatureRecord> eval = read_feature_file(cfg.at("eval_features"), eval_dim);
    if (train_dim != eval_dim)
      throw ArgumentError("train/eval feature dimensions disagree: " +
                          std::to_string(train_dim) + " vs " + std::to_string(eval_dim));
    int classes = 0;
    for (const auto& r : train) classes = std::max(classes, r.label + 1);
    for (const auto& r : eval) classes = std::max(classes, r.label + 1);
    return split_into_tasks(train, eval, classes, task_size,
                            static_cast<std::uint64_t>(to_int(cfg, "data_seed")));
  }
  SyntheticSpec spec;
  spec.num_classes = to_int(cfg, "classes");
  spec.dim = to_int(cfg, "dim");
  spec.train_per_class = to_int(cfg, "train_per_class");
  spec.eval_per_class = to_int(cfg, "eval_per_class");
  spec.cluster_spread = to_double(cfg, "spread");
  spec.cluster_spread_max = to_double(cfg, "spread_max");
  spec.mean_separation = to_double(cfg, "separation");
  spec.seed = static_cast<std::uint64_t>(to_int(cfg, "data_seed"));
  return generate_synthetic(spec, task_size);
}

TrainConfig build_train_config(const Config& cfg) {
  TrainConfig tc;
  tc.epochs_per_task = to_int(cfg, "epochs_per_task");
  tc.batch_new = to_int(cfg, "batch_new");
  tc.batch_replay = to_int(cfg, "batch_replay");
  tc.optimizer.learning_rate = to_double(cfg, "learning_rate");
  tc.optimizer.momentum = to_double(cfg, "momentum");
  tc.optimizer.weight_decay = to_double(cfg, "weight_decay");
  tc.k = to_int(cfg, "k");
  const int budget = to_int(cfg, "memory_budget");
  if (budget <= 0) throw ArgumentError("memory_budget must be positive");
  tc.memory_budget = static_cast<std::size_t>(budget);
  tc.seed = static_cast<std::uint64_t>(to_int(cfg, "seed"));
  tc.distill_temperature = to_double(cfg, "distill_temperature");
  tc.validate();
  return tc;
}

std::unique_ptr<IncrementalClassifier> build_model(const Config& cfg, int input_dim,
                                                   int capacity) {
  const std::string& method = cfg.at("method");
  const auto seed = static_cast<std::uint64_t>(to_int(cfg, "seed"));
  if (method == "linear") return std::make_unique<LinearClassifier>(input_dim, capacity, seed);
  MtnConfig mc;
  mc.input_dim = input_dim;
  mc.model_dim = to_int(cfg, "model_dim");
  mc.num_layers = to_int(cfg, "num_layers");
  mc.num_heads = to_int(cfg, "num_heads");
  mc.ffn_multiplier = to_int(cfg, "ffn_multiplier");
  mc.k = to_int(cfg, "k");
  mc.use_rank_positional_embedding = to_int(cfg, "rank_embedding") != 0;
  mc.num_classes_capacity = capacity;
  return std::make_unique<MtnModel>(mc, seed);
}

int stream_classes(const TaskStream& stream) {
  int n = 0;
  for (const auto& t : stream.tasks)
    for (int c : t.classes) n = std::max(n, c + 1);
  return n;
}

Config resolve(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::map<std::string, std::string>& flag_values) {
  Config cfg = default_config();
  if (!config_path.empty()) {
    for (const auto& [key, value] : read_config_file(config_path)) {
      if (!cfg.count(key)) throw ArgumentError("unknown config key '" + key + "'");
      cfg[key] = value;
    }
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ArgumentError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    if (!cfg.count(key)) throw ArgumentError("unknown config key '" + key + "'");
    cfg[key] = kv.substr(eq + 1);
  }
  // Dedicated flags take precedence over both the file and --set.
  for (const auto& [key, value] : flag_values) cfg[key] = value;
  return cfg;
}

// ---- run -------------------------------------------------------------------

struct RunResult {
  RunMetrics metrics;
  std::uint64_t stream_hash = 0;
};

RunResult execute_run(const Config& cfg, const fs::path& out_dir,
                      const std::string& resume_path, bool quiet) {
  const std::string& method = cfg.at("method");
  if (method != "mtn" && method != "linear" && method != "memknn")
    throw ArgumentError("method must be one of mtn, linear, memknn; got '" + method + "'");

  const TaskStream stream = build_stream(cfg);
  const std::uint64_t stream_hash = stream.content_hash();
  const TrainConfig tc = build_train_config(cfg);
  const std::string config_text = config_to_text(cfg);

  fs::create_directories(out_dir);
  {
    Config with_hash = cfg;
    with_hash["stream_hash"] = std::to_string(stream_hash);
    std::ofstream cf(out_dir / "config.txt");
    cf << config_to_text(with_hash);
  }

  std::ofstream log(out_dir / "metrics.log");
  log << "method=" << method << "\n";
  log << "stream_hash=" << stream_hash << "\n";

  RunMetrics metrics;
  if (method == "memknn") {
    if (!resume_path.empty())
      throw ArgumentError("--resume is not applicable to the memknn method");
    metrics = memknn_baseline_run(stream, tc);
    for (std::size_t i = 0; i < metrics.per_task_top1.size(); ++i)
      log << "task=" << i << " classes=" << metrics.per_task_class_counts[i]
          << " top1=" << fmt(metrics.per_task_top1[i]) << "\n";
  } else {
    const int capacity = stream_classes(stream);
    std::unique_ptr<TrainerState> st;
    if (!resume_path.empty()) {
      Checkpoint ckpt = read_checkpoint(resume_path);
      if (ckpt.stream_hash != stream_hash)
        throw ArgumentError("checkpoint stream hash " + std::to_string(ckpt.stream_hash) +
                            " does not match the configured stream " +
                            std::to_string(stream_hash));
      st = std::make_unique<TrainerState>(
          restore_trainer(ckpt, tc, build_model(cfg, stream.dim, capacity)));
    } else {
      st = std::make_unique<TrainerState>(build_model(cfg, stream.dim, capacity), tc,
                                          stream.dim);
    }
    RunHooks hooks;
    hooks.on_epoch = [&](int task, int epoch, double mean_loss) {
      log << "task=" << task << " epoch=" << epoch << " loss=" << fmt(mean_loss) << "\n";
    };
    hooks.on_task_end = [&](int task, const TrainerState& state) {
      log << "task=" << task
          << " classes=" << state.metrics.per_task_class_counts[task]
          << " top1=" << fmt(state.metrics.per_task_top1[task]) << "\n";
      write_checkpoint(make_checkpoint(state, config_text, stream_hash),
                       (out_dir / ("checkpoint_task_" + std::to_string(task) + ".bin")).string());
    };
    metrics = run_incremental(*st, stream, tc, hooks);
    write_checkpoint(make_checkpoint(*st, config_text, stream_hash),
                     (out_dir / "checkpoint.bin").string());
  }

  std::ostringstream summary;
  summary << "summary\n";
  summary << "method=" << method << "\n";
  summary << "stream_hash=" << stream_hash << "\n";
  summary << "tasks=" << metrics.per_task_top1.size() << "\n";
  summary << "average_incremental_accuracy=" << fmt(metrics.average_incremental_accuracy)
          << "\n";
  summary << "final_top1=" << fmt(metrics.per_task_top1.back()) << "\n";
  log << summary.str();

  std::ofstream csv(out_dir / "per_task.csv");
  csv << "# stream_hash=" << stream_hash << "\n";
  csv << "task,classes,top1\n";
  for (std::size_t i = 0; i < metrics.per_task_top1.size(); ++i)
    csv << i << "," << metrics.per_task_class_counts[i] << ","
        << fmt(metrics.per_task_top1[i]) << "\n";

  if (!quiet) std::cout << summary.str();
  return {metrics, stream_hash};
}

// ---- ablate ----------------------------------------------------------------

const std::map<std::string, std::array<int, 3>> kModelSizes = {
    // name -> {num_layers, num_heads, model_dim}
    {"small", {2, 1, 64}},
    {"medium", {4, 4, 128}},
    {"large", {12, 12, 768}},
};

int execute_ablate(const Config& base, const fs::path& out_dir, const std::string& sweep,
                   std::vector<std::string> values) {
  if (sweep != "k" && sweep != "memory_size" && sweep != "model_size")
    throw ArgumentError("sweep must be one of k, memory_size, model_size; got '" + sweep + "'");
  if (values.empty()) {
    if (sweep == "k") values = {"1", "2", "5", "10", "20"};
    else if (sweep == "memory_size") values = {"500", "1000", "2000"};
    else values = {"small", "medium", "large"};
  }

  fs::create_directories(out_dir);
  std::ofstream table(out_dir / "sweep.csv");
  table << "sweep,value,average_incremental_accuracy,final_top1,stream_hash\n";

  std::uint64_t shared_hash = 0;
  for (const std::string& value : values) {
    Config cfg = base;
    if (sweep == "k") {
      cfg["k"] = value;
    } else if (sweep == "memory_size") {
      cfg["memory_budget"] = value;
    } else {
      auto it = kModelSizes.find(value);
      if (it == kModelSizes.end())
        throw ArgumentError("model_size value must be small, medium or large; got '" + value +
                            "'");
      cfg["num_layers"] = std::to_string(it->second[0]);
      cfg["num_heads"] = std::to_string(it->second[1]);
      cfg["model_dim"] = std::to_string(it->second[2]);
    }
    const fs::path point_dir = out_dir / (sweep + "_" + value);
    std::cout << "running " << sweep << "=" << value << "\n";
    RunResult res = execute_run(cfg, point_dir, "", /*quiet=*/true);
    if (shared_hash == 0) shared_hash = res.stream_hash;
    if (res.stream_hash != shared_hash)
      throw ContractError("sweep points saw different data streams");
    table << sweep << "," << value << ","
          << fmt(res.metrics.average_incremental_accuracy) << ","
          << fmt(res.metrics.per_task_top1.back()) << "," << res.stream_hash << "\n";
  }
  std::cout << "sweep table written to " << (out_dir / "sweep.csv").string() << "\n";
  return 0;
}

// ---- inspect ---------------------------------------------------------------

int execute_inspect(const std::string& checkpoint_path, int query_index, int k_override) {
  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  if (ckpt.model_kind != "mtn")
    throw ArgumentError("inspect requires an mtn checkpoint, got kind '" + ckpt.model_kind +
                        "'");

  Config cfg = default_config();
  for (const auto& [key, value] : parse_config_text(ckpt.config_text))
    if (cfg.count(key)) cfg[key] = value;

  const TaskStream stream = build_stream(cfg);
  if (stream.content_hash() != ckpt.stream_hash)
    throw ArgumentError("checkpoint stream hash does not match the stream rebuilt from its "
                        "embedded config");

  const TrainConfig tc = build_train_config(cfg);
  TrainerState st =
      restore_trainer(ckpt, tc, build_model(cfg, stream.dim, stream_classes(stream)));
  const auto* model = dynamic_cast<const MtnModel*>(st.model.get());
  if (model == nullptr) throw ContractError("restored model is not an mtn model");

  std::vector<const FeatureRecord*> pool;
  for (int t = 0; t < st.completed_tasks && t < static_cast<int>(stream.tasks.size()); ++t)
    for (const auto& r : stream.tasks[t].eval) pool.push_back(&r);
  if (query_index < 0 || query_index >= static_cast<int>(pool.size()))
    throw ArgumentError("query index " + std::to_string(query_index) +
                        " out of range; the seen evaluation pool holds " +
                        std::to_string(pool.size()) + " queries");

  const FeatureRecord& query = *pool[query_index];
  const int k = k_override > 0 ? k_override : tc.k;
  const std::vector<Neighbor> hits = st.memory.knn_query(query.features, k);
  std::vector<Eigen::VectorXd> neighbor_features;
  neighbor_features.reserve(hits.size());
  for (const auto& h : hits) neighbor_features.push_back(st.memory.record(h.index).features);

  const int knn_pred = mem_knn_baseline(st.memory, {query.features}, k).front();
  const int mtn_pred = st.model->predict(query.features, neighbor_features);
  const std::vector<double> adapted = model->adapted_similarities(query.features,
                                                                  neighbor_features);

  std::cout << "query_index=" << query_index << "\n";
  std::cout << "true_label=" << query.label << "\n";
  std::cout << "k=" << k << "\n";
  std::cout << "knn_prediction=" << knn_pred << "\n";
  std::cout << "mtn_prediction=" << mtn_pred << "\n";
  std::cout << "rank,label,raw_similarity,adapted_similarity\n";
  for (std::size_t i = 0; i < hits.size(); ++i)
    std::cout << (i + 1) << "," << st.memory.record(hits[i].index).label << ","
              << fmt(hits[i].similarity) << "," << fmt(adapted[i]) << "\n";
  return 0;
}

// ---- validate --------------------------------------------------------------

int execute_validate(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  const std::string tag(magic, static_cast<std::size_t>(in.gcount()));
  in.close();
  if (tag == "MTNF") {
    int dim = 0;
    const auto records = read_feature_file(path, dim);
    std::cout << "feature file: records=" << records.size() << " dim=" << dim << "\n";
    return 0;
  }
  if (tag == "MTNC") {
    const Checkpoint ckpt = read_checkpoint(path);
    std::cout << "checkpoint: kind=" << ckpt.model_kind
              << " completed_tasks=" << ckpt.completed_tasks
              << " memory_records=" << ckpt.memory_records.size()
              << " stream_hash=" << ckpt.stream_hash << "\n";
    return 0;
  }
  throw IoError("'" + path + "' is neither a feature file nor a checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-transformer class-incremental learning"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> flag_values;  // only keys the user passed

  auto add_config_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
    for (const auto& [key, def] : default_config()) {
      cmd->add_option_function<std::string>(
          "--" + key, [&flag_values, key = key](const std::string& v) { flag_values[key] = v; },
          "config key (default " + (def.empty() ? std::string("empty") : def) + ")");
    }
  };

  std::string out_dir;
  std::string resume_path;
  auto* run_cmd = app.add_subcommand("run", "train/evaluate one incremental run");
  add_config_flags(run_cmd);
  run_cmd->add_option("--out", out_dir, "output directory")->required();
  run_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

  std::string sweep;
  std::vector<std::string> sweep_values;
  auto* ablate_cmd = app.add_subcommand("ablate", "sweep one axis, one run per grid point");
  add_config_flags(ablate_cmd);
  ablate_cmd->add_option("--out", out_dir, "output directory")->required();
  ablate_cmd->add_option("--sweep", sweep, "axis: k, memory_size or model_size")->required();
  ablate_cmd->add_option("--values", sweep_values, "grid values (defaults per axis)");

  std::string checkpoint_path;
  int query_index = 0;
  int k_override = 0;
  auto* inspect_cmd =
      app.add_subcommand("inspect", "show raw vs adapted neighbor similarities for a query");
  inspect_cmd->add_option("--checkpoint", checkpoint_path, "mtn checkpoint")->required();
  inspect_cmd->add_option("--query", query_index, "index into the seen evaluation pool")
      ->required();
  inspect_cmd->add_option("--k", k_override, "neighbor count (default: from the checkpoint)");

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "check a feature file or checkpoint");
  validate_cmd->add_option("--file", validate_path, "path to validate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(run_cmd)) {
      execute_run(resolve(config_path, overrides, flag_values), out_dir, resume_path,
                  /*quiet=*/false);
      return 0;
    }
    if (app.got_subcommand(ablate_cmd))
      return execute_ablate(resolve(config_path, overrides, flag_values), out_dir, sweep,
                            sweep_values);
    if (app.got_subcommand(inspect_cmd))
      return execute_inspect(checkpoint_path, query_index, k_override);
    return execute_validate(validate_path);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
