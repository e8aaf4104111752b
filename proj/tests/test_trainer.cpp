#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mtn/evaluation.hpp"
#include "mtn/model.hpp"
#include "mtn/trainer.hpp"

#include <numeric>

using namespace mtn;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.dim = 8;
  spec.train_per_class = 12;
  spec.eval_per_class = 4;
  spec.cluster_spread = 0.5;
  spec.seed = 3;
  return spec;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs_per_task = 2;
  cfg.batch_new = 16;
  cfg.batch_replay = 4;
  cfg.k = 3;
  cfg.memory_budget = 24;
  cfg.seed = 5;
  cfg.optimizer.learning_rate = 0.05;
  return cfg;
}

MtnConfig small_model(const TrainConfig& cfg) {
  MtnConfig mc;
  mc.input_dim = 8;
  mc.model_dim = 16;
  mc.num_layers = 1;
  mc.num_heads = 2;
  mc.k = cfg.k;
  mc.num_classes_capacity = 4;
  return mc;
}

bool same_values(const std::vector<Eigen::MatrixXd>& a, const std::vector<Eigen::MatrixXd>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    if ((a[i].array() != b[i].array()).any()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config validation rejects non-positive fields") {
  TrainConfig cfg = small_config();
  cfg.epochs_per_task = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = small_config();
  cfg.batch_replay = -1;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = small_config();
  cfg.memory_budget = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = small_config();
  cfg.distill_temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("zero learning rate leaves every parameter bit-identical") {
  TrainConfig cfg = small_config();
  cfg.optimizer.learning_rate = 0.0;
  TaskStream stream = generate_synthetic(small_spec(), 1);
  TrainerState st(std::make_unique<MtnModel>(small_model(cfg), cfg.seed), cfg, stream.dim);
  auto before = st.model->parameter_values();
  train_task(st, stream.tasks[0], partition_up_to(stream, 0), cfg);
  CHECK(same_values(before, st.model->parameter_values()));
}

TEST_CASE("first task needs no snapshot and the mean loss decreases") {
  TrainConfig cfg = small_config();
  cfg.epochs_per_task = 8;
  TaskStream stream = generate_synthetic(small_spec(), 1);
  TrainerState st(std::make_unique<MtnModel>(small_model(cfg), cfg.seed), cfg, stream.dim);
  std::vector<double> losses;
  train_task(st, stream.tasks[0], partition_up_to(stream, 0), cfg,
             [&](int, double mean_loss) { losses.push_back(mean_loss); });
  REQUIRE(losses.size() == 8);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("training beyond the first task requires a snapshot") {
  TrainConfig cfg = small_config();
  TaskStream stream = generate_synthetic(small_spec(), 1);
  TrainerState st(std::make_unique<MtnModel>(small_model(cfg), cfg.seed), cfg, stream.dim);
  st.memory.update_after_task(stream.tasks[0].train, stream.tasks[0].classes);
  CHECK_THROWS_AS(train_task(st, stream.tasks[1], partition_up_to(stream, 1), cfg),
                  ContractError);
}

TEST_CASE("train_task never mutates the memory") {
  TrainConfig cfg = small_config();
  TaskStream stream = generate_synthetic(small_spec(), 1);
  TrainerState st(std::make_unique<MtnModel>(small_model(cfg), cfg.seed), cfg, stream.dim);
  train_task(st, stream.tasks[0], partition_up_to(stream, 0), cfg);
  CHECK(st.memory.empty());
  st.memory.update_after_task(stream.tasks[0].train, stream.tasks[0].classes);
  st.snapshot = st.model->clone();
  auto records_before = st.memory.all_records();
  train_task(st, stream.tasks[1], partition_up_to(stream, 1), cfg);
  auto records_after = st.memory.all_records();
  REQUIRE(records_before.size() == records_after.size());
  for (std::size_t i = 0; i < records_before.size(); ++i) {
    CHECK(records_before[i].insertion_seq == records_after[i].insertion_seq);
    CHECK((records_before[i].features.array() == records_after[i].features.array()).all());
  }
}

TEST_CASE("the snapshot stays bitwise fixed while the live model trains") {
  TrainConfig cfg = small_config();
  TaskStream stream = generate_synthetic(small_spec(), 1);
  TrainerState st(std::make_unique<MtnModel>(small_model(cfg), cfg.seed), cfg, stream.dim);
  train_task(st, stream.tasks[0], partition_up_to(stream, 0), cfg);
  st.memory.update_after_task(stream.tasks[0].train, stream.tasks[0].classes);
  st.snapshot = st.model->clone();
  auto end_of_task1 = st.model->parameter_values();
  CHECK(same_values(end_of_task1, st.snapshot->parameter_values()));
  train_task(st, stream.tasks[1], partition_up_to(stream, 1), cfg);
  CHECK(same_values(end_of_task1, st.snapshot->parameter_values()));
  CHECK_FALSE(same_values(end_of_task1, st.model->parameter_values()));
}

TEST_CASE("identical seeds give identical metrics and checkpoint bytes") {
  TrainConfig cfg = small_config();
  TaskStream stream = generate_synthetic(small_spec(), 1);
  std::string bytes[2];
  std::vector<double> top1[2];
  for (int r = 0; r < 2; ++r) {
    TrainerState st(std::make_unique<MtnModel>(small_model(cfg), cfg.seed), cfg, stream.dim);
    RunMetrics m = run_incremental(st, stream, cfg);
    top1[r] = m.per_task_top1;
    bytes[r] = checkpoint_to_bytes(make_checkpoint(st, "unit", stream.content_hash()));
  }
  CHECK(top1[0] == top1[1]);
  CHECK(bytes[0] == bytes[1]);
}

TEST_CASE("metrics book-keeping: mean, counts, budget") {
  TrainConfig cfg = small_config();
  TaskStream stream = generate_synthetic(small_spec(), 1);
  TrainerState st(std::make_unique<MtnModel>(small_model(cfg), cfg.seed), cfg, stream.dim);
  RunMetrics m = run_incremental(st, stream, cfg);
  REQUIRE(m.per_task_top1.size() == stream.tasks.size());
  double mean = std::accumulate(m.per_task_top1.begin(), m.per_task_top1.end(), 0.0) /
                static_cast<double>(m.per_task_top1.size());
  CHECK(m.average_incremental_accuracy == doctest::Approx(mean).epsilon(1e-12));
  CHECK(m.per_task_class_counts == std::vector<int>{2, 1, 1});
  CHECK(st.memory.size() <= cfg.memory_budget);
}

TEST_CASE("resume from a mid-run checkpoint matches uninterrupted training bitwise") {
  TrainConfig cfg = small_config();
  TaskStream stream = generate_synthetic(small_spec(), 1);
  MtnConfig mc = small_model(cfg);

  TrainerState full(std::make_unique<MtnModel>(mc, cfg.seed), cfg, stream.dim);
  std::string mid_bytes;
  run_incremental(full, stream, cfg,
                  {.on_task_end = [&](int t, const TrainerState& s) {
                    if (t == 0) mid_bytes = checkpoint_to_bytes(make_checkpoint(s, "unit", 0));
                  }});
  std::string full_bytes = checkpoint_to_bytes(make_checkpoint(full, "unit", 0));

  Checkpoint mid = checkpoint_from_bytes(mid_bytes);
  TrainerState resumed = restore_trainer(mid, cfg, std::make_unique<MtnModel>(mc, cfg.seed + 99));
  CHECK(resumed.completed_tasks == 1);
  RunMetrics m = run_incremental(resumed, stream, cfg);
  CHECK(m.per_task_top1 == full.metrics.per_task_top1);
  CHECK(checkpoint_to_bytes(make_checkpoint(resumed, "unit", 0)) == full_bytes);
}

TEST_CASE("restore rejects a model kind mismatch") {
  TrainConfig cfg = small_config();
  TaskStream stream = generate_synthetic(small_spec(), 1);
  TrainerState st(std::make_unique<MtnModel>(small_model(cfg), cfg.seed), cfg, stream.dim);
  run_incremental(st, stream, cfg);
  Checkpoint ckpt = make_checkpoint(st, "unit", 0);
  CHECK_THROWS_AS(restore_trainer(ckpt, cfg, std::make_unique<LinearClassifier>(8, 4, 0)),
                  ArgumentError);
}

TEST_CASE("degenerate inputs are rejected") {
  TrainConfig cfg = small_config();
  TaskStream stream = generate_synthetic(small_spec(), 1);
  TrainerState st(std::make_unique<MtnModel>(small_model(cfg), cfg.seed), cfg, stream.dim);
  CHECK_THROWS_AS(run_incremental(st, TaskStream{}, cfg), ArgumentError);
  TaskStream::Task empty_task;
  empty_task.classes = {0, 1};
  CHECK_THROWS_AS(train_task(st, empty_task, partition_up_to(stream, 0), cfg), ArgumentError);
}

TEST_CASE("overlapping task class sets are rejected") {
  TaskStream stream = generate_synthetic(small_spec(), 1);
  stream.tasks[1].classes = stream.tasks[0].classes;
  CHECK_THROWS_AS(partition_up_to(stream, 1), ArgumentError);
}
