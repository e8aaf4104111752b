#pragma once

#include "mtn/classifier.hpp"
#include "mtn/data_io.hpp"
#include "mtn/losses.hpp"
#include "mtn/memory_bank.hpp"
#include "mtn/optimizer.hpp"

#include <functional>
#include <memory>
#include <random>

namespace mtn {

struct TrainConfig {
  int epochs_per_task = 10;
  int batch_new = 128;
  int batch_replay = 32;
  SgdOptions optimizer{};
  int k = 10;
  std::size_t memory_budget = 2000;
  std::uint64_t seed = 0;
  double distill_temperature = 1.0;

  void validate() const;
};

struct RunMetrics {
  std::vector<double> per_task_top1;
  double average_incremental_accuracy = 0.0;
  std::vector<int> per_task_class_counts;
};

// Everything that survives between tasks (and across a checkpoint/resume
// boundary): the live model, the frozen previous-task snapshot, the exemplar
// memory, optimizer velocity, the RNG stream, and metrics accumulated so far.
struct TrainerState {
  std::unique_ptr<IncrementalClassifier> model;
  std::unique_ptr<IncrementalClassifier> snapshot;  // null before task 2
  ExemplarMemory memory;
  std::unique_ptr<SgdOptimizer> optimizer;
  std::mt19937_64 rng;
  int completed_tasks = 0;
  RunMetrics metrics;

  TrainerState(std::unique_ptr<IncrementalClassifier> m, const TrainConfig& cfg, int dim,
               SimilarityMetric metric = SimilarityMetric::kCosine);
};

struct RunHooks {
  std::function<void(int task, int epoch, double mean_loss)> on_epoch;
  std::function<void(int task, const TrainerState&)> on_task_end;
};

// One task of the rehearsal loop: shuffled current-task batches, replayed
// exemplars appended from task 2 on, neighbors retrieved from the memory as
// frozen at the start of the task (in-batch neighbors with self-exclusion
// for the first task), combined loss, one SGD step per batch.
void train_task(TrainerState& st, const TaskStream::Task& task, const TaskPartition& part,
                const TrainConfig& cfg,
                const std::function<void(int epoch, double mean_loss)>& on_epoch = {});

// Evaluates top-1 over the eval splits of all tasks up to and including
// `upto` (inclusive), retrieving neighbors from the current memory.
double evaluate_seen(const TrainerState& st, const TaskStream& stream, int upto, int k);

// The full incremental protocol over the stream. Resumes after
// st.completed_tasks when the state was restored from a checkpoint.
RunMetrics run_incremental(TrainerState& st, const TaskStream& stream, const TrainConfig& cfg,
                           const RunHooks& hooks = {});

TaskPartition partition_up_to(const TaskStream& stream, int current_task);

// Checkpoint glue. restore_trainer fills a freshly constructed model (of the
// checkpointed kind and architecture) with the saved state.
Checkpoint make_checkpoint(const TrainerState& st, const std::string& config_text,
                           std::uint64_t stream_hash);
TrainerState restore_trainer(const Checkpoint& ckpt, const TrainConfig& cfg,
                             std::unique_ptr<IncrementalClassifier> fresh_model,
                             SimilarityMetric metric = SimilarityMetric::kCosine);

}  // namespace mtn
