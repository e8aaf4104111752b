#include "mtn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace mtn {

void TrainConfig::validate() const {
  if (epochs_per_task <= 0) throw ArgumentError("train config: epochs_per_task must be positive");
  if (batch_new <= 0) throw ArgumentError("train config: batch_new must be positive");
  if (batch_replay <= 0) throw ArgumentError("train config: batch_replay must be positive");
  if (k <= 0) throw ArgumentError("train config: k must be positive");
  if (memory_budget == 0) throw ArgumentError("train config: memory_budget must be positive");
  if (distill_temperature <= 0)
    throw ArgumentError("train config: distill_temperature must be positive");
}

TrainerState::TrainerState(std::unique_ptr<IncrementalClassifier> m, const TrainConfig& cfg,
                           int dim, SimilarityMetric metric)
    : model(std::move(m)),
      memory(cfg.memory_budget, dim, metric),
      optimizer(std::make_unique<SgdOptimizer>(model->parameters(), cfg.optimizer)),
      rng(cfg.seed) {
  cfg.validate();
}

TaskPartition partition_up_to(const TaskStream& stream, int current_task) {
  TaskPartition part;
  for (int i = 0; i <= current_task; ++i) part.task_classes.push_back(stream.tasks[i].classes);
  part.current_task = current_task;
  part.validate();
  return part;
}

namespace {

struct TrainSample {
  const FeatureRecord* record;
  std::optional<std::uint64_t> exclude;  // stored identity of a replayed exemplar
};

std::vector<Eigen::VectorXd> retrieve_neighbors(const ExemplarMemory& mem,
                                                const Eigen::VectorXd& q, int k,
                                                std::optional<std::uint64_t> exclude) {
  auto hits = mem.knn_query(q, k, exclude);
  std::vector<Eigen::VectorXd> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(mem.record(h.index).features);
  return out;
}

}  // namespace

void train_task(TrainerState& st, const TaskStream::Task& task, const TaskPartition& part,
                const TrainConfig& cfg,
                const std::function<void(int epoch, double mean_loss)>& on_epoch) {
  cfg.validate();
  if (task.train.empty()) throw ArgumentError("train_task: empty task data");
  const int t = part.current_task;
  const bool has_replay = t > 0;
  if (has_replay && !st.snapshot)
    throw ContractError("train_task: snapshot required beyond the first task");
  const bool needs_neighbors = st.model->uses_neighbors();

  // Memory is frozen for the whole task, so each query's neighbor list is
  // stable; cache it across epochs.
  std::vector<std::vector<Eigen::VectorXd>> current_neighbors;
  std::unordered_map<std::uint64_t, std::vector<Eigen::VectorXd>> replay_neighbors;
  if (needs_neighbors && has_replay) {
    current_neighbors.resize(task.train.size());
    for (std::size_t i = 0; i < task.train.size(); ++i)
      current_neighbors[i] = retrieve_neighbors(st.memory, task.train[i].features, cfg.k, {});
  }

  std::vector<std::size_t> order(task.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
    std::shuffle(order.begin(), order.end(), st.rng);
    double loss_sum = 0.0;
    std::size_t sample_count = 0;

    for (std::size_t at = 0; at < order.size(); at += cfg.batch_new) {
      const std::size_t chunk = std::min<std::size_t>(cfg.batch_new, order.size() - at);

      std::vector<TrainSample> batch;
      std::vector<std::size_t> batch_current_idx;  // index into task.train per batch slot
      for (std::size_t i = 0; i < chunk; ++i) {
        batch.push_back({&task.train[order[at + i]], {}});
        batch_current_idx.push_back(order[at + i]);
      }

      if (has_replay) {
        // Partial chunks keep the new:replay ratio, with at least one
        // replayed sample.
        std::size_t replay_count =
            chunk == static_cast<std::size_t>(cfg.batch_new)
                ? static_cast<std::size_t>(cfg.batch_replay)
                : std::max<std::size_t>(
                      1, static_cast<std::size_t>(std::llround(
                             static_cast<double>(chunk) * cfg.batch_replay / cfg.batch_new)));
        std::uniform_int_distribution<std::size_t> pick(0, st.memory.size() - 1);
        for (std::size_t i = 0; i < replay_count; ++i) {
          const FeatureRecord& rec = st.memory.record(pick(st.rng));
          batch.push_back({&rec, rec.insertion_seq});
        }
      }

      // Neighbor context per batch slot.
      std::vector<std::vector<Eigen::VectorXd>> neighbors(batch.size());
      if (needs_neighbors) {
        if (has_replay) {
          for (std::size_t i = 0; i < batch.size(); ++i) {
            if (i < chunk) {
              neighbors[i] = current_neighbors[batch_current_idx[i]];
            } else {
              auto seq = *batch[i].exclude;
              auto it = replay_neighbors.find(seq);
              if (it == replay_neighbors.end())
                it = replay_neighbors
                         .emplace(seq, retrieve_neighbors(st.memory, batch[i].record->features,
                                                          cfg.k, seq))
                         .first;
              neighbors[i] = it->second;
            }
          }
        } else {
          // First task: the memory is still empty, so neighbors come from a
          // throwaway memory over the batch's own features, self excluded.
          std::vector<FeatureRecord> tmp_records;
          tmp_records.reserve(batch.size());
          for (std::size_t i = 0; i < batch.size(); ++i) {
            FeatureRecord r = *batch[i].record;
            r.insertion_seq = i;
            tmp_records.push_back(std::move(r));
          }
          ExemplarMemory tmp(batch.size(), st.memory.dim(), st.memory.metric());
          tmp.restore(std::move(tmp_records), batch.size());
          for (std::size_t i = 0; i < batch.size(); ++i) {
            if (batch.size() == 1) continue;  // a single sample has no peers
            neighbors[i] =
                retrieve_neighbors(tmp, batch[i].record->features, cfg.k, std::uint64_t(i));
          }
        }
      }

      Tensor batch_loss = Tensor::scalar_constant(0.0);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const FeatureRecord& rec = *batch[i].record;
        Tensor logits = st.model->training_logits(rec.features, neighbors[i]);
        std::optional<Eigen::VectorXd> prev;
        if (has_replay) prev = st.snapshot->infer_logits(rec.features, neighbors[i]);
        batch_loss = add(batch_loss,
                         total_loss(logits, prev, rec.label, part, cfg.distill_temperature));
      }
      Tensor mean_loss = scale(batch_loss, 1.0 / static_cast<double>(batch.size()));
      backward(mean_loss);
      st.optimizer->step();

      loss_sum += mean_loss.item() * static_cast<double>(batch.size());
      sample_count += batch.size();
    }

    if (on_epoch) on_epoch(epoch, loss_sum / static_cast<double>(sample_count));
  }

  st.model->mark_trained(part.current_classes());
}

double evaluate_seen(const TrainerState& st, const TaskStream& stream, int upto, int k) {
  std::size_t correct = 0, total = 0;
  const bool needs_neighbors = st.model->uses_neighbors();
  for (int t = 0; t <= upto; ++t) {
    for (const auto& rec : stream.tasks[t].eval) {
      std::vector<Eigen::VectorXd> neighbors;
      if (needs_neighbors) neighbors = retrieve_neighbors(st.memory, rec.features, k, {});
      if (st.model->predict(rec.features, neighbors) == rec.label) ++correct;
      ++total;
    }
  }
  if (total == 0) throw ArgumentError("evaluate_seen: no eval records");
  return static_cast<double>(correct) / static_cast<double>(total);
}

RunMetrics run_incremental(TrainerState& st, const TaskStream& stream, const TrainConfig& cfg,
                           const RunHooks& hooks) {
  if (stream.tasks.empty()) throw ArgumentError("run_incremental: empty stream");
  partition_up_to(stream, static_cast<int>(stream.tasks.size()) - 1);  // disjointness check

  for (int t = st.completed_tasks; t < static_cast<int>(stream.tasks.size()); ++t) {
    const auto& task = stream.tasks[t];
    TaskPartition part = partition_up_to(stream, t);

    train_task(st, task, part, cfg, [&](int epoch, double mean_loss) {
      if (hooks.on_epoch) hooks.on_epoch(t, epoch, mean_loss);
    });

    std::vector<FeatureRecord> admitted = task.train;
    for (auto& r : admitted) r.task_id = t;
    st.memory.update_after_task(admitted, task.classes);

    st.metrics.per_task_top1.push_back(evaluate_seen(st, stream, t, cfg.k));
    st.metrics.per_task_class_counts.push_back(static_cast<int>(task.classes.size()));
    st.snapshot = st.model->clone();
    st.completed_tasks = t + 1;
    if (hooks.on_task_end) hooks.on_task_end(t, st);
  }

  st.metrics.average_incremental_accuracy =
      std::accumulate(st.metrics.per_task_top1.begin(), st.metrics.per_task_top1.end(), 0.0) /
      static_cast<double>(st.metrics.per_task_top1.size());
  return st.metrics;
}

Checkpoint make_checkpoint(const TrainerState& st, const std::string& config_text,
                           std::uint64_t stream_hash) {
  Checkpoint ckpt;
  ckpt.config_text = config_text;
  ckpt.stream_hash = stream_hash;
  ckpt.model_kind = st.model->kind();
  ckpt.model_params = st.model->parameter_values();
  ckpt.trained_classes.assign(st.model->trained_classes().begin(),
                              st.model->trained_classes().end());
  if (st.snapshot) {
    ckpt.has_snapshot = true;
    ckpt.snapshot_params = st.snapshot->parameter_values();
  }
  ckpt.optimizer_velocity = st.optimizer->velocity();
  ckpt.memory_records = st.memory.all_records();
  ckpt.memory_next_seq = st.memory.next_insertion_seq();
  std::ostringstream rng_text;
  rng_text << st.rng;
  ckpt.rng_state = rng_text.str();
  ckpt.completed_tasks = st.completed_tasks;
  ckpt.per_task_top1 = st.metrics.per_task_top1;
  ckpt.per_task_class_counts = st.metrics.per_task_class_counts;
  return ckpt;
}

TrainerState restore_trainer(const Checkpoint& ckpt, const TrainConfig& cfg,
                             std::unique_ptr<IncrementalClassifier> fresh_model,
                             SimilarityMetric metric) {
  if (fresh_model->kind() != ckpt.model_kind)
    throw ArgumentError("restore: model kind mismatch, checkpoint holds '" + ckpt.model_kind +
                        "'");
  const int dim = fresh_model->input_dim();
  TrainerState st(std::move(fresh_model), cfg, dim, metric);
  st.model->set_parameter_values(ckpt.model_params);
  st.model->set_trained_classes(
      std::set<int>(ckpt.trained_classes.begin(), ckpt.trained_classes.end()));
  if (ckpt.has_snapshot) {
    st.snapshot = st.model->clone();
    st.snapshot->set_parameter_values(ckpt.snapshot_params);
  }
  st.optimizer->set_velocity(ckpt.optimizer_velocity);
  st.memory.restore(ckpt.memory_records, ckpt.memory_next_seq);
  std::istringstream rng_text(ckpt.rng_state);
  rng_text >> st.rng;
  if (!rng_text) throw IoError("restore: malformed RNG state");
  st.completed_tasks = ckpt.completed_tasks;
  st.metrics.per_task_top1 = ckpt.per_task_top1;
  st.metrics.per_task_class_counts = ckpt.per_task_class_counts;
  return st;
}

}  // namespace mtn
