#include "mtn/evaluation.hpp"

#include "mtn/model.hpp"

#include <map>
#include <numeric>

namespace mtn {

double top1_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw ArgumentError("top1_accuracy: " + std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(labels.size()) + " labels");
  if (predictions.empty()) throw ArgumentError("top1_accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::vector<int> mem_knn_baseline(const ExemplarMemory& mem,
                                  const std::vector<Eigen::VectorXd>& queries, int k) {
  std::vector<int> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    auto hits = mem.knn_query(q, k);
    // votes: label -> (count, best similarity of that label's top-ranked hit)
    std::map<int, std::pair<int, double>> votes;
    for (const auto& h : hits) {
      int label = mem.record(h.index).label;
      auto it = votes.find(label);
      if (it == votes.end())
        votes.emplace(label, std::make_pair(1, h.similarity));
      else
        it->second.first += 1;  // hits arrive ranked, so the first sim is the best
    }
    int best_label = -1;
    int best_count = -1;
    double best_sim = 0;
    for (const auto& [label, cs] : votes) {
      auto [count, sim] = cs;
      if (count > best_count || (count == best_count && sim > best_sim)) {
        best_label = label;
        best_count = count;
        best_sim = sim;
      }
    }
    out.push_back(best_label);
  }
  return out;
}

RunMetrics memknn_baseline_run(const TaskStream& stream, const TrainConfig& cfg,
                               SimilarityMetric metric) {
  if (stream.tasks.empty()) throw ArgumentError("memknn run: empty stream");
  ExemplarMemory mem(cfg.memory_budget, stream.dim, metric);
  RunMetrics metrics;
  for (int t = 0; t < static_cast<int>(stream.tasks.size()); ++t) {
    const auto& task = stream.tasks[t];
    std::vector<FeatureRecord> admitted = task.train;
    for (auto& r : admitted) r.task_id = t;
    mem.update_after_task(admitted, task.classes);

    std::vector<Eigen::VectorXd> queries;
    std::vector<int> labels;
    for (int i = 0; i <= t; ++i) {
      for (const auto& rec : stream.tasks[i].eval) {
        queries.push_back(rec.features);
        labels.push_back(rec.label);
      }
    }
    metrics.per_task_top1.push_back(
        top1_accuracy(mem_knn_baseline(mem, queries, cfg.k), labels));
    metrics.per_task_class_counts.push_back(static_cast<int>(task.classes.size()));
  }
  metrics.average_incremental_accuracy =
      std::accumulate(metrics.per_task_top1.begin(), metrics.per_task_top1.end(), 0.0) /
      static_cast<double>(metrics.per_task_top1.size());
  return metrics;
}

RunMetrics linear_baseline_run(const TaskStream& stream, const TrainConfig& cfg,
                               SimilarityMetric metric) {
  int capacity = 0;
  for (const auto& t : stream.tasks)
    for (int c : t.classes) capacity = std::max(capacity, c + 1);
  auto model = std::make_unique<LinearClassifier>(stream.dim, capacity, cfg.seed);
  TrainerState st(std::move(model), cfg, stream.dim, metric);
  return run_incremental(st, stream, cfg);
}

}  // namespace mtn
