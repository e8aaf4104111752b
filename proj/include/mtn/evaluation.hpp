#pragma once

#include "mtn/memory_bank.hpp"
#include "mtn/trainer.hpp"

#include <vector>

namespace mtn {

// Fraction of exact matches; lengths must agree and be non-empty.
double top1_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// Majority label among the k nearest exemplars of each query. Ties go to the
// label whose best-ranked neighbor has the highest similarity.
std::vector<int> mem_knn_baseline(const ExemplarMemory& mem,
                                  const std::vector<Eigen::VectorXd>& queries, int k);

// Incremental protocol with the mem. k-NN classifier: no training, the
// memory itself is the model.
RunMetrics memknn_baseline_run(const TaskStream& stream, const TrainConfig& cfg,
                               SimilarityMetric metric = SimilarityMetric::kCosine);

// Incremental protocol with a linear head on the raw feature: same losses,
// optimizer, batching and replay as the MTN run, no neighbor retrieval.
RunMetrics linear_baseline_run(const TaskStream& stream, const TrainConfig& cfg,
                               SimilarityMetric metric = SimilarityMetric::kCosine);

}  // namespace mtn
