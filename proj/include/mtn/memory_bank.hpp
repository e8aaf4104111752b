#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtn {

struct EmptyMemoryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A stored (feature, label) pair with its source task and a global
// insertion counter used for FIFO eviction and identity.
struct FeatureRecord {
  Eigen::VectorXd features;
  int label = 0;
  int task_id = 0;
  std::uint64_t insertion_seq = 0;
};

enum class SimilarityMetric { kCosine, kEuclidean };

struct Neighbor {
  std::size_t index;  // row in as_matrix() ordering
  double similarity;
};

// Exemplar memory under a fixed global budget M: class-balanced quotas,
// per-class FIFO rings, exact brute-force kNN over all stored records.
class ExemplarMemory {
 public:
  ExemplarMemory(std::size_t budget, int dim,
                 SimilarityMetric metric = SimilarityMetric::kCosine);

  // Admits a finished task's data. new_classes must be disjoint from classes
  // already stored; labels of new_task_data must fall inside new_classes.
  // Recomputes per-class quotas over all seen classes (floor(M/S), remainder
  // to the lowest class ids), FIFO-evicts existing classes down to quota and
  // ring-buffers each new class so its latest `quota` samples survive.
  void update_after_task(const std::vector<FeatureRecord>& new_task_data,
                         const std::vector<int>& new_classes);

  // Exact kNN, sorted by descending similarity, ties broken by lower row
  // index. Returns fewer than k results only when the memory is smaller.
  // `exclude` skips the stored record with that insertion_seq.
  std::vector<Neighbor> knn_query(const Eigen::VectorXd& q, int k,
                                  std::optional<std::uint64_t> exclude = {}) const;

  // Rows ordered by (class id, insertion_seq), both ascending.
  std::pair<Eigen::MatrixXd, std::vector<int>> as_matrix() const;

  const FeatureRecord& record(std::size_t index) const;

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  std::size_t budget() const { return budget_; }
  int dim() const { return dim_; }
  SimilarityMetric metric() const { return metric_; }
  std::vector<int> seen_classes() const;
  std::size_t class_count(int label) const;
  std::uint64_t next_insertion_seq() const { return next_seq_; }

  // Emitted for recoverable conditions (e.g. a new class with no samples).
  std::function<void(const std::string&)> warning_handler;

  // Checkpoint support: raw record access in as_matrix order.
  std::vector<FeatureRecord> all_records() const;
  void restore(std::vector<FeatureRecord> records, std::uint64_t next_seq);

 private:
  void invalidate_cache();
  void rebuild_cache() const;

  std::size_t budget_;
  int dim_;
  SimilarityMetric metric_;
  std::map<int, std::deque<FeatureRecord>> per_class_;
  std::uint64_t next_seq_ = 0;

  // Flat view, rebuilt lazily after mutations.
  mutable bool cache_valid_ = false;
  mutable Eigen::MatrixXd flat_;            // size x dim, rows L2-normalized for cosine
  mutable std::vector<const FeatureRecord*> rows_;
};

}  // namespace mtn
