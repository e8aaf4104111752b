#include "mtn/memory_bank.hpp"

#include "mtn/tensor.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>
#include <set>

namespace mtn {

ExemplarMemory::ExemplarMemory(std::size_t budget, int dim, SimilarityMetric metric)
    : budget_(budget), dim_(dim), metric_(metric) {
  if (budget == 0) throw ArgumentError("memory: budget must be positive");
  if (dim <= 0) throw ArgumentError("memory: dim must be positive");
  warning_handler = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
}

std::size_t ExemplarMemory::size() const {
  std::size_t n = 0;
  for (const auto& [label, ring] : per_class_) n += ring.size();
  return n;
}

std::vector<int> ExemplarMemory::seen_classes() const {
  std::vector<int> out;
  out.reserve(per_class_.size());
  for (const auto& [label, ring] : per_class_) out.push_back(label);
  return out;
}

std::size_t ExemplarMemory::class_count(int label) const {
  auto it = per_class_.find(label);
  return it == per_class_.end() ? 0 : it->second.size();
}

void ExemplarMemory::update_after_task(const std::vector<FeatureRecord>& new_task_data,
                                       const std::vector<int>& new_classes) {
  std::set<int> incoming(new_classes.begin(), new_classes.end());
  for (int c : incoming)
    if (per_class_.count(c))
      throw ArgumentError("memory: class " + std::to_string(c) + " already stored");
  for (const auto& rec : new_task_data) {
    if (!incoming.count(rec.label))
      throw ArgumentError("memory: record label " + std::to_string(rec.label) +
                          " not in the announced class set");
    if (rec.features.size() != dim_)
      throw DimensionError("memory: record has dim " + std::to_string(rec.features.size()) +
                           ", expected " + std::to_string(dim_));
  }

  // Quotas over all seen classes: floor(M/S) each, remainder r to the r
  // lowest class ids.
  std::vector<int> seen = seen_classes();
  seen.insert(seen.end(), incoming.begin(), incoming.end());
  std::sort(seen.begin(), seen.end());
  const std::size_t s = seen.size();
  const std::size_t base = budget_ / s;
  const std::size_t rem = budget_ % s;
  std::map<int, std::size_t> quota;
  for (std::size_t i = 0; i < s; ++i) quota[seen[i]] = base + (i < rem ? 1 : 0);

  // Existing classes: FIFO-evict the oldest down to quota.
  for (auto& [label, ring] : per_class_)
    while (ring.size() > quota[label]) ring.pop_front();

  // New classes: stream samples through a bounded ring in dataset order, so
  // the latest `quota` samples of each class survive.
  for (int c : incoming) per_class_[c];  // announce even if empty
  for (const auto& rec : new_task_data) {
    auto& ring = per_class_[rec.label];
    FeatureRecord stored = rec;
    stored.insertion_seq = next_seq_++;
    ring.push_back(std::move(stored));
    if (ring.size() > quota[rec.label]) ring.pop_front();
  }
  for (int c : incoming)
    if (per_class_[c].empty() && warning_handler)
      warning_handler("memory: new class " + std::to_string(c) + " has no samples");

  invalidate_cache();
}

void ExemplarMemory::invalidate_cache() { cache_valid_ = false; }

void ExemplarMemory::rebuild_cache() const {
  rows_.clear();
  for (const auto& [label, ring] : per_class_)
    for (const auto& rec : ring) rows_.push_back(&rec);
  flat_.resize(static_cast<Eigen::Index>(rows_.size()), dim_);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    Eigen::VectorXd v = rows_[i]->features;
    if (metric_ == SimilarityMetric::kCosine) {
      double n = v.norm();
      if (n > 0) v /= n;
    }
    flat_.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  cache_valid_ = true;
}

std::vector<Neighbor> ExemplarMemory::knn_query(const Eigen::VectorXd& q, int k,
                                                std::optional<std::uint64_t> exclude) const {
  if (k <= 0) throw ArgumentError("knn_query: k must be positive");
  if (q.size() != dim_)
    throw DimensionError("knn_query: query has dim " + std::to_string(q.size()) +
                         ", expected " + std::to_string(dim_));
  if (!cache_valid_) rebuild_cache();
  if (rows_.empty()) throw EmptyMemoryError("knn_query: memory is empty");

  Eigen::VectorXd sims;
  if (metric_ == SimilarityMetric::kCosine) {
    Eigen::VectorXd qn = q;
    double n = qn.norm();
    if (n > 0) qn /= n;
    sims = flat_ * qn;
  } else {
    sims = -(flat_.rowwise() - q.transpose()).rowwise().norm();
  }

  std::vector<std::size_t> idx;
  idx.reserve(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (exclude && rows_[i]->insertion_seq == *exclude) continue;
    idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    double sa = sims(static_cast<Eigen::Index>(a));
    double sb = sims(static_cast<Eigen::Index>(b));
    if (sa != sb) return sa > sb;
    return a < b;
  });
  if (idx.size() > static_cast<std::size_t>(k)) idx.resize(static_cast<std::size_t>(k));

  std::vector<Neighbor> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back({i, sims(static_cast<Eigen::Index>(i))});
  return out;
}

std::pair<Eigen::MatrixXd, std::vector<int>> ExemplarMemory::as_matrix() const {
  if (!cache_valid_) rebuild_cache();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows_.size()), dim_);
  std::vector<int> labels(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = rows_[i]->features.transpose();
    labels[i] = rows_[i]->label;
  }
  return {std::move(m), std::move(labels)};
}

const FeatureRecord& ExemplarMemory::record(std::size_t index) const {
  if (!cache_valid_) rebuild_cache();
  if (index >= rows_.size()) throw ArgumentError("memory: record index out of range");
  return *rows_[index];
}

std::vector<FeatureRecord> ExemplarMemory::all_records() const {
  if (!cache_valid_) rebuild_cache();
  std::vector<FeatureRecord> out;
  out.reserve(rows_.size());
  for (const auto* r : rows_) out.push_back(*r);
  return out;
}

void ExemplarMemory::restore(std::vector<FeatureRecord> records, std::uint64_t next_seq) {
  per_class_.clear();
  for (auto& rec : records) {
    if (rec.features.size() != dim_) throw DimensionError("memory restore: dim mismatch");
    per_class_[rec.label].push_back(std::move(rec));
  }
  for (auto& [label, ring] : per_class_)
    std::sort(ring.begin(), ring.end(), [](const FeatureRecord& a, const FeatureRecord& b) {
      return a.insertion_seq < b.insertion_seq;
    });
  next_seq_ = next_seq;
  invalidate_cache();
}

}  // namespace mtn
