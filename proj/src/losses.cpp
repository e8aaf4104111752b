#include "mtn/losses.hpp"

#include <algorithm>
#include <set>

namespace mtn {

void TaskPartition::validate() const {
  if (task_classes.empty()) throw ArgumentError("partition: no tasks");
  if (current_task < 0 || current_task >= static_cast<int>(task_classes.size()))
    throw ArgumentError("partition: current_task out of range");
  std::set<int> seen;
  for (const auto& cls : task_classes)
    for (int c : cls)
      if (!seen.insert(c).second)
        throw ArgumentError("partition: class " + std::to_string(c) + " appears twice");
}

std::vector<int> TaskPartition::old_classes() const {
  std::vector<int> out;
  for (int i = 0; i < current_task; ++i)
    out.insert(out.end(), task_classes[i].begin(), task_classes[i].end());
  return out;
}

bool TaskPartition::is_current(int y) const {
  const auto& cls = task_classes[current_task];
  return std::find(cls.begin(), cls.end(), y) != cls.end();
}

bool TaskPartition::is_old(int y) const {
  for (int i = 0; i < current_task; ++i) {
    const auto& cls = task_classes[i];
    if (std::find(cls.begin(), cls.end(), y) != cls.end()) return true;
  }
  return false;
}

namespace {

int index_in(const std::vector<int>& subset, int y) {
  auto it = std::find(subset.begin(), subset.end(), y);
  return it == subset.end() ? -1 : static_cast<int>(it - subset.begin());
}

void check_logits_cover(const Tensor& logits, const std::vector<int>& classes) {
  for (int c : classes)
    if (c < 0 || c >= logits.cols())
      throw DimensionError("loss: logits do not cover class " + std::to_string(c));
}

}  // namespace

Tensor separated_softmax_loss(const Tensor& logits, int y, const TaskPartition& part) {
  if (logits.rows() != 1) throw DimensionError("loss: logits must be a 1xC row");
  std::vector<int> subset;
  if (part.is_current(y)) {
    subset = part.current_classes();
  } else if (part.is_old(y)) {
    subset = part.old_classes();
  } else {
    throw ArgumentError("loss: label " + std::to_string(y) + " is not a seen class");
  }
  check_logits_cover(logits, subset);
  Tensor z_sub = gather_cols(logits, subset);
  Tensor p = softmax(z_sub);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(subset.size()));
  onehot(0, index_in(subset, y)) = 1.0;
  return kl_divergence(Tensor::constant(std::move(onehot)), p);
}

Tensor task_distillation_loss(const Tensor& logits, const Eigen::VectorXd& prev_logits,
                              const TaskPartition& part, double temperature) {
  if (temperature <= 0) throw ArgumentError("loss: temperature must be positive");
  if (part.current_task == 0) return Tensor::scalar_constant(0.0);
  if (logits.rows() != 1) throw DimensionError("loss: logits must be a 1xC row");
  Tensor acc = Tensor::scalar_constant(0.0);
  for (int i = 0; i < part.current_task; ++i) {
    const auto& cls = part.task_classes[i];
    if (cls.empty()) continue;
    check_logits_cover(logits, cls);
    Eigen::VectorXd zp(cls.size());
    for (size_t j = 0; j < cls.size(); ++j) {
      if (cls[j] >= prev_logits.size())
        throw DimensionError("loss: snapshot logits do not cover class " +
                             std::to_string(cls[j]));
      zp(static_cast<Eigen::Index>(j)) = prev_logits(cls[j]);
    }
    Eigen::MatrixXd p_prev = softmax_values(zp, temperature).transpose();
    Tensor q = softmax(gather_cols(logits, cls), temperature);
    acc = add(acc, kl_divergence(Tensor::constant(std::move(p_prev)), q));
  }
  return acc;
}

Tensor total_loss(const Tensor& logits, const std::optional<Eigen::VectorXd>& prev_logits,
                  int y, const TaskPartition& part, double temperature) {
  Tensor ss = separated_softmax_loss(logits, y, part);
  if (part.current_task == 0) return ss;
  if (!prev_logits) throw ContractError("loss: snapshot logits required beyond the first task");
  return add(ss, task_distillation_loss(logits, *prev_logits, part, temperature));
}

}  // namespace mtn
