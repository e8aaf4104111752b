#pragma once

#include "mtn/tensor.hpp"

#include <optional>
#include <vector>

namespace mtn {

// Ordered partition of the seen classes into tasks. `current_task` indexes
// the task being trained (0-based).
struct TaskPartition {
  std::vector<std::vector<int>> task_classes;
  int current_task = 0;

  void validate() const;  // disjointness, index range
  const std::vector<int>& current_classes() const { return task_classes[current_task]; }
  std::vector<int> old_classes() const;  // tasks 0 .. current_task-1, in order
  bool is_current(int y) const;
  bool is_old(int y) const;
};

// Separated-softmax classification loss: the softmax (and therefore the
// gradient) is confined to the partition that contains the label. Logits is
// a 1xC row over the full class-id range; class ids index columns.
Tensor separated_softmax_loss(const Tensor& logits, int y, const TaskPartition& part);

// Task-wise distillation: per previous task i, KL between the frozen
// snapshot's within-task softmax and the live model's, both at the given
// temperature. Returns exactly 0 for the first task.
Tensor task_distillation_loss(const Tensor& logits, const Eigen::VectorXd& prev_logits,
                              const TaskPartition& part, double temperature = 1.0);

// Unweighted sum of the two terms. prev_logits may be absent only for the
// first task.
Tensor total_loss(const Tensor& logits, const std::optional<Eigen::VectorXd>& prev_logits,
                  int y, const TaskPartition& part, double temperature = 1.0);

}  // namespace mtn
