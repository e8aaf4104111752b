#pragma once

#include "mtn/tensor.hpp"

#include <vector>

namespace mtn {

struct SgdOptions {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// SGD with momentum and coupled weight decay:
//   v <- momentum * v + (grad + weight_decay * param)
//   param <- param - learning_rate * v
// Gradients are cleared after each step.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, SgdOptions opts);

  void step();

  const SgdOptions& options() const { return opts_; }
  const std::vector<Eigen::MatrixXd>& velocity() const { return velocity_; }
  void set_velocity(std::vector<Eigen::MatrixXd> v);
  // Swap in a new parameter set of identical shapes (checkpoint restore).
  void rebind(std::vector<Tensor> params);

 private:
  SgdOptions opts_;
  std::vector<Tensor> params_;
  std::vector<Eigen::MatrixXd> velocity_;
};

}  // namespace mtn
