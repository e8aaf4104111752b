#include "mtn/optimizer.hpp"

namespace mtn {

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, SgdOptions opts)
    : opts_(opts), params_(std::move(params)) {
  if (opts_.learning_rate < 0) throw ArgumentError("sgd: learning rate must be non-negative");
  if (opts_.momentum < 0 || opts_.momentum >= 1)
    throw ArgumentError("sgd: momentum must be in [0, 1)");
  if (opts_.weight_decay < 0) throw ArgumentError("sgd: weight decay must be non-negative");
  velocity_.reserve(params_.size());
  for (const auto& p : params_)
    velocity_.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
}

void SgdOptimizer::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad())
      throw ContractError("sgd: parameter " + std::to_string(i) + " has no gradient");
    velocity_[i] = opts_.momentum * velocity_[i] + (p.grad() + opts_.weight_decay * p.value());
    p.mutable_value() -= opts_.learning_rate * velocity_[i];
    p.clear_grad();
  }
}

void SgdOptimizer::set_velocity(std::vector<Eigen::MatrixXd> v) {
  if (v.size() != params_.size()) throw ArgumentError("sgd: velocity count mismatch");
  for (size_t i = 0; i < v.size(); ++i)
    if (v[i].rows() != params_[i].rows() || v[i].cols() != params_[i].cols())
      throw ArgumentError("sgd: velocity shape mismatch at " + std::to_string(i));
  velocity_ = std::move(v);
}

void SgdOptimizer::rebind(std::vector<Tensor> params) {
  if (params.size() != params_.size()) throw ArgumentError("sgd: parameter count mismatch");
  params_ = std::move(params);
}

}  // namespace mtn
