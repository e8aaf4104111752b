#pragma once

#include "mtn/tensor.hpp"

#include <memory>
#include <set>
#include <string>
#include <vector>

namespace mtn {

// Common surface the incremental trainer needs from a classifier: a
// recorded-graph forward for training and enough introspection to snapshot,
// clone, and checkpoint it.
class IncrementalClassifier {
 public:
  virtual ~IncrementalClassifier() = default;

  // 1xC logits over the full class capacity, as a recorded graph rooted at
  // the model parameters. `neighbors` is ignored by models that do not use
  // retrieval.
  virtual Tensor training_logits(const Eigen::VectorXd& q,
                                 const std::vector<Eigen::VectorXd>& neighbors) const = 0;

  virtual bool uses_neighbors() const = 0;
  virtual int num_classes_capacity() const = 0;
  virtual int input_dim() const = 0;
  virtual std::string kind() const = 0;

  virtual std::vector<Tensor> parameters() = 0;
  virtual std::unique_ptr<IncrementalClassifier> clone() const = 0;

  virtual std::vector<Eigen::MatrixXd> parameter_values() const = 0;
  virtual void set_parameter_values(const std::vector<Eigen::MatrixXd>& values) = 0;

  void mark_trained(const std::vector<int>& classes) {
    trained_classes_.insert(classes.begin(), classes.end());
  }
  const std::set<int>& trained_classes() const { return trained_classes_; }
  void set_trained_classes(std::set<int> classes) { trained_classes_ = std::move(classes); }

  // Plain inference: evaluates training_logits and drops the graph.
  Eigen::VectorXd infer_logits(const Eigen::VectorXd& q,
                               const std::vector<Eigen::VectorXd>& neighbors) const {
    return training_logits(q, neighbors).value().row(0).transpose();
  }

  // Argmax over the classes seen so far; logits of unseen classes never
  // influence the prediction.
  int predict(const Eigen::VectorXd& q, const std::vector<Eigen::VectorXd>& neighbors) const;

 protected:
  std::set<int> trained_classes_;
};

}  // namespace mtn
