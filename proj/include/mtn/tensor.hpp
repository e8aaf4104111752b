#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtn {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// One node of the recorded operation graph for a single forward pass.
struct TensorNode {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;  // empty until backward (or an optimizer) touches it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(TensorNode&)> backprop;

  void ensure_grad() {
    if (grad.size() == 0) grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  }
};

}  // namespace detail

// Value-semantic handle to a graph node. Copies share the node, so a
// parameter Tensor can appear in many recorded graphs and accumulate
// gradients across them until the optimizer clears it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Eigen::MatrixXd v);
  static Tensor parameter(Eigen::MatrixXd v);
  static Tensor scalar_constant(double v);

  bool valid() const { return node_ != nullptr; }
  const Eigen::MatrixXd& value() const { return node_->value; }
  Eigen::MatrixXd& mutable_value() { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return node_->grad.size() != 0; }
  const Eigen::MatrixXd& grad() const;
  void clear_grad() { node_->grad.resize(0, 0); }

  // Scalar access for 1x1 tensors (losses).
  double item() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Reverse-mode sweep from a scalar root. Seeds d(root)/d(root) = 1 and
// accumulates into every reachable node with requires_grad set.
void backward(const Tensor& root);

// ---- Recorded operations -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// out.row(i) = x.row(i) + bias.row(0); bias is 1xD.
Tensor add_row_broadcast(const Tensor& x, const Tensor& bias);
Tensor transpose(const Tensor& a);
Tensor block_rows(const Tensor& x, Eigen::Index start, Eigen::Index count);
Tensor block_cols(const Tensor& x, Eigen::Index start, Eigen::Index count);
Tensor concat_cols(const std::vector<Tensor>& parts);
// out.col(j) = x.col(indices[j]); gradient scatters back, untouched columns
// of x receive exactly zero.
Tensor gather_cols(const Tensor& x, const std::vector<int>& indices);
Tensor gelu(const Tensor& x);

// Softmax over all entries of a row or column vector, with max-subtraction.
Tensor softmax(const Tensor& z, double temperature = 1.0);
// Independent softmax over each row of a matrix (attention weights).
Tensor row_softmax(const Tensor& x, double temperature = 1.0);

// Per-row layer normalization followed by elementwise affine. gain and bias
// are 1xD.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double epsilon = 1e-5);

// sum_i p_i * log(p_i / q_i) with 0*log(0) := 0 and q clamped at 1e-12.
// p and q must have the same shape and at least one entry.
Tensor kl_divergence(const Tensor& p, const Tensor& q);

// Plain (unrecorded) helpers shared with evaluation code.
Eigen::VectorXd softmax_values(const Eigen::VectorXd& z, double temperature = 1.0);

}  // namespace mtn
