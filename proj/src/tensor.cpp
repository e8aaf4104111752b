#include "mtn/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace mtn {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

NodePtr make_node(Eigen::MatrixXd v, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->node()->requires_grad) return true;
  return false;
}

Tensor record(Eigen::MatrixXd value, std::vector<NodePtr> parents,
              std::function<void(TensorNode&)> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto n = make_node(std::move(value), rg);
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

std::string shape_str(const Eigen::MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Eigen::VectorXd as_flat(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

constexpr double kKlClamp = 1e-12;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Tensor Tensor::constant(Eigen::MatrixXd v) { return Tensor(make_node(std::move(v), false)); }

Tensor Tensor::parameter(Eigen::MatrixXd v) { return Tensor(make_node(std::move(v), true)); }

Tensor Tensor::scalar_constant(double v) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

const Eigen::MatrixXd& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient populated");
  return node_->grad;
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1)
    throw DimensionError("item() requires a 1x1 tensor, got " + shape_str(node_->value));
  return node_->value(0, 0);
}

void backward(const Tensor& root) {
  if (!root.valid() || root.rows() != 1 || root.cols() != 1)
    throw DimensionError("backward() requires a scalar root");
  // Iterative post-order over parents.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.value()) + " x " +
                         shape_str(b.value()));
  auto pa = a.node(), pb = b.node();
  return record(a.value() * b.value(), {pa, pb}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      pa->grad.noalias() += self.grad * pb->value.transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad.noalias() += pa->value.transpose() * self.grad;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("add: shape mismatch, " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
  auto pa = a.node(), pb = b.node();
  return record(a.value() + b.value(), {pa, pb}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      pa->grad += self.grad;
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad += self.grad;
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("sub: shape mismatch, " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
  auto pa = a.node(), pb = b.node();
  return record(a.value() - b.value(), {pa, pb}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      pa->grad += self.grad;
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad -= self.grad;
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  auto pa = a.node();
  return record(a.value() * c, {pa}, [pa, c](TensorNode& self) {
    pa->ensure_grad();
    pa->grad += self.grad * c;
  });
}

Tensor add_row_broadcast(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw DimensionError("add_row_broadcast: bias must be 1x" + std::to_string(x.cols()) +
                         ", got " + shape_str(bias.value()));
  auto px = x.node(), pb = bias.node();
  Eigen::MatrixXd out = x.value().rowwise() + bias.value().row(0);
  return record(std::move(out), {px, pb}, [px, pb](TensorNode& self) {
    if (px->requires_grad) {
      px->ensure_grad();
      px->grad += self.grad;
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad.row(0) += self.grad.colwise().sum();
    }
  });
}

Tensor transpose(const Tensor& a) {
  auto pa = a.node();
  return record(a.value().transpose(), {pa}, [pa](TensorNode& self) {
    pa->ensure_grad();
    pa->grad += self.grad.transpose();
  });
}

Tensor block_rows(const Tensor& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows())
    throw DimensionError("block_rows: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(x.value()));
  auto px = x.node();
  return record(x.value().middleRows(start, count), {px}, [px, start, count](TensorNode& self) {
    px->ensure_grad();
    px->grad.middleRows(start, count) += self.grad;
  });
}

Tensor block_cols(const Tensor& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols())
    throw DimensionError("block_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(x.value()));
  auto px = x.node();
  return record(x.value().middleCols(start, count), {px}, [px, start, count](TensorNode& self) {
    px->ensure_grad();
    px->grad.middleCols(start, count) += self.grad;
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Eigen::MatrixXd out(rows, cols);
  std::vector<NodePtr> parents;
  parents.reserve(parts.size());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    parents.push_back(p.node());
  }
  auto ps = parents;
  return record(std::move(out), std::move(parents), [ps](TensorNode& self) {
    Eigen::Index at = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += self.grad.middleCols(at, p->value.cols());
      }
      at += p->value.cols();
    }
  });
}

Tensor gather_cols(const Tensor& x, const std::vector<int>& indices) {
  if (indices.empty()) throw DimensionError("gather_cols: empty index list");
  for (int i : indices)
    if (i < 0 || i >= x.cols())
      throw DimensionError("gather_cols: index " + std::to_string(i) + " out of " +
                           shape_str(x.value()));
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(indices.size()));
  for (size_t j = 0; j < indices.size(); ++j) out.col(j) = x.value().col(indices[j]);
  auto px = x.node();
  return record(std::move(out), {px}, [px, indices](TensorNode& self) {
    px->ensure_grad();
    for (size_t j = 0; j < indices.size(); ++j)
      px->grad.col(indices[j]) += self.grad.col(j);
  });
}

Tensor gelu(const Tensor& x) {
  Eigen::MatrixXd out = x.value().unaryExpr(
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  auto px = x.node();
  return record(std::move(out), {px}, [px](TensorNode& self) {
    px->ensure_grad();
    px->grad += self.grad.cwiseProduct(px->value.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    }));
  });
}

Eigen::VectorXd softmax_values(const Eigen::VectorXd& z, double temperature) {
  if (z.size() == 0) throw DimensionError("softmax: empty input");
  if (temperature <= 0) throw ArgumentError("softmax: temperature must be positive");
  Eigen::VectorXd scaled = z / temperature;
  double m = scaled.maxCoeff();
  Eigen::VectorXd e = (scaled.array() - m).exp();
  return e / e.sum();
}

Tensor softmax(const Tensor& z, double temperature) {
  if (z.rows() != 1 && z.cols() != 1)
    throw DimensionError("softmax: expected a vector, got " + shape_str(z.value()));
  if (z.value().size() == 0) throw DimensionError("softmax: empty input");
  if (temperature <= 0) throw ArgumentError("softmax: temperature must be positive");
  Eigen::VectorXd s = softmax_values(as_flat(z.value()), temperature);
  Eigen::MatrixXd out = z.value();
  Eigen::Map<Eigen::VectorXd>(out.data(), out.size()) = s;
  auto pz = z.node();
  return record(std::move(out), {pz}, [pz, temperature](TensorNode& self) {
    pz->ensure_grad();
    Eigen::VectorXd s = as_flat(self.value);
    Eigen::VectorXd g = as_flat(self.grad);
    double dot = g.dot(s);
    Eigen::VectorXd dz = (s.array() * (g.array() - dot)) / temperature;
    Eigen::Map<Eigen::VectorXd>(pz->grad.data(), pz->grad.size()) += dz;
  });
}

Tensor row_softmax(const Tensor& x, double temperature) {
  if (x.value().size() == 0) throw DimensionError("row_softmax: empty input");
  if (temperature <= 0) throw ArgumentError("row_softmax: temperature must be positive");
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    out.row(r) = softmax_values(x.value().row(r).transpose(), temperature).transpose();
  auto px = x.node();
  return record(std::move(out), {px}, [px, temperature](TensorNode& self) {
    px->ensure_grad();
    for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
      Eigen::RowVectorXd s = self.value.row(r);
      Eigen::RowVectorXd g = self.grad.row(r);
      double dot = g.dot(s);
      px->grad.row(r) += (s.array() * (g.array() - dot)).matrix() / temperature;
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  const Eigen::Index d = x.cols();
  if (d == 0) throw DimensionError("layer_norm_rows: empty input");
  if (epsilon <= 0) throw ArgumentError("layer_norm_rows: epsilon must be positive");
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw DimensionError("layer_norm_rows: gain/bias must be 1x" + std::to_string(d));
  Eigen::MatrixXd xhat(x.rows(), d);
  Eigen::VectorXd inv_sigma(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.value().row(r).mean();
    Eigen::RowVectorXd c = x.value().row(r).array() - mu;
    double var = c.squaredNorm() / static_cast<double>(d);
    inv_sigma(r) = 1.0 / std::sqrt(var + epsilon);
    xhat.row(r) = c * inv_sigma(r);
  }
  Eigen::MatrixXd out =
      (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  return record(std::move(out), {px, pg, pb},
                [px, pg, pb, xhat, inv_sigma, d](TensorNode& self) {
    if (pg->requires_grad) {
      pg->ensure_grad();
      pg->grad.row(0) += self.grad.cwiseProduct(xhat).colwise().sum();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad.row(0) += self.grad.colwise().sum();
    }
    if (px->requires_grad) {
      px->ensure_grad();
      for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
        Eigen::RowVectorXd gg = self.grad.row(r).cwiseProduct(pg->value.row(0));
        double mean_gg = gg.mean();
        double mean_gg_xhat = gg.cwiseProduct(xhat.row(r)).mean();
        px->grad.row(r) +=
            inv_sigma(r) * (gg.array() - mean_gg - xhat.row(r).array() * mean_gg_xhat).matrix();
      }
    }
  });
}

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw DimensionError("kl_divergence: shape mismatch, " + shape_str(p.value()) + " vs " +
                         shape_str(q.value()));
  if (p.value().size() == 0) throw DimensionError("kl_divergence: empty input");
  Eigen::VectorXd pv = as_flat(p.value());
  Eigen::VectorXd qv = as_flat(q.value());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < pv.size(); ++i) {
    if (pv(i) > 0.0) acc += pv(i) * std::log(pv(i) / std::max(qv(i), kKlClamp));
  }
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = acc;
  auto pp = p.node(), pq = q.node();
  return record(std::move(out), {pp, pq}, [pp, pq](TensorNode& self) {
    double g = self.grad(0, 0);
    Eigen::VectorXd pv = as_flat(pp->value);
    Eigen::VectorXd qv = as_flat(pq->value);
    if (pq->requires_grad) {
      pq->ensure_grad();
      Eigen::Map<Eigen::VectorXd> gq(pq->grad.data(), pq->grad.size());
      for (Eigen::Index i = 0; i < pv.size(); ++i) {
        if (pv(i) > 0.0) gq(i) -= g * pv(i) / std::max(qv(i), kKlClamp);
      }
    }
    if (pp->requires_grad) {
      pp->ensure_grad();
      Eigen::Map<Eigen::VectorXd> gp(pp->grad.data(), pp->grad.size());
      for (Eigen::Index i = 0; i < pv.size(); ++i) {
        if (pv(i) > 0.0) gp(i) += g * (std::log(pv(i) / std::max(qv(i), kKlClamp)) + 1.0);
      }
    }
  });
}

}  // namespace mtn
