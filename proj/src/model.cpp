#include "mtn/model.hpp"

#include <cmath>
#include <random>

namespace mtn {

namespace {

// Scaled-uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Eigen::MatrixXd uniform_fan_in(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                               std::mt19937_64& rng) {
  double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

Tensor zeros_param(Eigen::Index rows, Eigen::Index cols) {
  return Tensor::parameter(Eigen::MatrixXd::Zero(rows, cols));
}

Tensor ones_param(Eigen::Index rows, Eigen::Index cols) {
  return Tensor::parameter(Eigen::MatrixXd::Ones(rows, cols));
}

}  // namespace

void MtnConfig::validate() const {
  if (input_dim <= 0) throw ArgumentError("mtn config: input_dim must be positive");
  if (model_dim <= 0) throw ArgumentError("mtn config: model_dim must be positive");
  if (num_layers < 0) throw ArgumentError("mtn config: num_layers must be non-negative");
  if (num_layers > 0) {
    if (num_heads <= 0) throw ArgumentError("mtn config: num_heads must be positive");
    if (model_dim % num_heads != 0)
      throw ArgumentError("mtn config: model_dim must be divisible by num_heads");
    if (ffn_multiplier <= 0) throw ArgumentError("mtn config: ffn_multiplier must be positive");
  }
  if (k < 0) throw ArgumentError("mtn config: k must be non-negative");
  if (num_classes_capacity <= 0)
    throw ArgumentError("mtn config: num_classes_capacity must be positive");
}

MtnModel::MtnModel(MtnConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg_.input_dim, D = cfg_.model_dim;
  proj_w = Tensor::parameter(uniform_fan_in(d, D, d, rng));
  proj_b = zeros_param(1, D);
  layers_.resize(cfg_.num_layers);
  for (auto& l : layers_) {
    l.ln1_gain = ones_param(1, D);
    l.ln1_bias = zeros_param(1, D);
    l.wq = Tensor::parameter(uniform_fan_in(D, D, D, rng));
    l.bq = zeros_param(1, D);
    l.wk = Tensor::parameter(uniform_fan_in(D, D, D, rng));
    l.bk = zeros_param(1, D);
    l.wv = Tensor::parameter(uniform_fan_in(D, D, D, rng));
    l.bv = zeros_param(1, D);
    l.wo = Tensor::parameter(uniform_fan_in(D, D, D, rng));
    l.bo = zeros_param(1, D);
    l.ln2_gain = ones_param(1, D);
    l.ln2_bias = zeros_param(1, D);
    const int F = D * cfg_.ffn_multiplier;
    l.ffn_w1 = Tensor::parameter(uniform_fan_in(D, F, D, rng));
    l.ffn_b1 = zeros_param(1, F);
    l.ffn_w2 = Tensor::parameter(uniform_fan_in(F, D, F, rng));
    l.ffn_b2 = zeros_param(1, D);
  }
  if (cfg_.num_layers > 0) {
    final_gain = ones_param(1, D);
    final_bias = zeros_param(1, D);
  }
  if (cfg_.use_rank_positional_embedding)
    rank_emb = Tensor::parameter(uniform_fan_in(1 + cfg_.k, D, D, rng));
  head_w = Tensor::parameter(uniform_fan_in(D, cfg_.num_classes_capacity, D, rng));
  head_b = zeros_param(1, cfg_.num_classes_capacity);
}

Tensor MtnModel::run_stack(const Eigen::MatrixXd& tokens) const {
  const Eigen::Index s = tokens.rows();
  const int D = cfg_.model_dim;
  Tensor x = add_row_broadcast(matmul(Tensor::constant(tokens), proj_w), proj_b);
  if (cfg_.use_rank_positional_embedding) {
    if (s > rank_emb.rows())
      throw DimensionError("mtn: sequence longer than the rank embedding table");
    x = add(x, block_rows(rank_emb, 0, s));
  }
  if (cfg_.num_layers == 0) return x;

  const int H = cfg_.num_heads;
  const int Dh = D / H;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(Dh));
  for (const auto& l : layers_) {
    // Self-attention sublayer, pre-norm residual.
    Tensor n1 = layer_norm_rows(x, l.ln1_gain, l.ln1_bias);
    Tensor q = add_row_broadcast(matmul(n1, l.wq), l.bq);
    Tensor k = add_row_broadcast(matmul(n1, l.wk), l.bk);
    Tensor v = add_row_broadcast(matmul(n1, l.wv), l.bv);
    std::vector<Tensor> heads;
    heads.reserve(H);
    for (int h = 0; h < H; ++h) {
      Tensor qh = block_cols(q, h * Dh, Dh);
      Tensor kh = block_cols(k, h * Dh, Dh);
      Tensor vh = block_cols(v, h * Dh, Dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      Tensor attn = row_softmax(scores);
      heads.push_back(matmul(attn, vh));
    }
    Tensor merged = H == 1 ? heads[0] : concat_cols(heads);
    x = add(x, add_row_broadcast(matmul(merged, l.wo), l.bo));

    // Feed-forward sublayer.
    Tensor n2 = layer_norm_rows(x, l.ln2_gain, l.ln2_bias);
    Tensor hid = gelu(add_row_broadcast(matmul(n2, l.ffn_w1), l.ffn_b1));
    x = add(x, add_row_broadcast(matmul(hid, l.ffn_w2), l.ffn_b2));
  }
  return layer_norm_rows(x, final_gain, final_bias);
}

Tensor MtnModel::adapt_all_tokens(const Eigen::VectorXd& q,
                                  const std::vector<Eigen::VectorXd>& neighbors) const {
  if (q.size() != cfg_.input_dim)
    throw DimensionError("mtn: query has dim " + std::to_string(q.size()) + ", expected " +
                         std::to_string(cfg_.input_dim));
  for (size_t i = 0; i < neighbors.size(); ++i)
    if (neighbors[i].size() != cfg_.input_dim)
      throw DimensionError("mtn: neighbor " + std::to_string(i) + " has dim " +
                           std::to_string(neighbors[i].size()) + ", expected " +
                           std::to_string(cfg_.input_dim));
  Eigen::MatrixXd tokens(1 + static_cast<Eigen::Index>(neighbors.size()), cfg_.input_dim);
  tokens.row(0) = q.transpose();
  for (size_t i = 0; i < neighbors.size(); ++i)
    tokens.row(1 + static_cast<Eigen::Index>(i)) = neighbors[i].transpose();
  return run_stack(tokens);
}

Tensor MtnModel::adapt(const Eigen::VectorXd& q,
                       const std::vector<Eigen::VectorXd>& neighbors) const {
  return block_rows(adapt_all_tokens(q, neighbors), 0, 1);
}

Tensor MtnModel::head_logits(const Tensor& adapted) const {
  return add_row_broadcast(matmul(adapted, head_w), head_b);
}

Tensor MtnModel::training_logits(const Eigen::VectorXd& q,
                                 const std::vector<Eigen::VectorXd>& neighbors) const {
  return head_logits(adapt(q, neighbors));
}

std::vector<double> MtnModel::adapted_similarities(
    const Eigen::VectorXd& q, const std::vector<Eigen::VectorXd>& neighbors) const {
  if (neighbors.empty()) return {};
  Eigen::MatrixXd out = adapt_all_tokens(q, neighbors).value();
  Eigen::RowVectorXd qt = out.row(0);
  double qn = qt.norm();
  std::vector<double> sims(neighbors.size());
  for (size_t i = 0; i < neighbors.size(); ++i) {
    Eigen::RowVectorXd nt = out.row(1 + static_cast<Eigen::Index>(i));
    double denom = qn * nt.norm();
    sims[i] = denom > 0 ? qt.dot(nt) / denom : 0.0;
  }
  return sims;
}

std::vector<Tensor> MtnModel::parameter_list() const {
  std::vector<Tensor> out{proj_w, proj_b};
  for (const auto& l : layers_) {
    for (const Tensor& t : {l.ln1_gain, l.ln1_bias, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo,
                            l.bo, l.ln2_gain, l.ln2_bias, l.ffn_w1, l.ffn_b1, l.ffn_w2,
                            l.ffn_b2})
      out.push_back(t);
  }
  if (cfg_.num_layers > 0) {
    out.push_back(final_gain);
    out.push_back(final_bias);
  }
  if (cfg_.use_rank_positional_embedding) out.push_back(rank_emb);
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

std::vector<Tensor> MtnModel::parameters() { return parameter_list(); }

std::vector<Eigen::MatrixXd> MtnModel::parameter_values() const {
  std::vector<Eigen::MatrixXd> out;
  for (const Tensor& t : parameter_list()) out.push_back(t.value());
  return out;
}

void MtnModel::set_parameter_values(const std::vector<Eigen::MatrixXd>& values) {
  auto params = parameter_list();
  if (values.size() != params.size())
    throw ArgumentError("mtn: parameter count mismatch on restore");
  for (size_t i = 0; i < params.size(); ++i) {
    if (values[i].rows() != params[i].rows() || values[i].cols() != params[i].cols())
      throw ArgumentError("mtn: parameter shape mismatch at " + std::to_string(i));
    params[i].mutable_value() = values[i];
  }
}

std::unique_ptr<IncrementalClassifier> MtnModel::clone() const {
  auto copy = std::make_unique<MtnModel>(cfg_, 0);
  copy->set_parameter_values(parameter_values());
  copy->set_trained_classes(trained_classes());
  return copy;
}

Eigen::VectorXd forward(const MtnModel& model, const Eigen::VectorXd& q,
                        const ExemplarMemory& mem, int k,
                        std::optional<std::uint64_t> exclude) {
  auto hits = mem.knn_query(q, k, exclude);
  std::vector<Eigen::VectorXd> neighbors;
  neighbors.reserve(hits.size());
  for (const auto& h : hits) neighbors.push_back(mem.record(h.index).features);
  return model.infer_logits(q, neighbors);
}

LinearClassifier::LinearClassifier(int input_dim, int num_classes_capacity, std::uint64_t seed)
    : dim_(input_dim), capacity_(num_classes_capacity) {
  if (dim_ <= 0) throw ArgumentError("linear: input_dim must be positive");
  if (capacity_ <= 0) throw ArgumentError("linear: num_classes_capacity must be positive");
  std::mt19937_64 rng(seed);
  w_ = Tensor::parameter(uniform_fan_in(dim_, capacity_, dim_, rng));
  b_ = zeros_param(1, capacity_);
}

Tensor LinearClassifier::training_logits(const Eigen::VectorXd& q,
                                         const std::vector<Eigen::VectorXd>&) const {
  if (q.size() != dim_)
    throw DimensionError("linear: query has dim " + std::to_string(q.size()) + ", expected " +
                         std::to_string(dim_));
  return add_row_broadcast(matmul(Tensor::constant(q.transpose()), w_), b_);
}

std::unique_ptr<IncrementalClassifier> LinearClassifier::clone() const {
  auto copy = std::make_unique<LinearClassifier>(dim_, capacity_, 0);
  copy->set_parameter_values(parameter_values());
  copy->set_trained_classes(trained_classes());
  return copy;
}

std::vector<Eigen::MatrixXd> LinearClassifier::parameter_values() const {
  return {w_.value(), b_.value()};
}

void LinearClassifier::set_parameter_values(const std::vector<Eigen::MatrixXd>& values) {
  if (values.size() != 2) throw ArgumentError("linear: parameter count mismatch on restore");
  if (values[0].rows() != dim_ || values[0].cols() != capacity_ || values[1].rows() != 1 ||
      values[1].cols() != capacity_)
    throw ArgumentError("linear: parameter shape mismatch on restore");
  w_.mutable_value() = values[0];
  b_.mutable_value() = values[1];
}

// IncrementalClassifier::predict lives here to keep classifier.hpp header-only
// of logic that needs no extra includes.
int IncrementalClassifier::predict(const Eigen::VectorXd& q,
                                   const std::vector<Eigen::VectorXd>& neighbors) const {
  if (trained_classes_.empty()) throw ContractError("predict: no trained classes");
  Eigen::VectorXd z = infer_logits(q, neighbors);
  int best = -1;
  double best_z = 0;
  for (int c : trained_classes_) {
    if (c < 0 || c >= z.size()) throw ContractError("predict: class outside logit capacity");
    if (best < 0 || z(c) > best_z) {
      best = c;
      best_z = z(c);
    }
  }
  return best;
}

}  // namespace mtn
