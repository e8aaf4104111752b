#pragma once

#include "mtn/classifier.hpp"
#include "mtn/memory_bank.hpp"
#include "mtn/tensor.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace mtn {

struct MtnConfig {
  int input_dim = 0;
  int model_dim = 128;
  int num_layers = 4;
  int num_heads = 4;
  int ffn_multiplier = 4;
  int k = 10;
  bool use_rank_positional_embedding = false;
  int num_classes_capacity = 0;

  void validate() const;
};

// Memory Transformer Network: input projection, a pre-normalization
// self-attention stack over the (1 + k)-token sequence [query, neighbors],
// readout at the query position, and a linear class head.
class MtnModel final : public IncrementalClassifier {
 public:
  MtnModel(MtnConfig cfg, std::uint64_t seed);

  const MtnConfig& config() const { return cfg_; }

  // Adapted query feature q~ as a 1 x model_dim recorded graph. Neighbors
  // must be ordered by descending similarity (rank embeddings index them).
  Tensor adapt(const Eigen::VectorXd& q, const std::vector<Eigen::VectorXd>& neighbors) const;

  // Full stack output for all tokens, (1 + j) x model_dim.
  Tensor adapt_all_tokens(const Eigen::VectorXd& q,
                          const std::vector<Eigen::VectorXd>& neighbors) const;

  Tensor head_logits(const Tensor& adapted) const;

  // Cosine similarity between the adapted query token and each adapted
  // neighbor token, in input neighbor order.
  std::vector<double> adapted_similarities(const Eigen::VectorXd& q,
                                           const std::vector<Eigen::VectorXd>& neighbors) const;

  // IncrementalClassifier
  Tensor training_logits(const Eigen::VectorXd& q,
                         const std::vector<Eigen::VectorXd>& neighbors) const override;
  bool uses_neighbors() const override { return true; }
  int num_classes_capacity() const override { return cfg_.num_classes_capacity; }
  int input_dim() const override { return cfg_.input_dim; }
  std::string kind() const override { return "mtn"; }
  std::vector<Tensor> parameters() override;
  std::unique_ptr<IncrementalClassifier> clone() const override;
  std::vector<Eigen::MatrixXd> parameter_values() const override;
  void set_parameter_values(const std::vector<Eigen::MatrixXd>& values) override;

 private:
  struct LayerParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  Tensor run_stack(const Eigen::MatrixXd& tokens) const;
  std::vector<Tensor> parameter_list() const;

  MtnConfig cfg_;
  Tensor proj_w, proj_b;           // d x D, 1 x D
  std::vector<LayerParams> layers_;
  Tensor final_gain, final_bias;   // applied only when num_layers > 0
  Tensor rank_emb;                 // (1 + k) x D when enabled
  Tensor head_w, head_b;           // D x C, 1 x C
};

// Retrieval + adaptation + head in one call: logits over the class capacity
// for a query against the live memory. Propagates EmptyMemoryError.
Eigen::VectorXd forward(const MtnModel& model, const Eigen::VectorXd& q,
                        const ExemplarMemory& mem, int k,
                        std::optional<std::uint64_t> exclude = {});

// Linear classifier on the raw feature (the no-retrieval baseline head).
class LinearClassifier final : public IncrementalClassifier {
 public:
  LinearClassifier(int input_dim, int num_classes_capacity, std::uint64_t seed);

  Tensor training_logits(const Eigen::VectorXd& q,
                         const std::vector<Eigen::VectorXd>& neighbors) const override;
  bool uses_neighbors() const override { return false; }
  int num_classes_capacity() const override { return capacity_; }
  int input_dim() const override { return dim_; }
  std::string kind() const override { return "linear"; }
  std::vector<Tensor> parameters() override { return {w_, b_}; }
  std::unique_ptr<IncrementalClassifier> clone() const override;
  std::vector<Eigen::MatrixXd> parameter_values() const override;
  void set_parameter_values(const std::vector<Eigen::MatrixXd>& values) override;

 private:
  int dim_;
  int capacity_;
  Tensor w_, b_;  // d x C, 1 x C
};

}  // namespace mtn
