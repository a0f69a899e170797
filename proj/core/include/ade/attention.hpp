#pragma once

#include "ade/rng.hpp"
#include "ade/tensor.hpp"

#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace ade {

struct AttentionConfig {
  int num_heads = 4;
  int model_dim = 64;

  int head_dim() const { return model_dim / num_heads; }
  // Throws ShapeError unless model_dim is a positive multiple of num_heads.
  void validate() const;
};

// One multi-head attention layer. Row-vector convention: Q = X * wq + bq.
struct AttentionParams {
  Matrix wq, wk, wv, wo;
  Vector bq, bk, bv, bo;

  static AttentionParams zeros(const AttentionConfig& config);
  // Xavier-uniform weights, zero biases.
  static AttentionParams random(const AttentionConfig& config, Rng& rng);

  template <typename F>
  void visit(F&& f) {
    f("wq", as_span(wq));
    f("wk", as_span(wk));
    f("wv", as_span(wv));
    f("wo", as_span(wo));
    f("bq", as_span(bq));
    f("bk", as_span(bk));
    f("bv", as_span(bv));
    f("bo", as_span(bo));
  }
};

// Query/key/value projections of one token sequence under one parameter set.
// Projecting once and attending many times is how the trainer reuses z in the
// attribute and object branches.
struct Projection {
  Matrix input;
  Matrix query;
  Matrix key;
  Matrix value;
};

struct AttentionResult {
  Matrix output;               // (T_q, D), after the output projection
  Matrix context;              // (T_q, D), concatenated heads before it
  std::vector<Matrix> logits;  // per head (T_q, T_k), scaled by 1/sqrt(d_k)
  std::vector<Matrix> weights; // per head (T_q, T_k), softmax of logits

  int num_heads() const { return static_cast<int>(weights.size()); }
  Matrix mean_weights() const;
};

Projection project(const AttentionParams& params, const Matrix& tokens);

AttentionResult attend(const AttentionConfig& config, const AttentionParams& params,
                       const Projection& query, const Projection& key_value);

AttentionResult multi_head_attention(const Matrix& query_tokens, const Matrix& key_value_tokens,
                                     const AttentionParams& params, const AttentionConfig& config);

AttentionResult self_attend(const Matrix& tokens, const AttentionParams& params,
                            const AttentionConfig& config);

// Query-key swapping: first result queries with tokens_1 over tokens_2, the
// second queries with tokens_2 over tokens_1, same parameters.
std::pair<AttentionResult, AttentionResult> cross_attend_swapped(const Matrix& tokens_1,
                                                                 const Matrix& tokens_2,
                                                                 const AttentionParams& params,
                                                                 const AttentionConfig& config);

// Upstream gradients for one attend() call. Empty members mean zero.
struct AttentionGrad {
  Matrix d_output;               // (T_q, D)
  std::vector<Matrix> d_weights; // per head, w.r.t. post-softmax weights
  std::vector<Matrix> d_logits;  // per head, w.r.t. scaled logits
};

// Gradient accumulators for a Projection's three outputs.
struct ProjectionGrad {
  Matrix d_query;
  Matrix d_key;
  Matrix d_value;

  static ProjectionGrad zeros_like(const Projection& p);
};

// Backpropagates through attend(): accumulates wo/bo gradients into `grads`
// and the query/key/value gradients into the two projection accumulators.
void attend_backward(const AttentionConfig& config, const AttentionParams& params,
                     const Projection& query, const Projection& key_value,
                     const AttentionResult& result, const AttentionGrad& upstream,
                     AttentionParams& grads, ProjectionGrad& query_grad,
                     ProjectionGrad& key_value_grad);

// Backpropagates a projection's accumulated gradients into wq/wk/wv and biases.
void project_backward(const Projection& projection, const ProjectionGrad& grad,
                      AttentionParams& grads);

}  // namespace ade
