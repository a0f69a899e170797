#include "ade/attention.hpp"

#include "ade/errors.hpp"

#include <cmath>
#include <string>

namespace ade {

void AttentionConfig::validate() const {
  if (num_heads <= 0 || model_dim <= 0 || model_dim % num_heads != 0) {
    throw ShapeError("attention: model_dim " + std::to_string(model_dim) +
                     " is not a positive multiple of num_heads " + std::to_string(num_heads));
  }
}

AttentionParams AttentionParams::zeros(const AttentionConfig& config) {
  config.validate();
  const int d = config.model_dim;
  AttentionParams p;
  p.wq = p.wk = p.wv = p.wo = Matrix::Zero(d, d);
  p.bq = p.bk = p.bv = p.bo = Vector::Zero(d);
  return p;
}

AttentionParams AttentionParams::random(const AttentionConfig& config, Rng& rng) {
  AttentionParams p = zeros(config);
  const double bound = std::sqrt(6.0 / (2.0 * config.model_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Matrix* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
    for (Eigen::Index i = 0; i < w->size(); ++i) w->data()[i] = dist(rng);
  }
  return p;
}

Matrix AttentionResult::mean_weights() const {
  Matrix mean = weights.front();
  for (std::size_t h = 1; h < weights.size(); ++h) mean += weights[h];
  return mean / static_cast<double>(weights.size());
}

Projection project(const AttentionParams& params, const Matrix& tokens) {
  if (tokens.cols() != params.wq.rows()) {
    throw ShapeError("attention: token width " + std::to_string(tokens.cols()) +
                     " does not match model dim " + std::to_string(params.wq.rows()));
  }
  Projection p;
  p.input = tokens;
  p.query = (tokens * params.wq).rowwise() + params.bq.transpose();
  p.key = (tokens * params.wk).rowwise() + params.bk.transpose();
  p.value = (tokens * params.wv).rowwise() + params.bv.transpose();
  return p;
}

AttentionResult attend(const AttentionConfig& config, const AttentionParams& params,
                       const Projection& query, const Projection& key_value) {
  config.validate();
  if (query.query.cols() != config.model_dim || key_value.key.cols() != config.model_dim) {
    throw ShapeError("attention: projection width does not match config");
  }
  const int heads = config.num_heads;
  const int dk = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto tq = query.query.rows();
  const auto tk = key_value.key.rows();

  AttentionResult r;
  r.context.resize(tq, config.model_dim);
  r.logits.resize(heads);
  r.weights.resize(heads);
  for (int h = 0; h < heads; ++h) {
    const auto q = query.query.middleCols(h * dk, dk);
    const auto k = key_value.key.middleCols(h * dk, dk);
    const auto v = key_value.value.middleCols(h * dk, dk);
    Matrix logits = (q * k.transpose()) * scale;
    Matrix w(tq, tk);
    for (Eigen::Index i = 0; i < tq; ++i) {
      const double mx = logits.row(i).maxCoeff();
      w.row(i) = (logits.row(i).array() - mx).exp();
      w.row(i) /= w.row(i).sum();
    }
    r.context.middleCols(h * dk, dk) = w * v;
    r.logits[h] = std::move(logits);
    r.weights[h] = std::move(w);
  }
  r.output = (r.context * params.wo).rowwise() + params.bo.transpose();
  return r;
}

AttentionResult multi_head_attention(const Matrix& query_tokens, const Matrix& key_value_tokens,
                                     const AttentionParams& params, const AttentionConfig& config) {
  if (query_tokens.cols() != key_value_tokens.cols()) {
    throw ShapeError("attention: query and key/value widths differ");
  }
  return attend(config, params, project(params, query_tokens), project(params, key_value_tokens));
}

AttentionResult self_attend(const Matrix& tokens, const AttentionParams& params,
                            const AttentionConfig& config) {
  const Projection p = project(params, tokens);
  return attend(config, params, p, p);
}

std::pair<AttentionResult, AttentionResult> cross_attend_swapped(const Matrix& tokens_1,
                                                                 const Matrix& tokens_2,
                                                                 const AttentionParams& params,
                                                                 const AttentionConfig& config) {
  if (tokens_1.cols() != tokens_2.cols()) throw ShapeError("attention: pair widths differ");
  const Projection p1 = project(params, tokens_1);
  const Projection p2 = project(params, tokens_2);
  return {attend(config, params, p1, p2), attend(config, params, p2, p1)};
}

ProjectionGrad ProjectionGrad::zeros_like(const Projection& p) {
  return {Matrix::Zero(p.query.rows(), p.query.cols()), Matrix::Zero(p.key.rows(), p.key.cols()),
          Matrix::Zero(p.value.rows(), p.value.cols())};
}

void attend_backward(const AttentionConfig& config, const AttentionParams& params,
                     const Projection& query, const Projection& key_value,
                     const AttentionResult& result, const AttentionGrad& upstream,
                     AttentionParams& grads, ProjectionGrad& query_grad,
                     ProjectionGrad& key_value_grad) {
  const int heads = config.num_heads;
  const int dk = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const bool has_output = upstream.d_output.size() > 0;

  Matrix d_context;
  if (has_output) {
    grads.wo.noalias() += result.context.transpose() * upstream.d_output;
    grads.bo += upstream.d_output.colwise().sum().transpose();
    d_context = upstream.d_output * params.wo.transpose();
  }

  for (int h = 0; h < heads; ++h) {
    const Matrix& w = result.weights[h];
    Matrix d_w = Matrix::Zero(w.rows(), w.cols());
    if (!upstream.d_weights.empty() && upstream.d_weights[h].size() > 0) d_w += upstream.d_weights[h];
    if (has_output) {
      const auto d_ctx = d_context.middleCols(h * dk, dk);
      d_w.noalias() += d_ctx * key_value.value.middleCols(h * dk, dk).transpose();
      key_value_grad.d_value.middleCols(h * dk, dk).noalias() += w.transpose() * d_ctx;
    }
    // Row-wise softmax backward.
    const Eigen::VectorXd row_dot = (d_w.array() * w.array()).rowwise().sum();
    Matrix d_logits = w.array() * (d_w.colwise() - row_dot).array();
    if (!upstream.d_logits.empty() && upstream.d_logits[h].size() > 0) d_logits += upstream.d_logits[h];
    d_logits *= scale;
    query_grad.d_query.middleCols(h * dk, dk).noalias() +=
        d_logits * key_value.key.middleCols(h * dk, dk);
    key_value_grad.d_key.middleCols(h * dk, dk).noalias() +=
        d_logits.transpose() * query.query.middleCols(h * dk, dk);
  }
}

void project_backward(const Projection& projection, const ProjectionGrad& grad,
                      AttentionParams& grads) {
  grads.wq.noalias() += projection.input.transpose() * grad.d_query;
  grads.wk.noalias() += projection.input.transpose() * grad.d_key;
  grads.wv.noalias() += projection.input.transpose() * grad.d_value;
  grads.bq += grad.d_query.colwise().sum().transpose();
  grads.bk += grad.d_key.colwise().sum().transpose();
  grads.bv += grad.d_value.colwise().sum().transpose();
}

}  // namespace ade
