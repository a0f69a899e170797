#include "ade/emd.hpp"

#include "ade/errors.hpp"

#include <cmath>
#include <string>

namespace ade {

namespace {

Matrix logistic(const Matrix& x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

// Heads-averaged signal map for one branch.
Matrix signal_map(const AttentionResult& r, AttentionSignal signal) {
  if (r.weights.empty()) throw ShapeError("attention_emd: result has no heads");
  Matrix mean = Matrix::Zero(r.weights.front().rows(), r.weights.front().cols());
  for (int h = 0; h < r.num_heads(); ++h) {
    mean += signal == AttentionSignal::weights ? r.weights[h] : logistic(r.logits[h]);
  }
  return mean / static_cast<double>(r.num_heads());
}

Vector normalized_marginal(const Matrix& map) {
  Vector m = map.row(0).tail(map.cols() - 1).transpose();
  const double total = m.sum();
  if (!(total > 0.0)) throw NumericError("attention_emd: class-token row has no patch mass");
  return m / total;
}

void add_head_grad(std::vector<Matrix>& target, int heads, Eigen::Index rows, Eigen::Index cols) {
  if (target.empty()) target.resize(heads);
  for (auto& m : target) {
    if (m.size() == 0) m = Matrix::Zero(rows, cols);
  }
}

}  // namespace

TransportProblem attention_transport_problem(const AttentionResult& branch_1,
                                             const AttentionResult& branch_2,
                                             AttentionSignal signal) {
  const Matrix a = signal_map(branch_1, signal);
  const Matrix b = signal_map(branch_2, signal);
  if (a.rows() != b.cols() || a.cols() != b.rows()) {
    throw ShapeError("attention_emd: branch shapes are not swapped counterparts");
  }
  const auto patches_1 = a.rows() - 1;
  const auto patches_2 = a.cols() - 1;
  if (patches_1 != patches_2) {
    throw ShapeError("attention_emd: patch counts differ (" + std::to_string(patches_1) + " vs " +
                     std::to_string(patches_2) + ")");
  }
  if (patches_1 < 1) throw ShapeError("attention_emd: no patch tokens");
  const auto p = patches_1;

  TransportProblem problem;
  problem.supplies = normalized_marginal(a);
  problem.demands = normalized_marginal(b);
  problem.cost = Matrix::Ones(p, p) -
                 0.5 * (a.bottomRightCorner(p, p) + b.bottomRightCorner(p, p).transpose());
  return problem;
}

AttentionEmd attention_emd(const AttentionResult& branch_1, const AttentionResult& branch_2,
                           const EmdOptions& options) {
  AttentionEmd out;
  out.problem = attention_transport_problem(branch_1, branch_2, options.signal);
  out.plan = solve(out.problem, options.solver, options.sinkhorn);
  out.value = emd_similarity(out.problem, out.plan);
  return out;
}

void attention_emd_backward(const AttentionEmd& emd, double scale, const AttentionResult& branch_1,
                            const AttentionResult& branch_2, const EmdOptions& options,
                            AttentionGrad& grad_1, AttentionGrad& grad_2) {
  const int h1 = branch_1.num_heads();
  const int h2 = branch_2.num_heads();
  const auto p = emd.plan.flow.rows();
  const Eigen::Index t1 = branch_1.weights.front().rows();
  const Eigen::Index t2 = branch_1.weights.front().cols();
  // value = sum_ij f_ij * (A_ij + B_ji) / 2 with A, B the heads-averaged maps.
  const Matrix g = 0.5 * scale * emd.plan.flow;

  auto& target_1 = options.signal == AttentionSignal::weights ? grad_1.d_weights : grad_1.d_logits;
  auto& target_2 = options.signal == AttentionSignal::weights ? grad_2.d_weights : grad_2.d_logits;
  add_head_grad(target_1, h1, t1, t2);
  add_head_grad(target_2, h2, t2, t1);

  for (int h = 0; h < h1; ++h) {
    Matrix d = g / static_cast<double>(h1);
    if (options.signal == AttentionSignal::logits) {
      const Matrix s = logistic(branch_1.logits[h].bottomRightCorner(p, p));
      d.array() *= s.array() * (1.0 - s.array());
    }
    target_1[h].bottomRightCorner(p, p) += d;
  }
  const Matrix gt = g.transpose();
  for (int h = 0; h < h2; ++h) {
    Matrix d = gt / static_cast<double>(h2);
    if (options.signal == AttentionSignal::logits) {
      const Matrix s = logistic(branch_2.logits[h].bottomRightCorner(p, p));
      d.array() *= s.array() * (1.0 - s.array());
    }
    target_2[h].bottomRightCorner(p, p) += d;
  }
}

double regularization_loss(const RegTerms& t) {
  return t.attr_obj + t.obj_attr - t.attr_attr - t.obj_obj;
}

double regularization_loss(const std::vector<RegTerms>& batch) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : batch) total += regularization_loss(t);
  return total / static_cast<double>(batch.size());
}

}  // namespace ade
