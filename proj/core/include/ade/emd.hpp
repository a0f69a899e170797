#pragma once

#include "ade/attention.hpp"
#include "ade/transport.hpp"

#include <vector>

namespace ade {

// Which attention quantity feeds the transport problem.
//  weights: post-softmax maps, used as-is.
//  logits:  pre-softmax scaled logits squashed through a logistic function so
//           that supplies stay nonnegative and costs stay in [0, 1].
enum class AttentionSignal { weights, logits };

struct EmdOptions {
  TransportSolver solver = TransportSolver::exact;
  SinkhornOptions sinkhorn{};
  AttentionSignal signal = AttentionSignal::weights;
};

// Transport instance built from a query-key-swapped attention pair, with its
// solution. `value` is the adapted EMD similarity sum_ij (1 - c_ij) f_ij.
struct AttentionEmd {
  TransportProblem problem;
  TransportPlan plan;
  double value = 0.0;
};

// Builds the transport instance from branch 1 (tokens_1 queries tokens_2) and
// branch 2 (tokens_2 queries tokens_1), heads averaged:
//   supplies = branch-1 class-token row over patch columns, normalized to 1
//   demands  = branch-2 class-token row over patch columns, normalized to 1
//   cost     = 1 - (branch-1 patch-to-patch + transpose(branch-2 patch-to-patch)) / 2
TransportProblem attention_transport_problem(const AttentionResult& branch_1,
                                             const AttentionResult& branch_2,
                                             AttentionSignal signal = AttentionSignal::weights);

AttentionEmd attention_emd(const AttentionResult& branch_1, const AttentionResult& branch_2,
                           const EmdOptions& options = {});

// Gradient of `scale * emd.value` with the plan held fixed: d value / d c_ij =
// -f_ij, flowing only into the patch-to-patch blocks of both branches. Adds
// into `grad_1.d_weights` / `grad_2.d_weights` (or d_logits for the logits
// signal), sizing them on first use.
void attention_emd_backward(const AttentionEmd& emd, double scale, const AttentionResult& branch_1,
                            const AttentionResult& branch_2, const EmdOptions& options,
                            AttentionGrad& grad_1, AttentionGrad& grad_2);

// Adapted EMDs per attention type (first letter) and input pairing (second).
struct RegTerms {
  double attr_attr = 0.0;  // attribute attention, attribute-sharing pair
  double attr_obj = 0.0;   // attribute attention, object-sharing pair
  double obj_attr = 0.0;   // object attention, attribute-sharing pair
  double obj_obj = 0.0;    // object attention, object-sharing pair
};

// lambda_ao + lambda_oa - lambda_aa - lambda_oo.
double regularization_loss(const RegTerms& terms);

// Mean of the per-pair regularization losses.
double regularization_loss(const std::vector<RegTerms>& batch);

}  // namespace ade
