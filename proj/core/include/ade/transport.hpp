#pragma once

#include "ade/tensor.hpp"

namespace ade {

// Balanced transportation instance: move `supplies` (rows) to `demands`
// (columns) at per-unit `cost`.
struct TransportProblem {
  Matrix cost;
  Vector supplies;
  Vector demands;
};

// Optimal flow together with dual potentials. For the exact solver the plan is
// a vertex of the transportation polytope and the duals certify optimality:
// cost(i, j) - u(i) - v(j) >= 0 everywhere, == 0 on positive flow.
struct TransportPlan {
  Matrix flow;
  double objective = 0.0;
  Vector source_potentials;
  Vector destination_potentials;
  int pivots = 0;
};

struct SinkhornOptions {
  double epsilon = 0.05;
  int iterations = 200;
};

enum class TransportSolver { exact, sinkhorn };

// Relative tolerance on |sum(supplies) - sum(demands)|.
inline constexpr double kBalanceTolerance = 1e-9;

// Transportation simplex: north-west-corner start, MODI potentials, Bland's
// rule for both entering and leaving cells. Rows with zero supply and columns
// with zero demand are solved out and re-inserted with zero flow.
//
// Throws NumericError on unbalanced marginals and DataError on negative or
// non-finite input.
TransportPlan solve_transport(const TransportProblem& problem);

// Entropy-regularized approximation in the log domain. The marginals are met
// only approximately; duals are the scaled Sinkhorn potentials.
TransportPlan solve_sinkhorn(const TransportProblem& problem, const SinkhornOptions& options = {});

TransportPlan solve(const TransportProblem& problem, TransportSolver solver,
                    const SinkhornOptions& options = {});

// sum_ij (1 - c_ij) f_ij for a given plan.
double emd_similarity(const TransportProblem& problem, const TransportPlan& plan);

// Solves exactly and returns sum_ij (1 - c_ij) f_ij. With balanced marginals
// this equals sum(supplies) - optimal objective.
double emd_similarity(const TransportProblem& problem);

}  // namespace ade
