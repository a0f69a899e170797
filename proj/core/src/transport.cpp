#include "ade/transport.hpp"

#include "ade/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace ade {

namespace {

struct Cell {
  int row;
  int col;
};

void validate(const TransportProblem& p) {
  const auto m = p.supplies.size();
  const auto n = p.demands.size();
  if (m == 0 || n == 0) throw ShapeError("transport: empty supplies or demands");
  if (p.cost.rows() != m || p.cost.cols() != n) {
    throw ShapeError("transport: cost is " + std::to_string(p.cost.rows()) + "x" +
                     std::to_string(p.cost.cols()) + ", marginals are " + std::to_string(m) +
                     " and " + std::to_string(n));
  }
  if (!p.cost.allFinite() || !p.supplies.allFinite() || !p.demands.allFinite()) {
    throw DataError("transport: non-finite input");
  }
  if ((p.supplies.array() < 0.0).any() || (p.demands.array() < 0.0).any()) {
    throw DataError("transport: negative supply or demand");
  }
  const double s = p.supplies.sum();
  const double d = p.demands.sum();
  if (std::abs(s - d) > kBalanceTolerance * std::max(1.0, std::max(s, d))) {
    throw NumericError("transport: unbalanced marginals (supply " + std::to_string(s) +
                       ", demand " + std::to_string(d) + ")");
  }
}

// Indices of strictly positive entries.
std::vector<int> support(const Vector& v) {
  std::vector<int> idx;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] > 0.0) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

// Simplex on a problem whose marginals are all strictly positive.
class TransportationSimplex {
 public:
  TransportationSimplex(const Matrix& cost, const Vector& supply, const Vector& demand)
      : cost_(cost), m_(static_cast<int>(cost.rows())), n_(static_cast<int>(cost.cols())),
        flow_(Matrix::Zero(m_, n_)), basic_(m_ * n_, 0), u_(m_), v_(n_) {
    north_west_corner(supply, demand);
  }

  void run() {
    const double scale = 1.0 + cost_.cwiseAbs().maxCoeff();
    const double tol = 1e-12 * scale;
    const int max_pivots = 50 * (m_ + n_) * (m_ + n_) + 1000;
    for (;;) {
      compute_potentials();
      const int entering = find_entering(tol);
      if (entering < 0) return;
      if (pivots_ >= max_pivots) throw NumericError("transport: pivot limit exceeded");
      pivot(Cell{entering / n_, entering % n_});
      ++pivots_;
    }
  }

  const Matrix& flow() const { return flow_; }
  const Vector& u() const { return u_; }
  const Vector& v() const { return v_; }
  int pivots() const { return pivots_; }

 private:
  bool is_basic(int i, int j) const { return basic_[i * n_ + j] != 0; }

  void north_west_corner(const Vector& supply, const Vector& demand) {
    Vector rs = supply;
    Vector rd = demand;
    int i = 0;
    int j = 0;
    for (;;) {
      const double x = std::min(rs[i], rd[j]);
      flow_(i, j) = x;
      basic_[i * n_ + j] = 1;
      if (i == m_ - 1 && j == n_ - 1) break;
      if (i == m_ - 1) {
        rd[j] = 0.0;
        rs[i] -= x;
        ++j;
      } else if (j == n_ - 1) {
        rs[i] = 0.0;
        rd[j] -= x;
        ++i;
      } else if (rs[i] < rd[j]) {
        rd[j] -= x;
        rs[i] = 0.0;
        ++i;
      } else if (rs[i] > rd[j]) {
        rs[i] -= x;
        rd[j] = 0.0;
        ++j;
      } else {
        // Degenerate corner: both exhausted; step down and carry a zero basic cell.
        rs[i] = 0.0;
        rd[j] = 0.0;
        ++i;
      }
    }
  }

  // Nodes 0..m-1 are rows, m..m+n-1 are columns. The basis is a spanning tree.
  void build_adjacency() {
    adjacency_.assign(m_ + n_, {});
    for (int i = 0; i < m_; ++i) {
      for (int j = 0; j < n_; ++j) {
        if (is_basic(i, j)) {
          adjacency_[i].push_back(m_ + j);
          adjacency_[m_ + j].push_back(i);
        }
      }
    }
  }

  void compute_potentials() {
    build_adjacency();
    std::vector<char> seen(m_ + n_, 0);
    std::vector<int> stack{0};
    u_[0] = 0.0;
    seen[0] = 1;
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      for (int next : adjacency_[node]) {
        if (seen[next]) continue;
        seen[next] = 1;
        if (node < m_) {
          v_[next - m_] = cost_(node, next - m_) - u_[node];
        } else {
          u_[next] = cost_(next, node - m_) - v_[node - m_];
        }
        stack.push_back(next);
      }
    }
  }

  int find_entering(double tol) const {
    for (int i = 0; i < m_; ++i) {
      for (int j = 0; j < n_; ++j) {
        if (is_basic(i, j)) continue;
        if (cost_(i, j) - u_[i] - v_[j] < -tol) return i * n_ + j;
      }
    }
    return -1;
  }

  // Tree path from column node of `entering` to its row node, as cells.
  std::vector<Cell> tree_path(const Cell& entering) const {
    const int start = m_ + entering.col;
    const int goal = entering.row;
    std::vector<int> parent(m_ + n_, -1);
    std::vector<int> queue{start};
    parent[start] = start;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const int node = queue[head];
      if (node == goal) break;
      for (int next : adjacency_[node]) {
        if (parent[next] >= 0) continue;
        parent[next] = node;
        queue.push_back(next);
      }
    }
    if (parent[goal] < 0) throw NumericError("transport: basis is not a spanning tree");
    std::vector<Cell> cells;
    for (int node = goal; node != start; node = parent[node]) {
      const int prev = parent[node];
      const int row = node < m_ ? node : prev;
      const int col = (node < m_ ? prev : node) - m_;
      cells.push_back(Cell{row, col});
    }
    std::reverse(cells.begin(), cells.end());
    return cells;
  }

  void pivot(const Cell& entering) {
    // Cycle: entering (+), then path cells alternate (-, +, -, ...).
    const std::vector<Cell> path = tree_path(entering);
    double theta = std::numeric_limits<double>::infinity();
    int leaving = -1;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const Cell& c = path[k];
      const double f = flow_(c.row, c.col);
      const int index = c.row * n_ + c.col;
      if (f < theta || (f == theta && index < leaving)) {
        theta = f;
        leaving = index;
      }
    }
    flow_(entering.row, entering.col) += theta;
    for (std::size_t k = 0; k < path.size(); ++k) {
      const Cell& c = path[k];
      flow_(c.row, c.col) += (k % 2 == 0) ? -theta : theta;
    }
    flow_(leaving / n_, leaving % n_) = 0.0;
    basic_[leaving] = 0;
    basic_[entering.row * n_ + entering.col] = 1;
  }

  const Matrix& cost_;
  int m_;
  int n_;
  Matrix flow_;
  std::vector<char> basic_;
  std::vector<std::vector<int>> adjacency_;
  Vector u_;
  Vector v_;
  int pivots_ = 0;
};

double log_sum_exp(const Eigen::Ref<const Vector>& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

// Fills duals of rows/columns that were solved out so the plan stays dual
// feasible: u_i = min_j (c_ij - v_j), then v_j = min_i (c_ij - u_i).
void complete_duals(const Matrix& cost, const std::vector<int>& rows, const std::vector<int>& cols,
                    TransportPlan& plan) {
  const auto m = cost.rows();
  const auto n = cost.cols();
  std::vector<char> row_kept(m, 0);
  std::vector<char> col_kept(n, 0);
  for (int i : rows) row_kept[i] = 1;
  for (int j : cols) col_kept[j] = 1;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (row_kept[i]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (int j : cols) best = std::min(best, cost(i, j) - plan.destination_potentials[j]);
    plan.source_potentials[i] = std::isfinite(best) ? best : 0.0;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (col_kept[j]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) best = std::min(best, cost(i, j) - plan.source_potentials[i]);
    plan.destination_potentials[j] = best;
  }
}

TransportPlan empty_plan(const TransportProblem& p) {
  TransportPlan plan;
  plan.flow = Matrix::Zero(p.cost.rows(), p.cost.cols());
  plan.source_potentials = Vector::Zero(p.supplies.size());
  plan.destination_potentials = Vector::Zero(p.demands.size());
  return plan;
}

}  // namespace

TransportPlan solve_transport(const TransportProblem& problem) {
  validate(problem);
  TransportPlan plan = empty_plan(problem);
  const std::vector<int> rows = support(problem.supplies);
  const std::vector<int> cols = support(problem.demands);
  if (rows.empty() || cols.empty()) {
    complete_duals(problem.cost, rows, cols, plan);
    return plan;
  }

  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto n = static_cast<Eigen::Index>(cols.size());
  Matrix cost(m, n);
  Vector supply(m);
  Vector demand(n);
  for (Eigen::Index a = 0; a < m; ++a) {
    supply[a] = problem.supplies[rows[a]];
    for (Eigen::Index b = 0; b < n; ++b) cost(a, b) = problem.cost(rows[a], cols[b]);
  }
  for (Eigen::Index b = 0; b < n; ++b) demand[b] = problem.demands[cols[b]];
  // Absorb the (tolerated) imbalance into the demands.
  demand *= supply.sum() / demand.sum();

  TransportationSimplex simplex(cost, supply, demand);
  simplex.run();

  for (Eigen::Index a = 0; a < m; ++a) {
    plan.source_potentials[rows[a]] = simplex.u()[a];
    for (Eigen::Index b = 0; b < n; ++b) plan.flow(rows[a], cols[b]) = simplex.flow()(a, b);
  }
  for (Eigen::Index b = 0; b < n; ++b) plan.destination_potentials[cols[b]] = simplex.v()[b];
  complete_duals(problem.cost, rows, cols, plan);
  plan.objective = problem.cost.cwiseProduct(plan.flow).sum();
  plan.pivots = simplex.pivots();
  return plan;
}

TransportPlan solve_sinkhorn(const TransportProblem& problem, const SinkhornOptions& options) {
  validate(problem);
  if (!(options.epsilon > 0.0) || options.iterations <= 0) {
    throw UsageError("sinkhorn: epsilon and iterations must be positive");
  }
  TransportPlan plan = empty_plan(problem);
  const std::vector<int> rows = support(problem.supplies);
  const std::vector<int> cols = support(problem.demands);
  if (rows.empty() || cols.empty()) return plan;

  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto n = static_cast<Eigen::Index>(cols.size());
  const double eps = options.epsilon;
  Matrix cost(m, n);
  Vector log_s(m);
  Vector log_d(n);
  for (Eigen::Index a = 0; a < m; ++a) {
    log_s[a] = std::log(problem.supplies[rows[a]]);
    for (Eigen::Index b = 0; b < n; ++b) cost(a, b) = problem.cost(rows[a], cols[b]);
  }
  const double total_d = [&] {
    double t = 0.0;
    for (int j : cols) t += problem.demands[j];
    return t;
  }();
  const double total_s = problem.supplies.sum();
  for (Eigen::Index b = 0; b < n; ++b) {
    log_d[b] = std::log(problem.demands[cols[b]] * total_s / total_d);
  }

  Vector f = Vector::Zero(m);
  Vector g = Vector::Zero(n);
  Vector work;
  for (int it = 0; it < options.iterations; ++it) {
    for (Eigen::Index a = 0; a < m; ++a) {
      work = (g - cost.row(a).transpose()) / eps;
      f[a] = eps * (log_s[a] - log_sum_exp(work));
    }
    for (Eigen::Index b = 0; b < n; ++b) {
      work = (f - cost.col(b)) / eps;
      g[b] = eps * (log_d[b] - log_sum_exp(work));
    }
  }
  for (Eigen::Index a = 0; a < m; ++a) {
    plan.source_potentials[rows[a]] = f[a];
    for (Eigen::Index b = 0; b < n; ++b) {
      plan.flow(rows[a], cols[b]) = std::exp((f[a] + g[b] - cost(a, b)) / eps);
    }
  }
  for (Eigen::Index b = 0; b < n; ++b) plan.destination_potentials[cols[b]] = g[b];
  complete_duals(problem.cost, rows, cols, plan);
  plan.objective = problem.cost.cwiseProduct(plan.flow).sum();
  return plan;
}

TransportPlan solve(const TransportProblem& problem, TransportSolver solver,
                    const SinkhornOptions& options) {
  return solver == TransportSolver::exact ? solve_transport(problem)
                                          : solve_sinkhorn(problem, options);
}

double emd_similarity(const TransportProblem& problem, const TransportPlan& plan) {
  return (1.0 - problem.cost.array()).cwiseProduct(plan.flow.array()).sum();
}

double emd_similarity(const TransportProblem& problem) {
  return emd_similarity(problem, solve_transport(problem));
}

}  // namespace ade
