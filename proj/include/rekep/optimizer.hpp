// Budgeted bounded minimizers over the normalized box [-1, 1]^n.
//
// global_solve: generalized simulated annealing (Cauchy proposals, geometric
// cooling, reannealing from the incumbent) followed by local_refine.
// local_refine: projected finite-difference gradient descent with a
// backtracking Armijo line search. When no gradient step decreases the cost
// (typically at a kink of a hinge or norm term) a per-coordinate backtracking
// pass runs before convergence is declared.
//
// Both are deterministic for a given (objective, seed, budget) and never call
// the objective more than `budget` times.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>

namespace rekep {

class Objective {
 public:
  using Function = std::function<double(const Eigen::VectorXd&)>;

  explicit Objective(Function f) : f_(std::move(f)) {}

  double operator()(const Eigen::VectorXd& x) {
    ++evaluations_;
    return f_(x);
  }
  long evaluations() const { return evaluations_; }

 private:
  Function f_;
  long evaluations_ = 0;
};

struct SolveReport {
  Eigen::VectorXd x_best;
  double f_best = 0.0;
  int evals_used = 0;
  bool converged = false;
};

struct AnnealOptions {
  double initial_temperature = 1.0;
  double cooling = 0.95;
  double proposal_scale = 0.5;
  /// Reanneal from the incumbent once T drops below this fraction of T0.
  double restart_ratio = 2e-5;
  /// Share of the budget spent annealing; the rest goes to local_refine.
  double anneal_fraction = 0.5;
};

struct RefineOptions {
  double fd_step = 1e-4;
  double shrink = 0.5;
  double armijo = 1e-4;
  double min_step = 1e-8;
  /// First trial step of the per-coordinate fallback used when the gradient step stalls.
  double coordinate_step = 0.25;
  /// Gradient steps accepted only below this step length also trigger the fallback.
  double kink_alpha = 1e-3;
};

SolveReport global_solve(Objective& objective, int n, int budget, std::uint64_t seed,
                         const std::optional<Eigen::VectorXd>& x0 = std::nullopt, const AnnealOptions& anneal = {},
                         const RefineOptions& refine = {});

SolveReport local_refine(Objective& objective, const Eigen::VectorXd& x0, int budget, const RefineOptions& opts = {});

}  // namespace rekep
