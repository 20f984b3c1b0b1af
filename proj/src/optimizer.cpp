#include "rekep/optimizer.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace rekep {

namespace {

// Enforces the evaluation budget and keeps the best point seen. Equal costs keep the earlier point.
class BudgetedEval {
 public:
  BudgetedEval(Objective& obj, int budget) : obj_(obj), budget_(std::max(0, budget)) {}

  std::optional<double> operator()(const Eigen::VectorXd& x) {
    if (used_ >= budget_) return std::nullopt;
    ++used_;
    const double f = obj_(x);
    if (!have_best_ || f < f_best_) {
      have_best_ = true;
      f_best_ = f;
      x_best_ = x;
    }
    return f;
  }

  int used() const { return used_; }
  int remaining() const { return budget_ - used_; }
  bool have_best() const { return have_best_; }
  double f_best() const { return f_best_; }
  const Eigen::VectorXd& x_best() const { return x_best_; }

 private:
  Objective& obj_;
  int budget_;
  int used_ = 0;
  bool have_best_ = false;
  double f_best_ = std::numeric_limits<double>::infinity();
  Eigen::VectorXd x_best_;
};

Eigen::VectorXd project(const Eigen::VectorXd& x) { return x.cwiseMax(-1.0).cwiseMin(1.0); }

// Backtracking search along +-e_i for each coordinate, used when the gradient step stalls at a
// kink of the objective. Returns true if any coordinate improved.
std::optional<bool> coordinate_pass(BudgetedEval& eval, Eigen::VectorXd& x, double& fx, const Eigen::VectorXd& g,
                                    const RefineOptions& opts) {
  bool improved = false;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (g[i] == 0.0) continue;
    const double dir = g[i] > 0.0 ? -1.0 : 1.0;
    for (double t = opts.coordinate_step; t >= opts.min_step; t *= opts.shrink) {
      Eigen::VectorXd xn = x;
      xn[i] = std::clamp(x[i] + dir * t, -1.0, 1.0);
      if (xn[i] == x[i]) break;
      const auto fn = eval(xn);
      if (!fn) return std::nullopt;
      if (*fn < fx) {
        x = xn;
        fx = *fn;
        improved = true;
        break;
      }
    }
  }
  return improved;
}

SolveReport refine_with(BudgetedEval& eval, const Eigen::VectorXd& start, const RefineOptions& opts) {
  const Eigen::Index n = start.size();
  Eigen::VectorXd x = project(start);
  SolveReport rep;
  auto finish = [&](bool converged) {
    rep.converged = converged;
    rep.x_best = eval.have_best() ? eval.x_best() : x;
    rep.f_best = eval.have_best() ? eval.f_best() : std::numeric_limits<double>::infinity();
    rep.evals_used = eval.used();
    return rep;
  };

  auto fx_opt = eval(x);
  if (!fx_opt) return finish(false);
  double fx = *fx_opt;

  Eigen::VectorXd g(n);
  const double h = opts.fd_step;

  while (true) {
    for (Eigen::Index i = 0; i < n; ++i) {
      // probes stay inside the box; at a bound the difference becomes one-sided
      Eigen::VectorXd xp = x, xm = x;
      xp[i] = std::min(x[i] + h, 1.0);
      xm[i] = std::max(x[i] - h, -1.0);
      const auto fp = eval(xp);
      if (!fp) return finish(false);
      const auto fm = eval(xm);
      if (!fm) return finish(false);
      g[i] = (*fp - *fm) / (xp[i] - xm[i]);
    }
    if (!g.allFinite()) return finish(false);
    if (g.squaredNorm() == 0.0) return finish(true);

    bool moved = false;
    double accepted = 0.0;
    for (double alpha = 1.0;; alpha *= opts.shrink) {
      const Eigen::VectorXd xn = project(x - alpha * g);
      const Eigen::VectorXd step = xn - x;
      if (step.norm() < opts.min_step) break;
      const auto fn = eval(xn);
      if (!fn) return finish(false);
      if (*fn <= fx + opts.armijo * g.dot(step)) {
        x = xn;
        fx = *fn;
        moved = true;
        accepted = alpha;
        break;
      }
    }
    if (moved && accepted >= opts.kink_alpha) continue;
    // Full step already below min_step: stationary point.
    if (!moved && (project(x - g) - x).norm() < opts.min_step) return finish(true);
    const auto improved = coordinate_pass(eval, x, fx, g, opts);
    if (!improved) return finish(false);
    if (!*improved && !moved) return finish(true);
  }
}

}  // namespace

SolveReport local_refine(Objective& objective, const Eigen::VectorXd& x0, int budget, const RefineOptions& opts) {
  BudgetedEval eval(objective, budget);
  return refine_with(eval, x0, opts);
}

SolveReport global_solve(Objective& objective, int n, int budget, std::uint64_t seed,
                         const std::optional<Eigen::VectorXd>& x0, const AnnealOptions& anneal,
                         const RefineOptions& refine) {
  BudgetedEval eval(objective, budget);
  std::mt19937_64 rng(seed);
  auto uniform = [&rng]() { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };

  Eigen::VectorXd x(n);
  if (x0) {
    x = project(*x0);
  } else {
    for (int i = 0; i < n; ++i) x[i] = 2.0 * uniform() - 1.0;
  }

  auto fx_opt = eval(x);
  if (!fx_opt) {
    SolveReport rep;
    rep.x_best = x;
    rep.f_best = std::numeric_limits<double>::infinity();
    return rep;
  }
  double fx = *fx_opt;

  const int anneal_budget = std::max(1, static_cast<int>(anneal.anneal_fraction * budget));
  const double t0 = anneal.initial_temperature;
  int k = 0;
  Eigen::VectorXd y(n);
  while (eval.used() < anneal_budget) {
    const double temp = t0 * std::pow(anneal.cooling, k);
    for (int i = 0; i < n; ++i) {
      const double cauchy = std::tan(std::numbers::pi * (uniform() - 0.5));
      y[i] = std::clamp(x[i] + anneal.proposal_scale * temp * cauchy, -1.0, 1.0);
    }
    const auto fy = eval(y);
    if (!fy) break;
    const double u = uniform();
    if (*fy <= fx || u < std::exp(-(*fy - fx) / temp)) {
      x = y;
      fx = *fy;
    }
    ++k;
    if (temp < anneal.restart_ratio * t0) {
      k = 0;
      x = eval.x_best();
      fx = eval.f_best();
    }
  }

  SolveReport rep = refine_with(eval, eval.x_best(), refine);
  return rep;
}

}  // namespace rekep
