#pragma once

#include <chrono>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

namespace dopf {

enum class Sense { Minimize, Maximize };

using Triplet = Eigen::Triplet<double>;

/// Bounded-variable nonlinear program
///
///   min/max f(x)  s.t.  c(x) = 0,  g(x) <= 0,  lower <= x <= upper.
///
/// Infinite bounds are allowed. Jacobian and Hessian callbacks append
/// triplets; their sparsity structure must not depend on x or the
/// multipliers (emit explicit zeros where needed). Duplicate entries are summed.
class NlpProblem {
 public:
  virtual ~NlpProblem() = default;

  virtual int num_vars() const = 0;
  virtual int num_eq() const = 0;
  virtual int num_ineq() const { return 0; }
  virtual Sense sense() const { return Sense::Minimize; }

  virtual void bounds(std::span<double> lower, std::span<double> upper) const = 0;

  virtual double objective(std::span<const double> x) const = 0;
  virtual void objective_gradient(std::span<const double> x, std::span<double> grad) const = 0;

  virtual void eq_values(std::span<const double> x, std::span<double> values) const = 0;
  virtual void eq_jacobian(std::span<const double> x, std::vector<Triplet>& out) const = 0;

  virtual void ineq_values(std::span<const double> /*x*/, std::span<double> /*values*/) const {}
  virtual void ineq_jacobian(std::span<const double> /*x*/, std::vector<Triplet>& /*out*/) const {}

  /// Lower triangle (row >= col) of
  ///   obj_factor * d2f + sum_i eq_mult[i] * d2c_i + sum_i ineq_mult[i] * d2g_i.
  virtual void lagrangian_hessian(std::span<const double> x, double obj_factor, std::span<const double> eq_mult,
                                  std::span<const double> ineq_mult, std::vector<Triplet>& out) const = 0;
};

enum class NlpStatus { Optimal, MaxIterations, Infeasible, TimeLimit };

const char* to_string(NlpStatus status);

struct NlpSolution {
  std::vector<double> x;
  double objective = 0.0;  ///< in the problem's own sense
  /// max(stationarity, complementarity, constraint violation). The first two
  /// are measured with the objective normalized by its gradient scale at x0.
  double kkt_residual = 0.0;
  NlpStatus status = NlpStatus::MaxIterations;
  int iterations = 0;

  // Multipliers in the unscaled minimization form:
  //   grad f + J_c^T eq_mult + J_g^T ineq_mult - lower_mult + upper_mult = 0.
  std::vector<double> eq_mult;
  std::vector<double> ineq_mult;
  std::vector<double> lower_mult;
  std::vector<double> upper_mult;
  double final_mu = 0.0;
  bool used_elastic = false;
};

struct NlpOptions {
  double kkt_tol = 1e-6;
  int max_iter = 300;
  double mu_init = 0.1;
  double barrier_factor = 0.2;   ///< linear part of the monotone barrier update
  double barrier_power = 1.5;    ///< superlinear part, mu^power
  double tau_min = 0.99;         ///< fraction-to-the-boundary floor
  double bound_push = 1e-2;
  double bound_frac = 1e-2;
  double max_gradient_scale = 100.0;  ///< rows/objective with larger gradients are scaled down
  bool elastic_retry = true;
  double elastic_penalty = 1e4;
  /// KKT systems up to this dimension use a dense factorization.
  int dense_threshold = 120;
  std::optional<std::chrono::steady_clock::time_point> deadline;
  std::ostream* log = nullptr;
};

/// Primal-dual interior-point method with a log barrier on bounds, slack
/// inequalities, l1-merit backtracking line search with a second-order
/// correction and regularization driven by a curvature test. On failure the
/// problem is re-posed with elastic slacks on every constraint once before
/// reporting Infeasible. Deterministic for identical inputs.
///
/// `warm`, when given, seeds the multipliers; x0 is projected into the
/// bounds either way.
NlpSolution solve(const NlpProblem& problem, std::span<const double> x0, const NlpOptions& options = {},
                  const NlpSolution* warm = nullptr);

struct DerivativeReport {
  double gradient = 0.0;
  double eq_jacobian = 0.0;
  double ineq_jacobian = 0.0;
  double hessian = 0.0;

  double worst() const;
};

/// Central finite differences with step h. Errors are |analytic - fd| / max(1, |fd|).
/// The Hessian check differentiates grad f + J_c^T y + J_g^T z for fixed
/// pseudo-random multipliers drawn from `seed`.
DerivativeReport check_derivatives(const NlpProblem& problem, std::span<const double> x, double h,
                                   unsigned seed = 7);

}  // namespace dopf
