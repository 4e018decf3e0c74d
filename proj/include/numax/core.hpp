#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace numax {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised for inconsistent dimensions, invalid hyperparameters and malformed
/// input files. Maps to exit code 2 in the CLI.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a mathematical precondition fails (e.g. beta == 1 in the
/// momentum mapping, a == 0 in the critical gain formula).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when a step receives a NaN/Inf input. The caller's state is left
/// untouched since steps return new values.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline double linf(const Vector& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

/**
 * A constrained minimization problem
 *
 *   min_x f(x)  s.t.  g(x) <= 0,  h(x) = 0
 *
 * given as plain callables. The constraint Jacobian has shape
 * dim_primal x (num_ineq + num_eq); its columns are ordered with the
 * inequality block first, then the equality block. Every module relies on
 * that ordering when it stacks multipliers as theta = [lambda, mu].
 *
 * Callables must be re-entrant: the grid runner evaluates copies of the same
 * problem from several threads.
 */
struct ConstrainedProblem {
  std::string name;
  Eigen::Index dim_primal = 0;
  Eigen::Index num_ineq = 0;
  Eigen::Index num_eq = 0;

  std::function<double(const Vector&)> eval_objective;
  std::function<Vector(const Vector&)> eval_objective_grad;
  std::function<Vector(const Vector&)> eval_ineq;
  std::function<Vector(const Vector&)> eval_eq;
  std::function<Matrix(const Vector&)> eval_constraint_jacobian;

  Eigen::Index num_constraints() const { return num_ineq + num_eq; }

  /// c(x) = [g(x), h(x)]
  Vector eval_constraints(const Vector& x) const {
    Vector c(num_constraints());
    if (num_ineq > 0) c.head(num_ineq) = eval_ineq(x);
    if (num_eq > 0) c.tail(num_eq) = eval_eq(x);
    return c;
  }
};

/// Lagrange multipliers: lambda for inequalities (kept >= 0 by projection),
/// mu for equalities (free).
struct DualVector {
  Vector lambda;
  Vector mu;

  DualVector() = default;
  DualVector(Vector l, Vector m) : lambda(std::move(l)), mu(std::move(m)) {}

  static DualVector zeros(Eigen::Index m, Eigen::Index n) {
    return {Vector::Zero(m), Vector::Zero(n)};
  }

  /// Splits a stacked theta = [lambda, mu] with m inequality entries.
  static DualVector from_stacked(const Vector& theta, Eigen::Index m) {
    if (m < 0 || m > theta.size()) {
      throw ConfigError("from_stacked: inequality count out of range");
    }
    return {theta.head(m), theta.tail(theta.size() - m)};
  }

  Vector stacked() const {
    Vector theta(lambda.size() + mu.size());
    theta << lambda, mu;
    return theta;
  }

  Eigen::Index size() const { return lambda.size() + mu.size(); }
};

namespace detail {

inline void check_dims(const ConstrainedProblem& problem, const Vector& x,
                       const DualVector& duals, const char* where) {
  if (x.size() != problem.dim_primal) {
    throw ConfigError(std::string(where) + ": primal vector has length " +
                      std::to_string(x.size()) + ", problem expects " +
                      std::to_string(problem.dim_primal));
  }
  if (duals.lambda.size() != problem.num_ineq ||
      duals.mu.size() != problem.num_eq) {
    throw ConfigError(std::string(where) + ": multiplier lengths (" +
                      std::to_string(duals.lambda.size()) + ", " +
                      std::to_string(duals.mu.size()) +
                      ") do not match constraint counts (" +
                      std::to_string(problem.num_ineq) + ", " +
                      std::to_string(problem.num_eq) + ")");
  }
}

}  // namespace detail

/// L(x, lambda, mu) = f(x) + lambda^T g(x) + mu^T h(x)
inline double evaluate_lagrangian(const ConstrainedProblem& problem,
                                  const Vector& x, const DualVector& duals) {
  detail::check_dims(problem, x, duals, "evaluate_lagrangian");
  double value = problem.eval_objective(x);
  if (problem.num_ineq > 0) value += duals.lambda.dot(problem.eval_ineq(x));
  if (problem.num_eq > 0) value += duals.mu.dot(problem.eval_eq(x));
  return value;
}

/// grad_x L = grad f(x) + Jc(x) * [lambda; mu]
inline Vector lagrangian_primal_gradient(const ConstrainedProblem& problem,
                                         const Vector& x,
                                         const DualVector& duals) {
  detail::check_dims(problem, x, duals, "lagrangian_primal_gradient");
  Vector grad = problem.eval_objective_grad(x);
  if (problem.num_constraints() > 0) {
    grad.noalias() += problem.eval_constraint_jacobian(x) * duals.stacked();
  }
  return grad;
}

/// Projection onto R^m_+ x R^n. Negative zero is normalized to +0 so the
/// result is bit-stable under repeated projection.
inline DualVector project_duals(const DualVector& duals) {
  DualVector out = duals;
  for (Eigen::Index i = 0; i < out.lambda.size(); ++i) {
    const double v = out.lambda[i];
    out.lambda[i] = (v > 0.0) ? v : 0.0;
  }
  return out;
}

/// Same projection on a stacked theta whose first m entries are inequality
/// multipliers.
inline Vector project_stacked(Vector theta, Eigen::Index m) {
  for (Eigen::Index i = 0; i < m; ++i) {
    theta[i] = (theta[i] > 0.0) ? theta[i] : 0.0;
  }
  return theta;
}

struct GradientCheckFailure {
  Vector point;
  std::string what;
};

struct GradientReport {
  int points_checked = 0;
  double max_objective_rel_error = 0.0;
  double max_jacobian_rel_error = 0.0;
  double tolerance = 1e-5;
  std::vector<GradientCheckFailure> failures;

  double max_rel_error() const {
    return std::max(max_objective_rel_error, max_jacobian_rel_error);
  }
  bool passed() const {
    return failures.empty() && max_rel_error() <= tolerance;
  }
};

namespace detail {

// Relative error with an absolute floor of 1 so that near-zero entries do not
// blow up the ratio.
inline double rel_error(const Matrix& analytic, const Matrix& numeric) {
  if (analytic.size() == 0) return 0.0;
  const double scale = std::max(1.0, numeric.cwiseAbs().maxCoeff());
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

}  // namespace detail

/**
 * Compares analytic gradients and the constraint Jacobian against central
 * finite differences with step h_i = 1e-6 * max(1, |x_i|) at num_points
 * points drawn uniformly from [-scale, scale]^n around `center`.
 */
inline GradientReport validate_gradients(const ConstrainedProblem& problem,
                                         int num_points, std::uint64_t seed,
                                         double scale = 1.0,
                                         const Vector* center = nullptr) {
  GradientReport report;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-scale, scale);
  const Eigen::Index n = problem.dim_primal;
  const Eigen::Index nc = problem.num_constraints();

  for (int p = 0; p < num_points; ++p) {
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = unif(rng);
    if (center != nullptr) x += *center;

    const double f0 = problem.eval_objective(x);
    const Vector c0 = problem.eval_constraints(x);
    if (!std::isfinite(f0) || !c0.allFinite()) {
      report.failures.push_back({x, "non-finite function value"});
      continue;
    }
    const Vector grad = problem.eval_objective_grad(x);
    const Matrix jac = nc > 0 ? problem.eval_constraint_jacobian(x)
                              : Matrix(n, 0);
    if (grad.size() != n || jac.rows() != n || jac.cols() != nc) {
      report.failures.push_back({x, "gradient or Jacobian has wrong shape"});
      continue;
    }

    Vector fd_grad(n);
    Matrix fd_jac(n, nc);
    bool finite = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
      Vector xp = x;
      Vector xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fp = problem.eval_objective(xp);
      const double fm = problem.eval_objective(xm);
      fd_grad[i] = (fp - fm) / (2.0 * h);
      if (nc > 0) {
        fd_jac.row(i) = ((problem.eval_constraints(xp) -
                          problem.eval_constraints(xm)) /
                         (2.0 * h))
                            .transpose();
      }
      finite = finite && std::isfinite(fd_grad[i]) && fd_jac.row(i).allFinite();
    }
    if (!finite) {
      report.failures.push_back({x, "non-finite finite-difference value"});
      continue;
    }

    const double eg = detail::rel_error(grad, fd_grad);
    const double ej = detail::rel_error(jac, fd_jac);
    report.max_objective_rel_error = std::max(report.max_objective_rel_error, eg);
    report.max_jacobian_rel_error = std::max(report.max_jacobian_rel_error, ej);
    if (eg > report.tolerance) {
      report.failures.push_back({x, "objective gradient mismatch"});
    }
    if (ej > report.tolerance) {
      report.failures.push_back({x, "constraint Jacobian mismatch"});
    }
    ++report.points_checked;
  }
  return report;
}

/// Evaluation counters shared between copies of a counted problem.
struct EvalCounters {
  std::shared_ptr<long> objective = std::make_shared<long>(0);
  std::shared_ptr<long> ineq = std::make_shared<long>(0);
  std::shared_ptr<long> eq = std::make_shared<long>(0);
  std::shared_ptr<long> jacobian = std::make_shared<long>(0);
};

/// Wraps a problem so that every callable bumps a counter. Not thread-safe;
/// meant for single-run tests.
inline ConstrainedProblem counted(ConstrainedProblem problem,
                                  const EvalCounters& counters) {
  auto f = problem.eval_objective;
  auto g = problem.eval_ineq;
  auto h = problem.eval_eq;
  auto j = problem.eval_constraint_jacobian;
  problem.eval_objective = [f, c = counters.objective](const Vector& x) {
    ++*c;
    return f(x);
  };
  if (g) {
    problem.eval_ineq = [g, c = counters.ineq](const Vector& x) {
      ++*c;
      return g(x);
    };
  }
  if (h) {
    problem.eval_eq = [h, c = counters.eq](const Vector& x) {
      ++*c;
      return h(x);
    };
  }
  if (j) {
    problem.eval_constraint_jacobian = [j, c = counters.jacobian](
                                           const Vector& x) {
      ++*c;
      return j(x);
    };
  }
  return problem;
}

}  // namespace numax
