#pragma once

#include <cmath>
#include <cstring>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "numax/core.hpp"
#include "numax/csv.hpp"
#include "numax/dual_optimizers.hpp"

namespace numax {

enum class PrimalKind { GradientDescent, GradientDescentMomentum, Adam };

struct PrimalOptimizerConfig {
  PrimalKind kind = PrimalKind::GradientDescent;
  double step_size = 1e-3;
  double momentum = 0.9;  // GradientDescentMomentum
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Stateful primal update. Heavy-ball momentum keeps a velocity buffer
/// b <- momentum * b + grad, x <- x - step * b.
class PrimalOptimizer {
 public:
  PrimalOptimizer(PrimalOptimizerConfig config, Eigen::Index dim)
      : config_(config),
        buffer_(Vector::Zero(dim)),
        second_(Vector::Zero(dim)) {
    if (!(config_.step_size > 0.0)) {
      throw ConfigError("primal step_size must be > 0");
    }
  }

  Vector step(const Vector& x, const Vector& grad) {
    switch (config_.kind) {
      case PrimalKind::GradientDescent:
        return x - config_.step_size * grad;
      case PrimalKind::GradientDescentMomentum:
        buffer_ = config_.momentum * buffer_ + grad;
        return x - config_.step_size * buffer_;
      case PrimalKind::Adam: {
        ++steps_;
        buffer_ = config_.beta1 * buffer_ + (1.0 - config_.beta1) * grad;
        second_ = config_.beta2 * second_ +
                  (1.0 - config_.beta2) * grad.cwiseProduct(grad);
        const double t = static_cast<double>(steps_);
        const Vector m_hat = buffer_ / (1.0 - std::pow(config_.beta1, t));
        const Vector v_hat = second_ / (1.0 - std::pow(config_.beta2, t));
        return x - config_.step_size *
                       m_hat.cwiseQuotient(
                           (v_hat.cwiseSqrt().array() + config_.eps).matrix());
      }
    }
    throw ConfigError("unknown primal optimizer");
  }

 private:
  PrimalOptimizerConfig config_;
  Vector buffer_;
  Vector second_;
  long steps_ = 0;
};

enum class Scheme { Alternating, Simultaneous };

struct LoopConfig {
  Scheme scheme = Scheme::Alternating;
  long max_steps = 1000;
  DualOptimizerConfig dual = GAConfig{1e-2};
  PrimalOptimizerConfig primal;
  bool dual_restarts = false;
  long record_every = 1;
  std::optional<double> stop_tolerance;
};

/// Consecutive recorded steps below tolerance required before stopping.
inline constexpr int kStopPatience = 10;

enum class TerminatedReason { MaxSteps, Tolerance, NonFinite };

inline std::string to_string(TerminatedReason reason) {
  switch (reason) {
    case TerminatedReason::MaxSteps:
      return "MaxSteps";
    case TerminatedReason::Tolerance:
      return "Tolerance";
    case TerminatedReason::NonFinite:
      return "NonFinite";
  }
  return "?";
}

inline TerminatedReason terminated_reason_from_string(const std::string& s) {
  if (s == "MaxSteps") return TerminatedReason::MaxSteps;
  if (s == "Tolerance") return TerminatedReason::Tolerance;
  if (s == "NonFinite") return TerminatedReason::NonFinite;
  throw ConfigError("unknown terminated reason '" + s + "'");
}

/// State at iteration t, before the updates of that iteration.
struct TrajectoryRecord {
  long t = 0;
  Vector x;
  double f = 0.0;
  Vector g;
  Vector h;
  Vector lambda;
  Vector mu;
  double lagrangian = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryRecord> steps;
  TerminatedReason terminated_reason = TerminatedReason::MaxSteps;
  long iterations = 0;  // completed primal-dual iterations
  Vector final_x;
  DualVector final_duals;
};

namespace detail {

inline Trajectory run_gda(const ConstrainedProblem& problem, const Vector& x0,
                          const DualVector& duals0, const LoopConfig& config) {
  check_dims(problem, x0, duals0, "run");
  if (config.max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (config.record_every < 1) throw ConfigError("record_every must be >= 1");
  if (!x0.allFinite()) throw ConfigError("x0 must be finite");
  if (duals0.lambda.size() > 0 && duals0.lambda.minCoeff() < 0.0) {
    throw ConfigError("initial inequality multipliers must be >= 0");
  }

  const Eigen::Index m = problem.num_ineq;
  const Eigen::Index nc = problem.num_constraints();
  const bool alternating = config.scheme == Scheme::Alternating;

  DualOptimizer dual(config.dual, duals0.stacked());
  PrimalOptimizer primal(config.primal, problem.dim_primal);

  Trajectory traj;
  Vector x = x0;
  Vector theta = duals0.stacked();
  int calm_streak = 0;

  for (long t = 0; t < config.max_steps; ++t) {
    // One evaluation of f and c per iteration; everything below reuses them.
    const double f = problem.eval_objective(x);
    const Vector g = m > 0 ? problem.eval_ineq(x) : Vector(0);
    const Vector h = problem.num_eq > 0 ? problem.eval_eq(x) : Vector(0);
    Vector c(nc);
    c.head(m) = g;
    c.tail(problem.num_eq) = h;

    const bool finite = std::isfinite(f) && c.allFinite() && x.allFinite();
    const bool recording = (t % config.record_every) == 0;
    if (recording || !finite) {
      TrajectoryRecord rec;
      rec.t = t;
      rec.x = x;
      rec.f = f;
      rec.g = g;
      rec.h = h;
      rec.lambda = theta.head(m);
      rec.mu = theta.tail(problem.num_eq);
      rec.lagrangian = f + theta.dot(c);
      traj.steps.push_back(std::move(rec));
    }
    if (!finite) {
      traj.terminated_reason = TerminatedReason::NonFinite;
      break;
    }

    Vector theta_next;
    try {
      theta_next = project_stacked(dual.step(c), m);
    } catch (const NonFiniteError&) {
      traj.terminated_reason = TerminatedReason::NonFinite;
      break;
    }
    if (config.dual_restarts && m > 0) {
      for (Eigen::Index i = 0; i < m; ++i) {
        if (g[i] < 0.0) theta_next[i] = 0.0;
      }
    }
    dual.set_theta(theta_next);

    const Vector& theta_for_primal = alternating ? theta_next : theta;
    Vector grad = problem.eval_objective_grad(x);
    if (nc > 0) {
      grad.noalias() += problem.eval_constraint_jacobian(x) * theta_for_primal;
    }
    const double dual_increment = linf(theta_next - theta);
    x = primal.step(x, grad);
    theta = std::move(theta_next);
    traj.iterations = t + 1;

    if (config.stop_tolerance && recording) {
      const double tol = *config.stop_tolerance;
      calm_streak = (linf(c) <= tol && dual_increment <= tol) ? calm_streak + 1
                                                              : 0;
      if (calm_streak >= kStopPatience) {
        traj.terminated_reason = TerminatedReason::Tolerance;
        break;
      }
    }
  }

  traj.final_x = x;
  traj.final_duals = DualVector::from_stacked(theta, m);
  return traj;
}

}  // namespace detail

/**
 * Alternating gradient descent-ascent. Per iteration: evaluate c(x_t), take
 * the dual step with error c(x_t), project lambda, optionally restart, then
 * move x using grad f(x_t) + Jc(x_t) theta_{t+1}.
 */
inline Trajectory run_alternating(const ConstrainedProblem& problem,
                                  const Vector& x0, const DualVector& duals0,
                                  LoopConfig config) {
  config.scheme = Scheme::Alternating;
  return detail::run_gda(problem, x0, duals0, config);
}

/// Simultaneous GDA: the primal step sees theta_t, not theta_{t+1}.
inline Trajectory run_simultaneous(const ConstrainedProblem& problem,
                                   const Vector& x0, const DualVector& duals0,
                                   LoopConfig config) {
  config.scheme = Scheme::Simultaneous;
  return detail::run_gda(problem, x0, duals0, config);
}

inline Trajectory run(const ConstrainedProblem& problem, const Vector& x0,
                      const DualVector& duals0, const LoopConfig& config) {
  return detail::run_gda(problem, x0, duals0, config);
}

// ---------------------------------------------------------------------------
// CSV export
//
//   # numax trajectory num_ineq=<m> num_eq=<n> dim_primal=<d> terminated=<r>
//   t,f,linf_g,linf_h,lagrangian,lambda_0..,mu_0..,x_0..

/// One parsed CSV row. Only the columns written to disk are kept.
struct TrajectoryRow {
  long t = 0;
  double f = 0.0;
  double linf_g = 0.0;
  double linf_h = 0.0;
  double lagrangian = 0.0;
  Vector lambda;
  Vector mu;
  Vector x;

  bool operator==(const TrajectoryRow& o) const;
};

namespace detail {

// Bitwise comparison so NaN rows compare equal to themselves.
inline bool same_bits(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

inline bool same_bits(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!same_bits(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace detail

inline bool TrajectoryRow::operator==(const TrajectoryRow& o) const {
  return t == o.t && detail::same_bits(f, o.f) &&
         detail::same_bits(linf_g, o.linf_g) &&
         detail::same_bits(linf_h, o.linf_h) &&
         detail::same_bits(lagrangian, o.lagrangian) &&
         detail::same_bits(lambda, o.lambda) && detail::same_bits(mu, o.mu) &&
         detail::same_bits(x, o.x);
}

struct TrajectoryTable {
  Eigen::Index num_ineq = 0;
  Eigen::Index num_eq = 0;
  Eigen::Index dim_primal = 0;
  TerminatedReason terminated_reason = TerminatedReason::MaxSteps;
  std::vector<TrajectoryRow> rows;
};

inline TrajectoryRow to_row(const TrajectoryRecord& rec) {
  TrajectoryRow row;
  row.t = rec.t;
  row.f = rec.f;
  row.linf_g = linf(rec.g);
  row.linf_h = linf(rec.h);
  row.lagrangian = rec.lagrangian;
  row.lambda = rec.lambda;
  row.mu = rec.mu;
  row.x = rec.x;
  return row;
}

inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj,
                                 Eigen::Index num_ineq, Eigen::Index num_eq,
                                 Eigen::Index dim_primal) {
  out << "# numax trajectory num_ineq=" << num_ineq << " num_eq=" << num_eq
      << " dim_primal=" << dim_primal
      << " terminated=" << to_string(traj.terminated_reason) << "\n";
  out << "t,f,linf_g,linf_h,lagrangian";
  for (Eigen::Index i = 0; i < num_ineq; ++i) out << ",lambda_" << i;
  for (Eigen::Index i = 0; i < num_eq; ++i) out << ",mu_" << i;
  for (Eigen::Index i = 0; i < dim_primal; ++i) out << ",x_" << i;
  out << "\n";
  for (const auto& rec : traj.steps) {
    const TrajectoryRow row = to_row(rec);
    out << row.t << ',' << csv::format(row.f) << ',' << csv::format(row.linf_g)
        << ',' << csv::format(row.linf_h) << ',' << csv::format(row.lagrangian);
    for (double v : row.lambda) out << ',' << csv::format(v);
    for (double v : row.mu) out << ',' << csv::format(v);
    for (double v : row.x) out << ',' << csv::format(v);
    out << "\n";
  }
}

inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj,
                                 const ConstrainedProblem& problem) {
  write_trajectory_csv(out, traj, problem.num_ineq, problem.num_eq,
                       problem.dim_primal);
}

inline TrajectoryTable read_trajectory_csv(std::istream& in) {
  std::vector<std::string> comments;
  const auto lines = csv::read_lines(in, &comments);
  TrajectoryTable table;
  bool have_meta = false;
  for (const auto& c : comments) {
    std::istringstream ss(c);
    std::string tok;
    while (ss >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "num_ineq") table.num_ineq = std::stol(val), have_meta = true;
      if (key == "num_eq") table.num_eq = std::stol(val);
      if (key == "dim_primal") table.dim_primal = std::stol(val);
      if (key == "terminated") {
        table.terminated_reason = terminated_reason_from_string(val);
      }
    }
  }
  if (!have_meta) throw ConfigError("trajectory csv: missing '#' header line");
  if (lines.empty()) throw ConfigError("trajectory csv: missing column header");

  const Eigen::Index width =
      5 + table.num_ineq + table.num_eq + table.dim_primal;
  if (static_cast<Eigen::Index>(csv::split(lines.front().text).size()) !=
      width) {
    throw ConfigError("trajectory csv: column header does not match metadata");
  }
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& line = lines[k];
    const auto cells = csv::split(line.text);
    const std::string where = "line " + std::to_string(line.number);
    if (static_cast<Eigen::Index>(cells.size()) != width) {
      throw ConfigError(where + ": expected " + std::to_string(width) +
                        " columns, got " + std::to_string(cells.size()));
    }
    TrajectoryRow row;
    row.t = static_cast<long>(csv::parse_double(cells[0], where));
    row.f = csv::parse_double(cells[1], where);
    row.linf_g = csv::parse_double(cells[2], where);
    row.linf_h = csv::parse_double(cells[3], where);
    row.lagrangian = csv::parse_double(cells[4], where);
    std::size_t col = 5;
    auto take = [&](Eigen::Index n) {
      Vector v(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        v[i] = csv::parse_double(cells[col++], where);
      }
      return v;
    };
    row.lambda = take(table.num_ineq);
    row.mu = take(table.num_eq);
    row.x = take(table.dim_primal);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace numax
