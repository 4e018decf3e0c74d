#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "numax/analysis.hpp"
#include "numax/core.hpp"
#include "numax/csv.hpp"

namespace numax {

// ---------------------------------------------------------------------------
// Hard-margin linear SVM.

struct SvmDataset {
  Matrix points;  // m x d
  Vector labels;  // +1 / -1

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
};

inline void validate(const SvmDataset& data) {
  if (data.points.rows() == 0) throw ConfigError("SVM dataset is empty");
  if (data.labels.size() != data.points.rows()) {
    throw ConfigError("SVM dataset: label count does not match point count");
  }
  bool pos = false;
  bool neg = false;
  for (Eigen::Index i = 0; i < data.labels.size(); ++i) {
    const double y = data.labels[i];
    if (y == 1.0) {
      pos = true;
    } else if (y == -1.0) {
      neg = true;
    } else {
      throw ConfigError("SVM dataset: label " + std::to_string(y) +
                        " at row " + std::to_string(i) + " is not +1/-1");
    }
  }
  if (data.points.rows() < 2 || !pos || !neg) {
    throw ConfigError("SVM dataset: needs at least one point of each class");
  }
}

/**
 * min ||w||^2 / 2  s.t.  g_i(w, b) = 1 - y_i (w^T x_i + b) <= 0.
 * Primal variable is [w; b] of length d + 1.
 */
inline ConstrainedProblem build_svm_problem(const SvmDataset& data) {
  validate(data);
  const Eigen::Index d = data.dim();
  const Eigen::Index m = data.size();
  // Rows y_i [x_i, 1], so g(z) = 1 - Z z and the Jacobian is -Z^T.
  Matrix Z(m, d + 1);
  Z.leftCols(d) = data.labels.asDiagonal() * data.points;
  Z.col(d) = data.labels;

  ConstrainedProblem p;
  p.name = "svm";
  p.dim_primal = d + 1;
  p.num_ineq = m;
  p.num_eq = 0;
  p.eval_objective = [d](const Vector& z) {
    return 0.5 * z.head(d).squaredNorm();
  };
  p.eval_objective_grad = [d](const Vector& z) {
    Vector g = Vector::Zero(d + 1);
    g.head(d) = z.head(d);
    return g;
  };
  p.eval_ineq = [Z](const Vector& z) -> Vector {
    return Vector::Ones(Z.rows()) - Z * z;
  };
  p.eval_eq = [](const Vector&) { return Vector(0); };
  p.eval_constraint_jacobian = [Z](const Vector&) -> Matrix {
    return -Z.transpose();
  };
  return p;
}

/// Fraction of points with sign(w^T x + b) == y. A zero score counts as wrong.
inline double svm_accuracy(const SvmDataset& data, const Vector& w, double b) {
  const Vector score = data.points * w + Vector::Constant(data.size(), b);
  long correct = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (score[i] * data.labels[i] > 0.0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

enum class OracleStatus { Optimal, Infeasible, NotConverged };

inline std::string to_string(OracleStatus s) {
  switch (s) {
    case OracleStatus::Optimal:
      return "optimal";
    case OracleStatus::Infeasible:
      return "infeasible";
    case OracleStatus::NotConverged:
      return "not_converged";
  }
  return "?";
}

struct SvmOracleResult {
  OracleStatus status = OracleStatus::NotConverged;
  Vector w;
  double b = 0.0;
  Vector lambda;
  std::vector<Eigen::Index> support;
  // KKT residuals, all in the infinity norm.
  double stationarity = 0.0;        // w - sum lambda_i y_i x_i
  double complementarity = 0.0;     // lambda_i g_i
  double dual_feasibility = 0.0;    // max(0, -lambda_i)
  double primal_feasibility = 0.0;  // max(0, g_i)
  double balance = 0.0;             // |sum lambda_i y_i|
  long iterations = 0;

  double kkt_residual() const {
    return std::max({stationarity, complementarity, dual_feasibility,
                     primal_feasibility, balance});
  }
};

namespace detail {

/// Euclidean projection onto {lambda >= 0, y^T lambda = 0}:
/// lambda_i = max(0, v_i - tau y_i) with tau from bisection on the
/// monotone balance function.
inline Vector project_svm_dual(const Vector& v, const Vector& y) {
  auto balance = [&](double tau) {
    return (v - tau * y).cwiseMax(0.0).dot(y);
  };
  double lo = -1.0;
  double hi = 1.0;
  while (balance(lo) < 0.0) lo *= 2.0;
  while (balance(hi) > 0.0) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (balance(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return (v - 0.5 * (lo + hi) * y).cwiseMax(0.0);
}

}  // namespace detail

/// Fills w, b and the KKT residuals from lambda (and b).
inline void svm_kkt_report(const SvmDataset& data, SvmOracleResult& r) {
  const Vector ly = r.lambda.cwiseProduct(data.labels);
  r.w = data.points.transpose() * ly;
  const Vector g = Vector::Ones(data.size()) -
                   data.labels.cwiseProduct(data.points * r.w +
                                            Vector::Constant(data.size(), r.b));
  r.stationarity = linf(r.w - data.points.transpose() * ly);
  r.complementarity = linf(r.lambda.cwiseProduct(g));
  r.dual_feasibility = (-r.lambda).cwiseMax(0.0).maxCoeff();
  r.primal_feasibility = g.cwiseMax(0.0).maxCoeff();
  r.balance = std::abs(ly.sum());
}

/**
 * Reference solution of the hard-margin SVM independent of any GDA loop.
 *
 * Accelerated projected gradient on the dual
 *   min 1/2 ||K^T lambda||^2 - 1^T lambda,  lambda >= 0,  y^T lambda = 0
 * (rows of K are y_i x_i) locates the support set; a primal-dual active-set
 * loop then solves the equality-constrained KKT system on it exactly:
 *   [Q_SS  y_S] [lambda_S]   [1]
 *   [y_S^T  0 ] [   b    ] = [0]
 * adding violated points and dropping negative multipliers until KKT holds.
 */
inline SvmOracleResult svm_dual_oracle(const SvmDataset& data,
                                       double tolerance = 1e-8,
                                       long max_iterations = 200000) {
  validate(data);
  const Eigen::Index m = data.size();
  const Vector& y = data.labels;
  const Matrix K = y.asDiagonal() * data.points;
  const double sigma = Eigen::JacobiSVD<Matrix>(K).singularValues()(0);
  const double lipschitz = std::max(1e-12, sigma * sigma);
  const double step = 1.0 / lipschitz;

  SvmOracleResult r;
  Vector lambda = Vector::Zero(m);
  Vector z = lambda;
  double t = 1.0;
  const double blowup = 1e10;
  for (r.iterations = 0; r.iterations < max_iterations; ++r.iterations) {
    const Vector grad = K * (K.transpose() * z) - Vector::Ones(m);
    const Vector next = detail::project_svm_dual(z - step * grad, y);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    Vector z_next = next + ((t - 1.0) / t_next) * (next - lambda);
    // Adaptive restart when momentum points uphill.
    if ((z - next).dot(next - lambda) > 0.0) {
      z_next = next;
      t = 1.0;
    } else {
      t = t_next;
    }
    const double change = linf(next - lambda);
    lambda = next;
    z = z_next;
    // For separable data every feasible lambda has ||K^T lambda|| >=
    // sum(lambda) / ||w*||, so a near-null ray of K^T certifies that the dual
    // is unbounded.
    const bool ray = r.iterations % 500 == 499 && lambda.sum() > 0.0 &&
                     (K.transpose() * lambda).norm() <= 1e-6 * lambda.sum();
    if (!lambda.allFinite() || linf(lambda) > blowup || ray) {
      r.status = OracleStatus::Infeasible;
      r.lambda = lambda;
      return r;
    }
    if (change <= 1e-13 * std::max(1.0, linf(lambda))) break;
  }

  // Active-set polish.
  const double scale = std::max(1.0, linf(lambda));
  std::vector<char> active(m, 0);
  for (Eigen::Index i = 0; i < m; ++i) active[i] = lambda[i] > 1e-6 * scale;
  const Matrix Q = K * K.transpose();
  for (int round = 0; round < 4 * static_cast<int>(m) + 10; ++round) {
    std::vector<Eigen::Index> S;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (active[i]) S.push_back(i);
    }
    if (S.empty()) break;
    const Eigen::Index s = static_cast<Eigen::Index>(S.size());
    Matrix M = Matrix::Zero(s + 1, s + 1);
    Vector rhs = Vector::Zero(s + 1);
    for (Eigen::Index a = 0; a < s; ++a) {
      for (Eigen::Index c = 0; c < s; ++c) M(a, c) = Q(S[a], S[c]);
      M(a, s) = y[S[a]];
      M(s, a) = y[S[a]];
      rhs[a] = 1.0;
    }
    const Vector sol = M.completeOrthogonalDecomposition().solve(rhs);
    Vector cand = Vector::Zero(m);
    for (Eigen::Index a = 0; a < s; ++a) cand[S[a]] = sol[a];
    const double b = sol[s];

    // Drop the most negative multiplier, else add the most violated point.
    Eigen::Index worst = -1;
    double worst_val = -tolerance;
    for (Eigen::Index a = 0; a < s; ++a) {
      if (sol[a] < worst_val) {
        worst_val = sol[a];
        worst = S[a];
      }
    }
    if (worst >= 0) {
      active[worst] = 0;
      continue;
    }
    const Vector margin =
        y.cwiseProduct(data.points * (data.points.transpose() *
                                      cand.cwiseProduct(y)) +
                       Vector::Constant(m, b));
    double most = tolerance;
    Eigen::Index add = -1;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!active[i] && 1.0 - margin[i] > most) {
        most = 1.0 - margin[i];
        add = i;
      }
    }
    if (add >= 0) {
      active[add] = 1;
      continue;
    }
    lambda = cand.cwiseMax(0.0);
    r.b = b;
    r.support = S;
    break;
  }

  r.lambda = lambda;
  svm_kkt_report(data, r);
  if (r.support.empty()) {
    r.status = OracleStatus::NotConverged;
  } else {
    r.status = r.kkt_residual() <= tolerance * scale ? OracleStatus::Optimal
                                                     : OracleStatus::NotConverged;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Two-dimensional nonconvex benchmark:
//   f(x) = (x1 + exp(-x2))^2 + (x1^2 + 2 x2 + 1)^2
//   h(x) = x1 + x1^3 + x2 + x2^2 - 2 = 0

inline ConstrainedProblem build_2d_benchmark() {
  ConstrainedProblem p;
  p.name = "benchmark2d";
  p.dim_primal = 2;
  p.num_ineq = 0;
  p.num_eq = 1;
  p.eval_objective = [](const Vector& x) {
    const double r1 = x[0] + std::exp(-x[1]);
    const double r2 = x[0] * x[0] + 2.0 * x[1] + 1.0;
    return r1 * r1 + r2 * r2;
  };
  p.eval_objective_grad = [](const Vector& x) {
    const double e = std::exp(-x[1]);
    const double r1 = x[0] + e;
    const double r2 = x[0] * x[0] + 2.0 * x[1] + 1.0;
    Vector g(2);
    g << 2.0 * r1 + 4.0 * x[0] * r2, -2.0 * e * r1 + 4.0 * r2;
    return g;
  };
  p.eval_ineq = [](const Vector&) { return Vector(0); };
  p.eval_eq = [](const Vector& x) {
    Vector h(1);
    h << x[0] + x[0] * x[0] * x[0] + x[1] + x[1] * x[1] - 2.0;
    return h;
  };
  p.eval_constraint_jacobian = [](const Vector& x) {
    Matrix j(2, 1);
    j << 1.0 + 3.0 * x[0] * x[0], 1.0 + 2.0 * x[1];
    return j;
  };
  return p;
}

// ---------------------------------------------------------------------------
// Equality-constrained QP: min 1/2 x^T H x + c^T x  s.t.  A x - b = 0.

inline ConstrainedProblem build_qp_problem(const QPSystem& sys) {
  validate(sys);
  ConstrainedProblem p;
  p.name = "qp";
  p.dim_primal = sys.dim_primal();
  p.num_ineq = 0;
  p.num_eq = sys.num_constraints();
  p.eval_objective = [H = sys.H, c = sys.c_lin](const Vector& x) {
    return 0.5 * x.dot(H * x) + c.dot(x);
  };
  p.eval_objective_grad = [H = sys.H, c = sys.c_lin](const Vector& x) -> Vector {
    return H * x + c;
  };
  p.eval_ineq = [](const Vector&) { return Vector(0); };
  p.eval_eq = [A = sys.A, b = sys.b](const Vector& x) -> Vector {
    return A * x - b;
  };
  p.eval_constraint_jacobian = [At = Matrix(sys.A.transpose())](const Vector&) {
    return At;
  };
  return p;
}

// ---------------------------------------------------------------------------
// Dataset files: d numeric feature columns followed by one label column.
// Labels are +1/-1; a label 0 is read as -1. Blank lines and lines starting
// with '#' are skipped.

inline SvmDataset read_dataset_csv(std::istream& in,
                                   const std::string& source = "dataset") {
  const auto lines = csv::read_lines(in);
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  for (const auto& line : lines) {
    const std::string where = source + ":" + std::to_string(line.number);
    const auto cells = csv::split(line.text);
    if (cells.size() < 2) {
      throw ConfigError(where + ": need at least one feature and a label");
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw ConfigError(where + ": expected " + std::to_string(width) +
                        " columns, found " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(width);
    for (const auto& cell : cells) row.push_back(csv::parse_double(cell, where));
    double& label = row.back();
    if (label == 0.0) label = -1.0;
    if (label != 1.0 && label != -1.0) {
      throw ConfigError(where + ": label must be -1, 0 or 1");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(source + ": no data rows");

  SvmDataset data;
  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(width - 1);
  data.points.resize(m, d);
  data.labels.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) data.points(i, j) = rows[i][j];
    data.labels[i] = rows[i][d];
  }
  const bool has_pos = (data.labels.array() > 0.0).any();
  const bool has_neg = (data.labels.array() < 0.0).any();
  if (!has_pos || !has_neg) {
    throw ConfigError(source + ":" + std::to_string(lines.back().number) +
                      ": only one class present");
  }
  return data;
}

inline SvmDataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  return read_dataset_csv(in, path);
}

/// Deterministic permutation: Fisher-Yates over mt19937_64 with rejection
/// sampling, so the split does not depend on the standard library's
/// distribution implementations.
inline std::vector<Eigen::Index> seeded_permutation(Eigen::Index m,
                                                    std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  for (Eigen::Index i = m - 1; i > 0; --i) {
    const auto bound = static_cast<std::uint64_t>(i) + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(r % bound)]);
  }
  return idx;
}

inline SvmDataset select_rows(const SvmDataset& data,
                              const std::vector<Eigen::Index>& rows) {
  SvmDataset out;
  out.points.resize(static_cast<Eigen::Index>(rows.size()), data.dim());
  out.labels.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out.points.row(i) = data.points.row(rows[k]);
    out.labels[i] = data.labels[rows[k]];
  }
  return out;
}

struct DatasetSplit {
  SvmDataset train;
  SvmDataset validation;
};

/// Seeded shuffle, then the first ceil(fraction * m) rows are training data.
inline DatasetSplit split_dataset(const SvmDataset& data, std::uint64_t seed,
                                  double train_fraction = 0.7) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train fraction must be in (0, 1]");
  }
  const Eigen::Index m = data.size();
  const auto n_train = std::min<Eigen::Index>(
      m, static_cast<Eigen::Index>(
             std::ceil(train_fraction * static_cast<double>(m) - 1e-9)));
  const auto perm = seeded_permutation(m, seed);
  DatasetSplit split;
  split.train = select_rows(
      data, std::vector<Eigen::Index>(perm.begin(), perm.begin() + n_train));
  split.validation = select_rows(
      data, std::vector<Eigen::Index>(perm.begin() + n_train, perm.end()));
  return split;
}

/// Per-feature z-score transform fitted on one dataset.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const SvmDataset& data) {
    Standardizer s;
    s.mean = data.points.colwise().mean().transpose();
    const Matrix centered = data.points.rowwise() - s.mean.transpose();
    s.scale = (centered.colwise().squaredNorm().transpose() /
               static_cast<double>(data.size()))
                  .cwiseSqrt();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
      if (!(s.scale[j] > 0.0)) s.scale[j] = 1.0;
    }
    return s;
  }

  SvmDataset apply(const SvmDataset& data) const {
    SvmDataset out = data;
    out.points = ((data.points.rowwise() - mean.transpose()).array().rowwise() /
                  scale.transpose().array())
                     .matrix();
    return out;
  }
};

}  // namespace numax
