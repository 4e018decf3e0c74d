#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "numax/core.hpp"
#include "numax/csv.hpp"

namespace numax {

// ---------------------------------------------------------------------------
// Relative update size of nuPI against gradient ascent with the same ki.

struct RatioInputs {
  double kp = 0.0;
  double ki = 0.0;
  double nu = 0.0;
  double xi_prev = 0.0;  // xi_{t-1}
  double e_t = 0.0;
};

/// psi = kp (1 - nu) / (ki + kp (1 - nu))
inline double update_psi(const RatioInputs& in) {
  const double p = in.kp * (1.0 - in.nu);
  const double denom = in.ki + p;
  if (denom == 0.0) {
    throw DomainError("ratio: ki + kp (1 - nu) == 0, psi undefined");
  }
  return p / denom;
}

/// (theta_nuPI_{t+1} - theta_t) / (theta_GA_{t+1} - theta_t)
///   = 1 / (1 - psi) * (1 - psi xi_{t-1} / e_t)
inline double relative_update_ratio(const RatioInputs& in) {
  if (in.e_t == 0.0) {
    throw DomainError("ratio: GA step is zero (e_t == 0); ratio undefined");
  }
  const double psi = update_psi(in);
  if (psi == 1.0) throw DomainError("ratio: psi == 1 (ki == 0)");
  return (1.0 - psi * in.xi_prev / in.e_t) / (1.0 - psi);
}

/// A: faster than GA (or reversing harder when feasible). B: same sign,
/// slower. C: opposite sign to GA.
enum class UpdateMode { A, B, C };

inline std::string to_string(UpdateMode mode) {
  switch (mode) {
    case UpdateMode::A:
      return "A";
    case UpdateMode::B:
      return "B";
    case UpdateMode::C:
      return "C";
  }
  return "?";
}

/**
 * Mode of a nuPI step for xi_{t-1} > 0 and psi in (0, 1). Endpoints:
 * e_t == xi_{t-1} belongs to B, e_t == psi xi_{t-1} and e_t == 0 belong to C,
 * so B = (psi xi, xi] and C = [0, psi xi].
 */
inline UpdateMode classify_mode(const RatioInputs& in) {
  if (!(in.xi_prev > 0.0)) {
    throw DomainError("classify_mode: requires xi_prev > 0");
  }
  const double psi = update_psi(in);
  if (!(psi > 0.0 && psi < 1.0)) {
    throw DomainError("classify_mode: requires psi in (0, 1), got " +
                      std::to_string(psi));
  }
  const double e = in.e_t;
  const double xi = in.xi_prev;
  if (e > xi || e < 0.0) return UpdateMode::A;
  if (e > psi * xi) return UpdateMode::B;
  return UpdateMode::C;
}

// ---------------------------------------------------------------------------
// Equality-constrained QP  min 1/2 x^T H x + c^T x  s.t.  A x - b = 0
// under continuous-time gradient descent / nuPI flow.

struct QPSystem {
  Matrix H;
  Matrix A;      // constraints x primal
  Vector b;
  Vector c_lin;
  double kp = 0.0;
  double ki = 1.0;

  Eigen::Index dim_primal() const { return H.rows(); }
  Eigen::Index num_constraints() const { return A.rows(); }
};

inline void validate(const QPSystem& sys) {
  const Eigen::Index n = sys.H.rows();
  if (sys.H.cols() != n) throw ConfigError("QPSystem: H must be square");
  if (sys.A.cols() != n) {
    throw ConfigError("QPSystem: A has " + std::to_string(sys.A.cols()) +
                      " columns, expected " + std::to_string(n));
  }
  if (sys.b.size() != sys.A.rows()) {
    throw ConfigError("QPSystem: b length does not match rows of A");
  }
  if (sys.c_lin.size() != n) {
    throw ConfigError("QPSystem: c length does not match H");
  }
  if (n > 0 && (sys.H - sys.H.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw ConfigError("QPSystem: H is not symmetric");
  }
}

/**
 * U = [[ H,                   A^T      ],
 *      [ A (kp H - ki I),     kp A A^T ]]
 *
 * Velocities (x', mu') of the flow obey d/dt (x', mu') = -U (x', mu').
 */
inline Matrix qp_system_matrix(const QPSystem& sys) {
  validate(sys);
  const Eigen::Index n = sys.dim_primal();
  const Eigen::Index c = sys.num_constraints();
  Matrix U(n + c, n + c);
  U.topLeftCorner(n, n) = sys.H;
  U.topRightCorner(n, c) = sys.A.transpose();
  U.bottomLeftCorner(c, n) =
      sys.A * (sys.kp * sys.H - sys.ki * Matrix::Identity(n, n));
  U.bottomRightCorner(c, c) = sys.kp * sys.A * sys.A.transpose();
  return U;
}

using Complex = std::complex<double>;

/// Numerical spectrum of -U.
inline std::vector<Complex> flow_spectrum(const QPSystem& sys) {
  const Matrix minus_u = -qp_system_matrix(sys);
  Eigen::EigenSolver<Matrix> solver(minus_u, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    throw DomainError("flow_spectrum: eigenvalue solver did not converge");
  }
  const auto& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

/// Closed-form eigenvalues of -U for one primal variable and one constraint:
///   ( -(h + kp a^2) +/- sqrt((h + kp a^2)^2 - 4 a^2 ki) ) / 2
/// The '+' root comes first.
inline std::array<Complex, 2> eigen_1d(double h, double a, double kp,
                                       double ki) {
  const double s = h + kp * a * a;
  const double disc = s * s - 4.0 * a * a * ki;
  const Complex root = disc >= 0.0 ? Complex(std::sqrt(disc), 0.0)
                                   : Complex(0.0, std::sqrt(-disc));
  return {(Complex(-s, 0.0) + root) / 2.0, (Complex(-s, 0.0) - root) / 2.0};
}

inline double discriminant_1d(double h, double a, double kp, double ki) {
  const double s = h + kp * a * a;
  return s * s - 4.0 * a * a * ki;
}

struct CriticalGains {
  double plus = 0.0;   // (-h + 2|a| sqrt(ki)) / a^2
  double minus = 0.0;  // (-h - 2|a| sqrt(ki)) / a^2
  std::optional<double> convergent;  // root with h + kp a^2 > 0, if any
};

/// Gains at which the 1D discriminant vanishes (double eigenvalue).
inline CriticalGains critical_kp(double h, double a, double ki) {
  if (a == 0.0) throw DomainError("critical_kp: requires a != 0");
  if (ki < 0.0) throw DomainError("critical_kp: requires ki >= 0");
  const double a2 = a * a;
  const double spread = 2.0 * std::abs(a) * std::sqrt(ki);
  CriticalGains out;
  out.plus = (-h + spread) / a2;
  out.minus = (-h - spread) / a2;
  if (h + out.plus * a2 > 0.0) {
    out.convergent = out.plus;
  } else if (h + out.minus * a2 > 0.0) {
    out.convergent = out.minus;
  }
  return out;
}

enum class DampingRegime {
  DivergentMonotone,
  DivergentOscillatory,
  Marginal,
  Underdamped,
  CriticallyDamped,
  Overdamped,
};

inline std::string to_string(DampingRegime r) {
  switch (r) {
    case DampingRegime::DivergentMonotone:
      return "DivergentMonotone";
    case DampingRegime::DivergentOscillatory:
      return "DivergentOscillatory";
    case DampingRegime::Marginal:
      return "Marginal";
    case DampingRegime::Underdamped:
      return "Underdamped";
    case DampingRegime::CriticallyDamped:
      return "CriticallyDamped";
    case DampingRegime::Overdamped:
      return "Overdamped";
  }
  return "?";
}

inline DampingRegime damping_regime_from_string(const std::string& s) {
  for (auto r : {DampingRegime::DivergentMonotone,
                 DampingRegime::DivergentOscillatory, DampingRegime::Marginal,
                 DampingRegime::Underdamped, DampingRegime::CriticallyDamped,
                 DampingRegime::Overdamped}) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown damping regime '" + s + "'");
}

struct RegimeClassification {
  DampingRegime regime = DampingRegime::Marginal;
  std::vector<Complex> eigenvalues;
  // True for spectra with more than two eigenvalues: the rules were worked
  // out for the 1D system and applied unchanged.
  bool extrapolated = false;
};

/// Relative tolerance for "real" and "repeated" eigenvalue tests.
inline constexpr double kEigenTolerance = 1e-9;

/**
 * Classifies the spectrum of -U (negative real part = decaying mode).
 * Any growing mode makes the system divergent; it is oscillatory when a
 * growing mode is complex. A zero real part (and no growing mode) is
 * Marginal. Otherwise: complex -> Underdamped, real with a coincident pair
 * -> CriticallyDamped, real distinct -> Overdamped.
 */
inline RegimeClassification classify_regime(std::vector<Complex> eigenvalues) {
  RegimeClassification out;
  out.extrapolated = eigenvalues.size() > 2;
  double scale = 1.0;
  for (const auto& z : eigenvalues) scale = std::max(scale, std::abs(z));
  const double tol = kEigenTolerance * scale;
  auto is_real = [&](const Complex& z) { return std::abs(z.imag()) <= tol; };

  bool growing = false;
  bool growing_complex = false;
  bool marginal = false;
  bool any_complex = false;
  for (const auto& z : eigenvalues) {
    if (z.real() > tol) {
      growing = true;
      growing_complex = growing_complex || !is_real(z);
    } else if (z.real() >= -tol) {
      marginal = true;
    }
    any_complex = any_complex || !is_real(z);
  }

  if (growing) {
    out.regime = growing_complex ? DampingRegime::DivergentOscillatory
                                 : DampingRegime::DivergentMonotone;
  } else if (marginal) {
    out.regime = DampingRegime::Marginal;
  } else if (any_complex) {
    out.regime = DampingRegime::Underdamped;
  } else {
    bool repeated = false;
    for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
      for (std::size_t j = i + 1; j < eigenvalues.size(); ++j) {
        const double gap = std::abs(eigenvalues[i].real() - eigenvalues[j].real());
        const double mag = std::max(std::abs(eigenvalues[i].real()),
                                    std::abs(eigenvalues[j].real()));
        repeated = repeated || gap <= kEigenTolerance * mag;
      }
    }
    out.regime = repeated ? DampingRegime::CriticallyDamped
                          : DampingRegime::Overdamped;
  }
  out.eigenvalues = std::move(eigenvalues);
  return out;
}

inline RegimeClassification classify_regime_1d(double h, double a, double kp,
                                               double ki) {
  const auto ev = eigen_1d(h, a, kp, ki);
  return classify_regime({ev[0], ev[1]});
}

// ---------------------------------------------------------------------------
// Flow integration on z = [x, mu, x', mu'], z' = [[0, I], [0, -U]] z.

struct FlowSample {
  double t = 0.0;
  Vector x;
  Vector mu;
  Vector x_dot;
  Vector mu_dot;
};

struct FlowTrajectory {
  std::vector<FlowSample> samples;
  bool non_finite = false;
  double dt = 0.0;
};

/// 0.01 / max(1, spectral radius of U)
inline double default_flow_dt(const QPSystem& sys) {
  double radius = 0.0;
  for (const auto& z : flow_spectrum(sys)) radius = std::max(radius, std::abs(z));
  return 0.01 / std::max(1.0, radius);
}

/**
 * Initial state consistent with the first-order flow
 *   x'  = -(H x + c) - A^T mu
 *   mu' = ki (A x - b) + kp A x'
 * so that the second-order system stays on the same trajectory.
 */
inline Vector flow_initial_state(const QPSystem& sys, const Vector& x0,
                                 const Vector& mu0) {
  validate(sys);
  const Eigen::Index n = sys.dim_primal();
  const Eigen::Index c = sys.num_constraints();
  if (x0.size() != n || mu0.size() != c) {
    throw ConfigError("flow: initial point has wrong dimensions");
  }
  const Vector x_dot = -(sys.H * x0 + sys.c_lin) - sys.A.transpose() * mu0;
  const Vector mu_dot = sys.ki * (sys.A * x0 - sys.b) + sys.kp * sys.A * x_dot;
  Vector z(2 * (n + c));
  z << x0, mu0, x_dot, mu_dot;
  return z;
}

/// The generator [[0, I], [0, -U]] of the linear state equation.
inline Matrix flow_generator(const QPSystem& sys) {
  const Matrix U = qp_system_matrix(sys);
  const Eigen::Index k = U.rows();
  Matrix G = Matrix::Zero(2 * k, 2 * k);
  G.topRightCorner(k, k) = Matrix::Identity(k, k);
  G.bottomRightCorner(k, k) = -U;
  return G;
}

/// Fixed-step classical RK4. The final step is shortened to land on t_end.
inline FlowTrajectory simulate_flow(const QPSystem& sys, const Vector& x0,
                                    const Vector& mu0, double dt, double t_end,
                                    long record_every = 1) {
  if (!(dt > 0.0)) throw ConfigError("simulate_flow: dt must be > 0");
  if (!(t_end >= 0.0)) throw ConfigError("simulate_flow: t_end must be >= 0");
  if (record_every < 1) throw ConfigError("simulate_flow: record_every >= 1");

  const Eigen::Index n = sys.dim_primal();
  const Eigen::Index c = sys.num_constraints();
  const Matrix U = qp_system_matrix(sys);
  const Eigen::Index k = n + c;
  auto rhs = [&](const Vector& z) {
    Vector dz(2 * k);
    dz.head(k) = z.tail(k);
    dz.tail(k).noalias() = -U * z.tail(k);
    return dz;
  };
  auto sample = [&](double t, const Vector& z) {
    return FlowSample{t, z.head(n), z.segment(n, c), z.segment(k, n),
                      z.tail(c)};
  };

  FlowTrajectory out;
  out.dt = dt;
  Vector z = flow_initial_state(sys, x0, mu0);
  out.samples.push_back(sample(0.0, z));

  const long steps = static_cast<long>(std::ceil(t_end / dt - 1e-9));
  double t = 0.0;
  for (long s = 1; s <= steps; ++s) {
    const double h = (s == steps) ? t_end - t : dt;
    const Vector k1 = rhs(z);
    const Vector k2 = rhs(z + 0.5 * h * k1);
    const Vector k3 = rhs(z + 0.5 * h * k2);
    const Vector k4 = rhs(z + h * k3);
    z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t = (s == steps) ? t_end : t + h;
    if (!z.allFinite()) {
      out.non_finite = true;
      out.samples.push_back(sample(t, z));
      break;
    }
    if (s % record_every == 0 || s == steps) out.samples.push_back(sample(t, z));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Direct KKT solve: [[H, A^T], [A, 0]] [x; mu] = [-c; b].

struct KKTSolution {
  Vector x;
  Vector mu;
  double stationarity_residual = 0.0;  // ||H x + c + A^T mu||_inf
  double feasibility_residual = 0.0;   // ||A x - b||_inf
  double condition_estimate = 0.0;
};

inline KKTSolution kkt_solve_qp(const QPSystem& sys) {
  validate(sys);
  const Eigen::Index n = sys.dim_primal();
  const Eigen::Index c = sys.num_constraints();
  Matrix K = Matrix::Zero(n + c, n + c);
  K.topLeftCorner(n, n) = sys.H;
  K.topRightCorner(n, c) = sys.A.transpose();
  K.bottomLeftCorner(c, n) = sys.A;
  Vector rhs(n + c);
  rhs << -sys.c_lin, sys.b;

  Eigen::JacobiSVD<Matrix> svd(K);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  const double smin = sv.size() ? sv(sv.size() - 1) : 0.0;
  KKTSolution out;
  out.condition_estimate = smin > 0.0 ? smax / smin
                                      : std::numeric_limits<double>::infinity();
  if (!(smin > 1e-13 * std::max(1.0, smax))) {
    throw DomainError("kkt_solve_qp: singular KKT matrix (condition estimate " +
                      csv::format(out.condition_estimate) + ")");
  }
  const Vector sol = K.fullPivLu().solve(rhs);
  out.x = sol.head(n);
  out.mu = sol.tail(c);
  out.stationarity_residual =
      linf(sys.H * out.x + sys.c_lin + sys.A.transpose() * out.mu);
  out.feasibility_residual = linf(sys.A * out.x - sys.b);
  return out;
}

// ---------------------------------------------------------------------------
// 1D regime sweep over kp.

struct RegimeSweepRow {
  double kp = 0.0;
  std::array<Complex, 2> eigenvalues;
  DampingRegime regime = DampingRegime::Marginal;
  std::string annotation;  // "critical_convergent", "critical_divergent" or ""
};

struct RegimeBoundary {
  double kp = 0.0;
  DampingRegime below = DampingRegime::Marginal;
  DampingRegime above = DampingRegime::Marginal;
};

struct RegimeSweep {
  double h = 0.0;
  double a = 0.0;
  double ki = 0.0;
  std::vector<RegimeSweepRow> rows;        // sorted by kp
  std::vector<RegimeBoundary> boundaries;  // sorted by kp
};

/// Locates a regime change inside (lo, hi) by bisection to `tol`.
inline double bisect_regime_boundary(double h, double a, double ki, double lo,
                                     double hi, double tol = 1e-9) {
  const DampingRegime left = classify_regime_1d(h, a, lo, ki).regime;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (classify_regime_1d(h, a, mid, ki).regime == left) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline RegimeSweep run_regime_sweep(double h, double a, double ki,
                                    double kp_min, double kp_max,
                                    long samples) {
  if (a == 0.0) throw DomainError("regime sweep: requires a != 0");
  if (samples < 2) throw ConfigError("regime sweep: samples must be >= 2");
  if (!(kp_max > kp_min)) throw ConfigError("regime sweep: empty kp range");

  RegimeSweep sweep{h, a, ki, {}, {}};
  auto make_row = [&](double kp, std::string note) {
    RegimeSweepRow row;
    row.kp = kp;
    row.eigenvalues = eigen_1d(h, a, kp, ki);
    row.regime = classify_regime({row.eigenvalues[0], row.eigenvalues[1]}).regime;
    row.annotation = std::move(note);
    return row;
  };

  std::vector<RegimeSweepRow> grid;
  for (long i = 0; i < samples; ++i) {
    const double kp = kp_min + (kp_max - kp_min) * static_cast<double>(i) /
                                   static_cast<double>(samples - 1);
    grid.push_back(make_row(kp, ""));
  }
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    if (grid[i].regime != grid[i + 1].regime) {
      const double kp =
          bisect_regime_boundary(h, a, ki, grid[i].kp, grid[i + 1].kp);
      sweep.boundaries.push_back({kp, grid[i].regime, grid[i + 1].regime});
    }
  }

  sweep.rows = std::move(grid);
  const CriticalGains crit = critical_kp(h, a, ki);
  for (double kp : {crit.plus, crit.minus}) {
    const bool convergent = crit.convergent && *crit.convergent == kp;
    sweep.rows.push_back(
        make_row(kp, convergent ? "critical_convergent" : "critical_divergent"));
    if (crit.plus == crit.minus) break;
  }
  std::stable_sort(sweep.rows.begin(), sweep.rows.end(),
                   [](const auto& l, const auto& r) { return l.kp < r.kp; });
  return sweep;
}

/**
 * CSV layout:
 *   # numax regime-sweep h=<h> a=<a> ki=<ki>
 *   # boundary kp=<kp> below=<regime> above=<regime>     (one per boundary)
 *   # annotate kp=<kp> <annotation>                      (critical rows)
 *   kp,re_lambda1,im_lambda1,re_lambda2,im_lambda2,regime
 */
inline void write_regime_sweep_csv(std::ostream& out, const RegimeSweep& s) {
  out << "# numax regime-sweep h=" << csv::format(s.h)
      << " a=" << csv::format(s.a) << " ki=" << csv::format(s.ki) << "\n";
  for (const auto& b : s.boundaries) {
    out << "# boundary kp=" << csv::format(b.kp) << " below=" << to_string(b.below)
        << " above=" << to_string(b.above) << "\n";
  }
  for (const auto& r : s.rows) {
    if (!r.annotation.empty()) {
      out << "# annotate kp=" << csv::format(r.kp) << " " << r.annotation << "\n";
    }
  }
  out << "kp,re_lambda1,im_lambda1,re_lambda2,im_lambda2,regime\n";
  for (const auto& r : s.rows) {
    out << csv::format(r.kp) << ',' << csv::format(r.eigenvalues[0].real())
        << ',' << csv::format(r.eigenvalues[0].imag()) << ','
        << csv::format(r.eigenvalues[1].real()) << ','
        << csv::format(r.eigenvalues[1].imag()) << ',' << to_string(r.regime)
        << "\n";
  }
}

inline RegimeSweep read_regime_sweep_csv(std::istream& in) {
  std::vector<std::string> comments;
  const auto lines = csv::read_lines(in, &comments);
  RegimeSweep s;
  std::vector<std::pair<double, std::string>> notes;
  auto value_of = [](const std::string& tok, const std::string& key) {
    return tok.rfind(key + "=", 0) == 0 ? tok.substr(key.size() + 1)
                                        : std::string();
  };
  for (const auto& c : comments) {
    std::istringstream ss(c.substr(1));
    std::vector<std::string> toks;
    for (std::string t; ss >> t;) toks.push_back(t);
    if (toks.size() >= 4 && toks[0] == "numax" && toks[1] == "regime-sweep") {
      s.h = csv::parse_double(value_of(toks[2], "h"), "header");
      s.a = csv::parse_double(value_of(toks[3], "a"), "header");
      s.ki = csv::parse_double(value_of(toks[4], "ki"), "header");
    } else if (toks.size() == 4 && toks[0] == "boundary") {
      s.boundaries.push_back(
          {csv::parse_double(value_of(toks[1], "kp"), "boundary"),
           damping_regime_from_string(value_of(toks[2], "below")),
           damping_regime_from_string(value_of(toks[3], "above"))});
    } else if (toks.size() == 3 && toks[0] == "annotate") {
      notes.emplace_back(csv::parse_double(value_of(toks[1], "kp"), "annotate"),
                         toks[2]);
    }
  }
  if (lines.empty()) throw ConfigError("regime sweep csv: missing header");
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto cells = csv::split(lines[k].text);
    const std::string where = "line " + std::to_string(lines[k].number);
    if (cells.size() != 6) throw ConfigError(where + ": expected 6 columns");
    RegimeSweepRow row;
    row.kp = csv::parse_double(cells[0], where);
    row.eigenvalues[0] = {csv::parse_double(cells[1], where),
                          csv::parse_double(cells[2], where)};
    row.eigenvalues[1] = {csv::parse_double(cells[3], where),
                          csv::parse_double(cells[4], where)};
    row.regime = damping_regime_from_string(std::string(cells[5]));
    for (auto it = notes.begin(); it != notes.end(); ++it) {
      if (it->first == row.kp) {
        row.annotation = it->second;
        notes.erase(it);
        break;
      }
    }
    s.rows.push_back(std::move(row));
  }
  return s;
}

}  // namespace numax
