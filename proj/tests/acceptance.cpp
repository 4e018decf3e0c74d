// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Tolerances are fixed here, not configurable.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "numax/analysis.hpp"
#include "numax/config.hpp"
#include "numax/dual_optimizers.hpp"
#include "numax/harness.hpp"
#include "numax/loop.hpp"
#include "numax/problems.hpp"
#include "oracles.hpp"

using namespace numax;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) { return csv::format(v); }

std::vector<Vector> random_errors(std::mt19937_64& rng, int steps, int dim) {
  std::vector<Vector> out;
  for (int t = 0; t < steps; ++t) out.push_back(oracle::random_vector(rng, dim, -1.0, 1.0));
  return out;
}

// 1. Momentum iterates equal mapped-nuPI iterates.
Verdict momentum_equivalence() {
  constexpr double kTol = 1e-9;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> alpha(0.0, 2.0), beta(-0.9, 0.9);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    double a = 0.0;
    while (a == 0.0) a = alpha(rng);  // alpha in (0, 2]
    const UMConfig um{2.0 - a, beta(rng), trial % 2 ? 1.0 : 0.0};
    const NuPIConfig pi = map_um_to_nupi(um);
    UMState u(Vector::Zero(3));
    NuPIState n(Vector::Zero(3));
    for (const auto& e : random_errors(rng, 1000, 3)) {
      u = um_step(u, um, e);
      n = nupi_step(n, pi, e);
      worst = std::max(worst, (u.theta - n.theta).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= kTol, "max |theta_UM - theta_nuPI| = " + fmt(worst)};
}

// 2. GA and optimistic-gradient embeddings.
Verdict embeddings() {
  constexpr double kOgTol = 1e-12;
  std::mt19937_64 rng(202);
  const double alpha = 0.173;
  const auto errors = random_errors(rng, 1000, 4);

  bool ga_exact = true;
  NuPIState n(Vector::Zero(4));
  GAState g(Vector::Zero(4));
  for (const auto& e : errors) {
    n = nupi_step(n, NuPIConfig{0.0, 0.0, alpha}, e);
    g = ga_step(g, alpha, e);
    for (Eigen::Index i = 0; i < 4; ++i) {
      ga_exact = ga_exact && std::memcmp(&n.theta[i], &g.theta[i], sizeof(double)) == 0;
    }
  }

  // theta_{t+1} = theta_t + alpha e_t + alpha (e_t - e_{t-1}), with e_{-1} = 0
  // matching xi_0 = e_0 (first step 2 alpha e_0).
  double og_worst = 0.0;
  NuPIState s(Vector::Zero(4));
  Vector ref = Vector::Zero(4);
  Vector prev = Vector::Zero(4);
  for (const auto& e : errors) {
    s = nupi_step(s, NuPIConfig{0.0, alpha, alpha}, e);
    ref = ref + alpha * e + alpha * (e - prev);
    prev = e;
    og_worst = std::max(og_worst, (s.theta - ref).cwiseAbs().maxCoeff());
  }
  return {ga_exact && og_worst <= kOgTol,
          std::string("GA bit-exact=") + (ga_exact ? "yes" : "no") +
              ", OG max error " + fmt(og_worst)};
}

// 3. Recursive nuPI equals its cumulative form.
Verdict cumulative_form() {
  constexpr double kTol = 1e-9;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> nu(-0.9, 0.9), gain(0.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const NuPIConfig c{nu(rng), gain(rng), gain(rng)};
    const auto errors = random_errors(rng, 1000, 3);
    const Vector theta0 = oracle::random_vector(rng, 3, -1.0, 1.0);
    const auto ref = oracle::cumulative_nupi(theta0, c.nu, c.kp, c.ki, errors[0], errors);
    NuPIState s(theta0);
    for (std::size_t t = 0; t < errors.size(); ++t) {
      s = nupi_step(s, c, errors[t]);
      worst = std::max(worst, (s.theta - ref[t]).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= kTol, "max deviation " + fmt(worst)};
}

// 4. SVM grid: some nuPI cell converges, the GA row does not.
Verdict svm_grid() {
  const KeyValues over = {{"problem.data", NUMAX_DATA_DIR "/iris_setosa_versicolor.csv"},
                          {"loop.max_steps", "5000"},
                          {"primal.kind", "gd_momentum"},
                          {"primal.step_size", "1e-3"},
                          {"primal.momentum", "0.9"},
                          {"dual.kind", "nupi"},
                          {"dual.nu", "0"}};
  const RunConfig rc = resolve_config({}, over);
  const PreparedProblem p = prepare_problem(rc);
  const double threshold = 1e-2 * std::max(1.0, p.theta_star->norm());
  const auto ki_axis = parse_list("ki", "logspace(-4, 1, 8)");

  int converged_pid = 0, converged_ga = 0, accuracy_failures = 0, diverged = 0;
  double best = INFINITY;
  for (double kp : {0.0, 1.0, 10.0, 100.0}) {
    for (double ki : ki_axis) {
      LoopConfig loop = rc.loop;
      loop.dual = NuPIConfig{0.0, kp, ki};
      const RunOutcome out = run_prepared(p, loop, MetricKind::DistToLambdaStar);
      if (out.diverged) {
        ++diverged;
        continue;
      }
      const Eigen::Index d = p.train->dim();
      const Vector& x = out.trajectory.final_x;
      if (svm_accuracy(*p.train, x.head(d), x[d]) != 1.0) ++accuracy_failures;
      if (out.metric <= threshold) (kp == 0.0 ? converged_ga : converged_pid)++;
      if (kp > 0.0) best = std::min(best, out.metric);
    }
  }
  std::ostringstream o;
  o << "converged nuPI cells " << converged_pid << ", GA cells " << converged_ga
    << ", best dist " << fmt(best) << " (threshold " << fmt(threshold) << "), diverged "
    << diverged << ", accuracy<100% " << accuracy_failures;
  return {converged_pid >= 1 && converged_ga == 0 && accuracy_failures == 0, o.str()};
}

// 5. 1D spectral analysis for h = 1, a = -1, ki = 1.
Verdict spectral_analysis() {
  const double h = 1.0, a = -1.0, ki = 1.0;
  bool ok = true;
  std::ostringstream o;

  const CriticalGains crit = critical_kp(h, a, ki);
  const bool crit_ok = std::abs(crit.plus - 1.0) <= 1e-12 && std::abs(crit.minus + 3.0) <= 1e-12;
  ok = ok && crit_ok;
  o << "critical {" << fmt(crit.plus) << ", " << fmt(crit.minus) << "}";

  const auto ev = eigen_1d(h, a, 1.0, ki);
  double double_err = 0.0;
  for (const auto& z : ev) double_err = std::max(double_err, std::abs(z - Complex(-1.0, 0.0)));
  ok = ok && double_err <= 1e-10;
  o << "; double root error " << fmt(double_err);

  const RegimeSweep sweep = run_regime_sweep(h, a, ki, -5.0, 5.0, 1000);
  const std::vector<double> expected{-3.0, -1.0, 1.0};
  bool bounds_ok = sweep.boundaries.size() == expected.size();
  double bound_err = 0.0;
  for (std::size_t i = 0; bounds_ok && i < expected.size(); ++i) {
    bound_err = std::max(bound_err, std::abs(sweep.boundaries[i].kp - expected[i]));
  }
  bounds_ok = bounds_ok && bound_err <= 1e-6;
  ok = ok && bounds_ok;
  o << "; " << sweep.boundaries.size() << " boundaries, max offset " << fmt(bound_err);

  // Closed form against a general eigen-solver of -U, both pairings tried.
  double spec_err = 0.0;
  for (const auto& row : sweep.rows) {
    QPSystem sys;
    sys.H = Matrix::Constant(1, 1, h);
    sys.A = Matrix::Constant(1, 1, a);
    sys.b = Vector::Zero(1);
    sys.c_lin = Vector::Zero(1);
    sys.kp = row.kp;
    sys.ki = ki;
    const auto num = flow_spectrum(sys);
    const double straight = std::max(std::abs(num[0] - row.eigenvalues[0]),
                                     std::abs(num[1] - row.eigenvalues[1]));
    const double swapped = std::max(std::abs(num[0] - row.eigenvalues[1]),
                                    std::abs(num[1] - row.eigenvalues[0]));
    spec_err = std::max(spec_err, std::min(straight, swapped));
  }
  ok = ok && spec_err <= 1e-10;
  o << "; closed form vs numeric " << fmt(spec_err) << " over " << sweep.rows.size()
    << " rows";
  return {ok, o.str()};
}

// 6. RK4 flow against the matrix exponential; bilinear norm conservation.
Verdict flow_fidelity() {
  constexpr double kTol = 1e-6;
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> kp(0.0, 2.0), ki(0.2, 2.0);
  double worst = 0.0;
  int systems = 0;
  while (systems < 10) {
    const int n = systems % 2 ? 2 : 1;
    const QPSystem sys = oracle::random_qp(rng, n, 1, kp(rng), ki(rng));
    double slowest = INFINITY, fastest = 0.0;
    for (const auto& z : flow_spectrum(sys)) {
      slowest = std::min(slowest, -z.real());
      fastest = std::max(fastest, std::abs(z));
    }
    if (!(slowest > 0.05)) continue;  // keep t_end moderate
    ++systems;
    const double t_end = std::log(1e8) / slowest;
    const Vector x0 = oracle::random_vector(rng, n, -1.0, 1.0);
    const Vector mu0 = oracle::random_vector(rng, 1, -1.0, 1.0);
    const auto traj = simulate_flow(sys, x0, mu0, default_flow_dt(sys), t_end, 1000000000L);
    const Vector ref =
        oracle::flow_exact(flow_generator(sys), flow_initial_state(sys, x0, mu0), t_end);
    const FlowSample& last = traj.samples.back();
    Vector got(ref.size());
    got << last.x, last.mu, last.x_dot, last.mu_dot;
    worst = std::max(worst, (got - ref).cwiseAbs().maxCoeff());
  }

  QPSystem bil;
  bil.H = Matrix::Zero(2, 2);
  bil.A = Matrix::Identity(2, 2);
  bil.b = Vector::Zero(2);
  bil.c_lin = Vector::Zero(2);
  bil.kp = 0.0;
  bil.ki = 1.0;
  const Vector x0 = (Vector(2) << 1.0, -0.5).finished();
  const Vector mu0 = (Vector(2) << 0.25, 0.75).finished();
  const auto traj = simulate_flow(bil, x0, mu0, default_flow_dt(bil), 100.0);
  const double r0 = std::hypot(x0.norm(), mu0.norm());
  double drift = 0.0;
  for (const auto& s : traj.samples) {
    drift = std::max(drift, std::abs(std::hypot(s.x.norm(), s.mu.norm()) - r0));
  }
  return {worst <= kTol && drift <= kTol,
          "max error vs expm " + fmt(worst) + ", bilinear drift " + fmt(drift)};
}

// 7. 2D benchmark: convergence and damping ordering over kp.
Verdict benchmark_damping() {
  const ConstrainedProblem p = build_2d_benchmark();
  const Vector x_star = oracle::benchmark_constrained_optimum();
  const Vector x0 = (Vector(2) << -1.0, -1.0).finished();
  bool ok = true;
  std::vector<int> changes;
  std::ostringstream o;
  for (double kp : {1.0, 3.0, 5.0}) {
    LoopConfig loop;
    loop.max_steps = 30000;
    loop.primal.kind = PrimalKind::GradientDescent;
    loop.primal.step_size = 1e-3;
    loop.dual = NuPIConfig{0.0, kp, 0.01};
    const Trajectory traj = run(p, x0, DualVector::zeros(0, 1), loop);
    int count = 0;
    double prev = 0.0;
    for (const auto& r : traj.steps) {
      const double v = r.h[0];
      if (v != 0.0) {
        if (prev != 0.0 && (v > 0.0) != (prev > 0.0)) ++count;
        prev = v;
      }
    }
    const double dist = (traj.final_x - x_star).norm();
    ok = ok && dist <= 1e-3;
    changes.push_back(count);
    o << "kp=" << kp << ": dist " << fmt(dist) << ", sign changes " << count << "; ";
  }
  ok = ok && changes[0] >= changes[1] && changes[1] >= changes[2];
  return {ok, o.str()};
}

// 8. Oracle and KKT solver self-consistency.
Verdict kkt_consistency() {
  constexpr double kOracleTol = 1e-6, kQpTol = 1e-9;
  bool ok = true;
  double worst_oracle = 0.0;
  auto check = [&](const SvmDataset& d) {
    const SvmOracleResult r = svm_dual_oracle(d);
    ok = ok && r.status == OracleStatus::Optimal;
    const double res = std::max({r.stationarity, r.complementarity, r.dual_feasibility});
    worst_oracle = std::max(worst_oracle, res);
    ok = ok && res <= kOracleTol;
  };
  const SvmDataset iris = load_dataset_csv(NUMAX_DATA_DIR "/iris_setosa_versicolor.csv");
  DatasetSplit split = split_dataset(iris, 0);
  check(split.train);
  check(Standardizer::fit(split.train).apply(split.train));
  check(iris);
  std::mt19937_64 rng(808);
  for (int i = 0; i < 20; ++i) check(oracle::random_separable(rng, 20 + 4 * i, 2 + i % 4));

  double worst_qp = 0.0;
  for (int i = 0; i < 50; ++i) {
    const QPSystem sys = oracle::random_qp(rng, 3 + i % 5, 1 + i % 3, 0.0, 1.0);
    const KKTSolution s = kkt_solve_qp(sys);
    worst_qp = std::max({worst_qp, s.stationarity_residual, s.feasibility_residual});
  }
  ok = ok && worst_qp <= kQpTol;
  return {ok, "oracle max KKT residual " + fmt(worst_oracle) + ", QP max residual " +
                  fmt(worst_qp)};
}

// 9. Ratio formula against one-step increments; mode sign structure.
Verdict ratio_modes() {
  constexpr double kTol = 1e-12;  // relative to max(1, |ratio|)
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> kp(0.0, 5.0), ki(0.01, 5.0), nu(-0.9, 0.9),
      v(-10.0, 10.0), pos(0.01, 10.0);
  double worst = 0.0;
  int tested = 0;
  while (tested < 1000) {
    const RatioInputs in{kp(rng), ki(rng), nu(rng), v(rng), v(rng)};
    if (std::abs(in.e_t) < 1e-3) continue;
    ++tested;
    NuPIState s(Vector::Zero(1));
    s.prev_initialized = true;
    s.xi = Vector::Constant(1, in.xi_prev);
    const Vector e = Vector::Constant(1, in.e_t);
    const double pi = nupi_step(s, NuPIConfig{in.nu, in.kp, in.ki}, e).theta[0];
    const double ga = ga_step(GAState(Vector::Zero(1)), in.ki, e).theta[0];
    const double r = relative_update_ratio(in);
    worst = std::max(worst, std::abs(r - pi / ga) / std::max(1.0, std::abs(r)));
  }

  int mismatches = 0, counts[3] = {0, 0, 0};
  for (int i = 0; i < 1000; ++i) {
    RatioInputs in{pos(rng), pos(rng), nu(rng), pos(rng), 0.0};
    in.e_t = in.xi_prev * std::uniform_real_distribution<double>(-1.0, 2.0)(rng);
    if (in.e_t == 0.0) continue;
    const double psi = update_psi(in);
    const double r = relative_update_ratio(in);
    const UpdateMode m = classify_mode(in);
    ++counts[static_cast<int>(m)];
    bool good = true;
    if (m == UpdateMode::A) good = r > 1.0;
    if (m == UpdateMode::B) good = r >= 0.0 && r <= 1.0;
    if (m == UpdateMode::C && in.e_t > 0.0 && in.e_t < psi * in.xi_prev) good = r < 0.0;
    if (!good) ++mismatches;
  }
  std::ostringstream o;
  o << "ratio max rel error " << fmt(worst) << "; modes A/B/C " << counts[0] << "/"
    << counts[1] << "/" << counts[2] << ", sign mismatches " << mismatches;
  return {worst <= kTol && mismatches == 0, o.str()};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> check;
    double budget_s;
  };
  const std::vector<Criterion> criteria{
      {1, "momentum/nuPI equivalence", momentum_equivalence, 10.0},
      {2, "GA and OG embeddings", embeddings, 0.0},
      {3, "cumulative vs recursive nuPI", cumulative_form, 0.0},
      {4, "SVM grid convergence", svm_grid, 300.0},
      {5, "QP spectral analysis", spectral_analysis, 1.0},
      {6, "flow integration fidelity", flow_fidelity, 10.0},
      {7, "2D benchmark damping ordering", benchmark_damping, 30.0},
      {8, "KKT/oracle self-consistency", kkt_consistency, 0.0},
      {9, "ratio/mode consistency", ratio_modes, 0.0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0.0 && secs > c.budget_s) {
      v.pass = false;
      v.detail += "; over time budget " + fmt(c.budget_s) + " s";
    }
    std::printf("criterion %d %s: %s (%.3f s) %s\n", c.id, c.name, v.pass ? "PASS" : "FAIL",
                secs, v.detail.c_str());
    std::fflush(stdout);
    if (!v.pass) ++failures;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
