#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "numax/analysis.hpp"
#include "numax/config.hpp"
#include "numax/core.hpp"
#include "numax/csv.hpp"
#include "numax/dual_optimizers.hpp"
#include "numax/loop.hpp"
#include "numax/problems.hpp"

namespace numax {

/// A reference solver failed or a run produced non-finite values. Maps to
/// exit code 3 in the CLI.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metric value above which a run counts as diverged.
inline constexpr double kDivergenceThreshold = 1e3;

/// A problem ready to run, with whatever ground truth is available.
struct PreparedProblem {
  ConstrainedProblem problem;
  Vector x0;
  std::optional<Vector> theta_star;          // optimal stacked multipliers
  std::vector<Eigen::Index> intended_active;  // inequality rows for Overshoot
  std::optional<SvmDataset> train;
  std::optional<SvmDataset> validation;
};

inline PreparedProblem prepare_svm(const SvmDataset& data, std::uint64_t split_seed,
                                   double train_fraction, bool standardize) {
  DatasetSplit split = split_dataset(data, split_seed, train_fraction);
  if (standardize) {
    const Standardizer s = Standardizer::fit(split.train);
    split.train = s.apply(split.train);
    if (split.validation.size() > 0) split.validation = s.apply(split.validation);
  }
  PreparedProblem p;
  p.problem = build_svm_problem(split.train);
  p.x0 = Vector::Zero(p.problem.dim_primal);
  const SvmOracleResult oracle = svm_dual_oracle(split.train);
  if (oracle.status != OracleStatus::Optimal) {
    throw NumericalError("svm oracle: " + to_string(oracle.status) +
                         " (KKT residual " + csv::format(oracle.kkt_residual()) +
                         ")");
  }
  p.theta_star = oracle.lambda;
  p.intended_active = oracle.support;
  p.train = std::move(split.train);
  p.validation = std::move(split.validation);
  return p;
}

inline PreparedProblem prepare_problem(const RunConfig& rc) {
  PreparedProblem p;
  switch (rc.problem.kind) {
    case ProblemKind::Svm:
      p = prepare_svm(load_dataset_csv(rc.problem.data_path), rc.problem.split_seed,
                      rc.problem.train_fraction, rc.problem.standardize);
      break;
    case ProblemKind::Benchmark2d:
      p.problem = build_2d_benchmark();
      p.x0 = (Vector(2) << -1.0, -1.0).finished();
      break;
    case ProblemKind::Qp: {
      const QPSystem sys = load_qp_file(rc.problem.qp_file);
      p.problem = build_qp_problem(sys);
      p.x0 = Vector::Zero(p.problem.dim_primal);
      p.theta_star = kkt_solve_qp(sys).mu;
      break;
    }
  }
  if (rc.problem.x0) {
    if (rc.problem.x0->size() != p.problem.dim_primal) {
      throw ConfigError("problem.x0: has " + std::to_string(rc.problem.x0->size()) +
                        " entries, problem has " +
                        std::to_string(p.problem.dim_primal) + " primal variables");
    }
    p.x0 = *rc.problem.x0;
  }
  return p;
}

inline std::optional<double> dist_to_theta_star(const PreparedProblem& p,
                                                const Trajectory& traj) {
  if (!p.theta_star) return std::nullopt;
  return (traj.final_duals.stacked() - *p.theta_star).norm();
}

/// max over recorded steps of max(0, -g_i(x_t)) for the intended-active rows
/// (all inequality rows when none are designated).
inline double overshoot(const PreparedProblem& p, const Trajectory& traj) {
  std::vector<Eigen::Index> rows = p.intended_active;
  if (rows.empty()) {
    for (Eigen::Index i = 0; i < p.problem.num_ineq; ++i) rows.push_back(i);
  }
  double worst = 0.0;
  for (const auto& rec : traj.steps) {
    for (Eigen::Index i : rows) worst = std::max(worst, -rec.g[i]);
  }
  return worst;
}

inline double final_max_violation(const PreparedProblem& p, const Trajectory& traj) {
  const Vector& x = traj.final_x;
  if (!x.allFinite()) return std::numeric_limits<double>::infinity();
  double v = 0.0;
  if (p.problem.num_ineq > 0) v = std::max(v, p.problem.eval_ineq(x).maxCoeff());
  if (p.problem.num_eq > 0) v = std::max(v, linf(p.problem.eval_eq(x)));
  return v;
}

struct RunOutcome {
  Trajectory trajectory;
  double metric = 0.0;
  bool diverged = false;
  std::vector<std::pair<std::string, std::string>> summary;  // key=value, ordered
};

inline double evaluate_metric(const PreparedProblem& p, const Trajectory& traj,
                              MetricKind metric) {
  switch (metric) {
    case MetricKind::DistToLambdaStar: {
      const auto d = dist_to_theta_star(p, traj);
      if (!d) {
        throw ConfigError("run.metric: dist_to_lambda_star needs a problem "
                          "with known optimal multipliers (svm or qp)");
      }
      return *d;
    }
    case MetricKind::MaxViolation:
      return final_max_violation(p, traj);
    case MetricKind::Overshoot:
      return overshoot(p, traj);
  }
  return 0.0;
}

inline RunOutcome run_prepared(const PreparedProblem& p, const LoopConfig& loop,
                               MetricKind metric) {
  RunOutcome out;
  out.trajectory = run(p.problem, p.x0,
                       DualVector::zeros(p.problem.num_ineq, p.problem.num_eq), loop);
  const Trajectory& traj = out.trajectory;
  out.metric = evaluate_metric(p, traj, metric);
  out.diverged = traj.terminated_reason == TerminatedReason::NonFinite ||
                 !std::isfinite(out.metric) || out.metric > kDivergenceThreshold;

  auto& s = out.summary;
  s.emplace_back("problem", p.problem.name);
  s.emplace_back("dual", dual_optimizer_name(loop.dual));
  s.emplace_back("iterations", std::to_string(traj.iterations));
  s.emplace_back("terminated_reason", to_string(traj.terminated_reason));
  s.emplace_back("final_objective", csv::format(traj.final_x.allFinite()
                                                    ? p.problem.eval_objective(traj.final_x)
                                                    : std::nan("")));
  s.emplace_back("final_max_violation", csv::format(final_max_violation(p, traj)));
  if (const auto d = dist_to_theta_star(p, traj)) {
    s.emplace_back("dist_to_lambda_star", csv::format(*d));
    s.emplace_back("norm_lambda_star", csv::format(p.theta_star->norm()));
  }
  s.emplace_back("overshoot", csv::format(overshoot(p, traj)));
  if (p.train && traj.final_x.allFinite()) {
    const Eigen::Index d = p.train->dim();
    s.emplace_back("train_accuracy",
                   csv::format(svm_accuracy(*p.train, traj.final_x.head(d),
                                            traj.final_x[d])));
    if (p.validation && p.validation->size() > 0) {
      s.emplace_back("validation_accuracy",
                     csv::format(svm_accuracy(*p.validation, traj.final_x.head(d),
                                              traj.final_x[d])));
    }
  }
  s.emplace_back("metric", to_string(metric));
  s.emplace_back("final_metric", csv::format(out.metric));
  s.emplace_back("diverged", out.diverged ? "1" : "0");
  return out;
}

inline std::filesystem::path ensure_output_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw ConfigError("output.dir: cannot create '" + dir + "'");
  }
  return dir;
}

inline void write_file(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  body(out);
}

/**
 * Single run: writes trajectory.csv, summary.txt and config.resolved.ini
 * into the output directory. Returns true when the run stayed finite.
 */
inline bool run_single(const RunConfig& rc, RunOutcome* outcome = nullptr) {
  const auto dir = ensure_output_dir(rc.output_dir);
  write_file(dir / "config.resolved.ini",
             [&](std::ostream& o) { write_key_values(o, rc.resolved); });
  const PreparedProblem p = prepare_problem(rc);
  RunOutcome out = run_prepared(p, rc.loop, rc.metric);
  write_file(dir / "trajectory.csv", [&](std::ostream& o) {
    write_trajectory_csv(o, out.trajectory, p.problem);
  });
  write_file(dir / "summary.txt", [&](std::ostream& o) {
    for (const auto& [k, v] : out.summary) o << k << "=" << v << "\n";
  });
  const bool finite = out.trajectory.terminated_reason != TerminatedReason::NonFinite;
  if (outcome != nullptr) *outcome = std::move(out);
  return finite;
}

// ---------------------------------------------------------------------------
// Grid search.

struct GridRow {
  double kp = 0.0;
  double ki = 0.0;
  double nu = 0.0;
  double final_metric = 0.0;
  bool diverged = false;
  std::string error;  // non-empty when the cell threw
};

namespace detail {

struct GridCell {
  KeyValues overrides;
  double kp, ki, nu;
};

inline std::vector<GridCell> expand_grid(const RunConfig& rc) {
  const GridConfig& g = rc.grid;
  const KeyValues& kv = rc.resolved;
  const std::string& kind = rc.dual_kind;
  const bool pid = kind == "nupi";
  if (pid && !g.step_size.empty()) {
    throw ConfigError("grid.step_size: not used by dual.kind = nupi");
  }
  if (!pid && (!g.kp.empty() || !g.ki.empty() || !g.nu.empty())) {
    throw ConfigError("grid.kp/ki/nu: only used by dual.kind = nupi");
  }
  if (g.kp.empty() && g.ki.empty() && g.nu.empty() && g.step_size.empty()) {
    throw ConfigError("grid: no axis given (grid.kp, grid.ki, grid.nu or "
                      "grid.step_size)");
  }
  auto axis = [&](const std::vector<double>& values, const std::string& key) {
    return values.empty() ? std::vector<double>{parse_number(key, kv.at(key))}
                          : values;
  };

  std::vector<GridCell> cells;
  if (pid) {
    for (double kp : axis(g.kp, "dual.kp")) {
      for (double ki : axis(g.ki, "dual.ki")) {
        for (double nu : axis(g.nu, "dual.nu")) {
          cells.push_back({{{"dual.kp", csv::format(kp)},
                            {"dual.ki", csv::format(ki)},
                            {"dual.nu", csv::format(nu)}},
                           kp, ki, nu});
        }
      }
    }
    return cells;
  }
  // Other optimizers: report the equivalent nuPI gains where one exists.
  const std::string step_key = kind == "um" ? "dual.alpha" : "dual.step_size";
  for (double step : axis(g.step_size, step_key)) {
    GridCell cell{{{step_key, csv::format(step)}}, 0.0, step, 0.0};
    if (kind == "um") {
      const double beta = parse_number("dual.beta", kv.at("dual.beta"));
      const NuPIConfig eq = map_um_to_nupi(
          {step, beta, parse_number("dual.gamma", kv.at("dual.gamma"))});
      cell.kp = eq.kp;
      cell.ki = eq.ki;
      cell.nu = eq.nu;
    } else if (kind == "adam") {
      cell.kp = std::nan("");
      cell.nu = std::nan("");
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace detail

inline unsigned default_jobs() {
  return std::max(1u, std::thread::hardware_concurrency());
}

/**
 * Runs every grid cell on a pool of `jobs` workers. Cells share only the
 * read-only prepared problem; rows come back in lexicographic grid order
 * regardless of scheduling.
 */
inline std::vector<GridRow> run_grid(const RunConfig& rc, const PreparedProblem& p,
                                     unsigned jobs) {
  const auto cells = detail::expand_grid(rc);
  std::vector<GridRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      GridRow& row = rows[i];
      row.kp = cells[i].kp;
      row.ki = cells[i].ki;
      row.nu = cells[i].nu;
      try {
        KeyValues kv = rc.resolved;
        for (const auto& [k, v] : cells[i].overrides) kv[k] = v;
        LoopConfig loop = rc.loop;
        loop.dual = make_dual_config(kv);
        const RunOutcome out = run_prepared(p, loop, rc.metric);
        row.final_metric = out.metric;
        row.diverged = out.diverged;
      } catch (const std::exception& e) {
        row.final_metric = std::nan("");
        row.diverged = true;
        row.error = e.what();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

/// `kp,ki,nu,final_metric,diverged_flag`; diverged_flag is 0, 1, or `error`
/// for a cell that threw (its message follows on a `# error` comment line).
inline void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].error.empty()) {
      std::string msg = rows[i].error;
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << "# error row=" << i << " " << msg << "\n";
    }
  }
  out << "kp,ki,nu,final_metric,diverged_flag\n";
  for (const auto& r : rows) {
    out << csv::format(r.kp) << ',' << csv::format(r.ki) << ',' << csv::format(r.nu)
        << ',' << csv::format(r.final_metric) << ','
        << (r.error.empty() ? (r.diverged ? "1" : "0") : "error") << "\n";
  }
}

inline std::vector<GridRow> read_grid_csv(std::istream& in) {
  std::vector<std::string> comments;
  const auto lines = csv::read_lines(in, &comments);
  if (lines.empty()) throw ConfigError("grid csv: missing header");
  std::map<std::size_t, std::string> errors;
  for (const auto& c : comments) {
    const std::string tag = "# error row=";
    if (c.rfind(tag, 0) != 0) continue;
    const auto space = c.find(' ', tag.size());
    const auto idx = static_cast<std::size_t>(
        csv::parse_double(c.substr(tag.size(), space - tag.size()), "grid csv"));
    errors[idx] = space == std::string::npos ? "" : c.substr(space + 1);
  }
  std::vector<GridRow> rows;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto cells = csv::split(lines[k].text);
    const std::string where = "line " + std::to_string(lines[k].number);
    if (cells.size() != 5) throw ConfigError(where + ": expected 5 columns");
    GridRow r;
    r.kp = csv::parse_double(cells[0], where);
    r.ki = csv::parse_double(cells[1], where);
    r.nu = csv::parse_double(cells[2], where);
    r.final_metric = csv::parse_double(cells[3], where);
    if (cells[4] == "error") {
      r.diverged = true;
      r.error = errors.count(rows.size()) ? errors[rows.size()] : "error";
    } else if (cells[4] == "0" || cells[4] == "1") {
      r.diverged = cells[4] == "1";
    } else {
      throw ConfigError(where + ": diverged_flag must be 0, 1 or error");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace numax
