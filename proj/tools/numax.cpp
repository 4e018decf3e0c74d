// Command-line front end: run, grid, sweep-regime, validate-gradients,
// oracle-svm. Exit codes: 0 success, 2 configuration error, 3 numerical
// failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "numax/analysis.hpp"
#include "numax/config.hpp"
#include "numax/harness.hpp"
#include "numax/problems.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

// Leftover `--section.key value` (or `--section.key=value`) pairs.
numax::KeyValues parse_overrides(const std::vector<std::string>& args) {
  numax::KeyValues out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) {
      throw numax::ConfigError("unexpected argument '" + a + "'");
    }
    std::string key = a.substr(2);
    if (const auto eq = key.find('='); eq != std::string::npos) {
      out[key.substr(0, eq)] = key.substr(eq + 1);
      continue;
    }
    if (i + 1 >= args.size()) throw numax::ConfigError(key + ": missing value");
    out[key] = args[++i];
  }
  return out;
}

struct Common {
  std::string config_path;
  std::string output_dir;
  std::vector<std::string> extras;

  numax::RunConfig resolve() const {
    numax::KeyValues file;
    if (!config_path.empty()) file = numax::load_key_values(config_path);
    numax::KeyValues over = parse_overrides(extras);
    if (!output_dir.empty()) over["output.dir"] = output_dir;
    return numax::resolve_config(file, over);
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "key=value config file");
  cmd->add_option("-o,--output-dir", c.output_dir,
                  "output directory (default: output.dir, then $NUMAX_OUTPUT_DIR)");
  cmd->allow_extras();
}

int cmd_run(const Common& c) {
  const numax::RunConfig rc = c.resolve();
  numax::RunOutcome out;
  const bool finite = numax::run_single(rc, &out);
  for (const auto& [k, v] : out.summary) std::cout << k << "=" << v << "\n";
  std::cout << "wrote " << rc.output_dir << "/trajectory.csv\n";
  return finite ? kExitOk : kExitNumerical;
}

int cmd_grid(const Common& c, unsigned jobs) {
  const numax::RunConfig rc = c.resolve();
  const auto dir = numax::ensure_output_dir(rc.output_dir);
  const numax::PreparedProblem p = numax::prepare_problem(rc);
  const auto rows = numax::run_grid(rc, p, jobs);
  numax::write_file(dir / "config.resolved.ini",
                    [&](std::ostream& o) { numax::write_key_values(o, rc.resolved); });
  numax::write_file(dir / "grid.csv",
                    [&](std::ostream& o) { numax::write_grid_csv(o, rows); });
  long diverged = 0;
  for (const auto& r : rows) diverged += r.diverged ? 1 : 0;
  std::cout << rows.size() << " cells, " << diverged << " diverged; wrote "
            << (dir / "grid.csv").string() << "\n";
  return kExitOk;
}

int cmd_sweep(const Common& c) {
  const numax::RunConfig rc = c.resolve();
  const auto& s = rc.sweep;
  const numax::RegimeSweep sweep =
      numax::run_regime_sweep(s.h, s.a, s.ki, s.kp_min, s.kp_max, s.samples);
  const auto dir = numax::ensure_output_dir(rc.output_dir);
  numax::write_file(dir / "regime_sweep.csv",
                    [&](std::ostream& o) { numax::write_regime_sweep_csv(o, sweep); });
  for (const auto& b : sweep.boundaries) {
    std::cout << "boundary kp=" << numax::csv::format(b.kp) << " "
              << numax::to_string(b.below) << " -> " << numax::to_string(b.above)
              << "\n";
  }
  std::cout << "wrote " << (dir / "regime_sweep.csv").string() << "\n";
  return kExitOk;
}

int cmd_validate(const Common& c) {
  const numax::RunConfig rc = c.resolve();
  const numax::PreparedProblem p = numax::prepare_problem(rc);
  const numax::GradientReport report = numax::validate_gradients(
      p.problem, rc.gradient_points, rc.seed, 1.0, &p.x0);
  std::cout << "problem=" << p.problem.name << "\n"
            << "points_checked=" << report.points_checked << "\n"
            << "max_objective_rel_error="
            << numax::csv::format(report.max_objective_rel_error) << "\n"
            << "max_jacobian_rel_error="
            << numax::csv::format(report.max_jacobian_rel_error) << "\n"
            << "passed=" << (report.passed() ? "true" : "false") << "\n";
  for (const auto& f : report.failures) std::cout << "failure: " << f.what << "\n";
  return report.passed() ? kExitOk : kExitNumerical;
}

int cmd_oracle(const Common& c) {
  const numax::RunConfig rc = c.resolve();
  if (rc.problem.kind != numax::ProblemKind::Svm) {
    throw numax::ConfigError("problem.kind: oracle-svm needs problem.kind = svm");
  }
  numax::DatasetSplit split =
      numax::split_dataset(numax::load_dataset_csv(rc.problem.data_path),
                           rc.problem.split_seed, rc.problem.train_fraction);
  if (rc.problem.standardize) {
    split.train = numax::Standardizer::fit(split.train).apply(split.train);
  }
  const numax::SvmOracleResult r = numax::svm_dual_oracle(split.train);
  std::ostringstream o;
  o << "status=" << numax::to_string(r.status) << "\n";
  o << "kkt_residual=" << numax::csv::format(r.kkt_residual()) << "\n";
  o << "b=" << numax::csv::format(r.b) << "\n";
  for (Eigen::Index j = 0; j < r.w.size(); ++j) {
    o << "w_" << j << "=" << numax::csv::format(r.w[j]) << "\n";
  }
  o << "support=";
  for (std::size_t k = 0; k < r.support.size(); ++k) {
    o << (k ? "," : "") << r.support[k];
  }
  o << "\n";
  for (Eigen::Index i = 0; i < r.lambda.size(); ++i) {
    o << "lambda_" << i << "=" << numax::csv::format(r.lambda[i]) << "\n";
  }
  const auto dir = numax::ensure_output_dir(rc.output_dir);
  numax::write_file(dir / "oracle_svm.txt", [&](std::ostream& f) { f << o.str(); });
  std::cout << o.str();
  return r.status == numax::OracleStatus::Optimal ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numax: constrained optimization with PI-controlled multipliers"};
  app.require_subcommand(1);

  Common run_opts, grid_opts, sweep_opts, grad_opts, oracle_opts;
  unsigned jobs = numax::default_jobs();

  auto* run = app.add_subcommand("run", "single run; writes trajectory.csv and summary.txt");
  add_common(run, run_opts);
  auto* grid = app.add_subcommand("grid", "grid search; writes grid.csv");
  add_common(grid, grid_opts);
  grid->add_option("-j,--jobs", jobs, "worker threads (default: available cores)")
      ->check(CLI::PositiveNumber);
  auto* sweep = app.add_subcommand("sweep-regime", "1D damping-regime sweep over kp");
  add_common(sweep, sweep_opts);
  auto* grad = app.add_subcommand("validate-gradients",
                                  "finite-difference check of a problem's derivatives");
  add_common(grad, grad_opts);
  auto* oracle = app.add_subcommand("oracle-svm", "reference SVM solution and KKT residuals");
  add_common(oracle, oracle_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      run_opts.extras = run->remaining();
      return cmd_run(run_opts);
    }
    if (*grid) {
      grid_opts.extras = grid->remaining();
      return cmd_grid(grid_opts, jobs);
    }
    if (*sweep) {
      sweep_opts.extras = sweep->remaining();
      return cmd_sweep(sweep_opts);
    }
    if (*grad) {
      grad_opts.extras = grad->remaining();
      return cmd_validate(grad_opts);
    }
    if (*oracle) {
      oracle_opts.extras = oracle->remaining();
      return cmd_oracle(oracle_opts);
    }
  } catch (const numax::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const numax::DomainError& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const numax::NonFiniteError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const numax::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitConfig;
}
