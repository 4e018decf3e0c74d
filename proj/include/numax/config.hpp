#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "numax/analysis.hpp"
#include "numax/core.hpp"
#include "numax/csv.hpp"
#include "numax/dual_optimizers.hpp"
#include "numax/loop.hpp"

namespace numax {

// ---------------------------------------------------------------------------
// Flat key=value files with [section] headers. A key `k` under `[s]` is
// addressed as `s.k`, both in files and as a `--s.k value` override.

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in,
                                  const std::string& source = "config") {
  KeyValues out;
  std::string section;
  std::string text;
  long number = 0;
  while (std::getline(in, text)) {
    ++number;
    std::string_view line = text;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = csv::trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(number);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section");
      section = std::string(csv::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(where + ": expected key = value");
    }
    const std::string key(csv::trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    out[section.empty() ? key : section + "." + key] =
        std::string(csv::trim(line.substr(eq + 1)));
  }
  return out;
}

inline KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_key_values(in, path);
}

/// Writes keys grouped back into sections, in sorted order.
inline void write_key_values(std::ostream& out, const KeyValues& kv) {
  std::string current;
  bool first = true;
  for (const auto& [full, value] : kv) {
    const auto dot = full.find('.');
    const std::string section = dot == std::string::npos ? "" : full.substr(0, dot);
    const std::string key = dot == std::string::npos ? full : full.substr(dot + 1);
    if (first || section != current) {
      if (!first) out << "\n";
      if (!section.empty()) out << "[" << section << "]\n";
      current = section;
      first = false;
    }
    out << key << " = " << value << "\n";
  }
}

// ---------------------------------------------------------------------------
// Value parsers. Every error names the key it came from.

inline double parse_number(const std::string& key, const std::string& value) {
  return csv::parse_double(csv::trim(value), key);
}

inline long parse_integer(const std::string& key, const std::string& value) {
  const double v = parse_number(key, value);
  if (v != std::floor(v) || std::abs(v) > 9.0e15) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
  return static_cast<long>(v);
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

/**
 * Number lists: "1, 10, 100", or the generators "logspace(a, b, n)"
 * (n values 10^a .. 10^b) and "linspace(a, b, n)".
 */
inline std::vector<double> parse_list(const std::string& key,
                                      const std::string& value) {
  const std::string_view v = csv::trim(value);
  for (const char* fn : {"logspace", "linspace"}) {
    const std::string prefix = std::string(fn) + "(";
    if (v.rfind(prefix, 0) == 0) {
      if (v.back() != ')') throw ConfigError(key + ": missing ')'");
      const auto args =
          csv::split(v.substr(prefix.size(), v.size() - prefix.size() - 1));
      if (args.size() != 3) throw ConfigError(key + ": expects (start, stop, n)");
      const double a = csv::parse_double(args[0], key);
      const double b = csv::parse_double(args[1], key);
      const long n = parse_integer(key, std::string(args[2]));
      if (n < 1) throw ConfigError(key + ": n must be >= 1");
      std::vector<double> out;
      for (long i = 0; i < n; ++i) {
        const double s = n == 1 ? a : a + (b - a) * static_cast<double>(i) /
                                              static_cast<double>(n - 1);
        out.push_back(std::string(fn) == "logspace" ? std::pow(10.0, s) : s);
      }
      return out;
    }
  }
  std::vector<double> out;
  if (v.empty()) return out;
  for (const auto& cell : csv::split(v)) out.push_back(csv::parse_double(cell, key));
  return out;
}

inline Vector parse_vector(const std::string& key, const std::string& value) {
  const auto list = parse_list(key, value);
  return Eigen::Map<const Vector>(list.data(), static_cast<Eigen::Index>(list.size()));
}

/// Matrix rows separated by ';', entries by ','.
inline Matrix parse_matrix(const std::string& key, const std::string& value) {
  std::vector<std::vector<double>> rows;
  for (const auto& row : csv::split(value, ';')) {
    if (row.empty()) continue;
    rows.push_back(parse_list(key, std::string(row)));
  }
  if (rows.empty()) return Matrix(0, 0);
  Matrix M(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) {
      throw ConfigError(key + ": ragged matrix rows");
    }
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return M;
}

// ---------------------------------------------------------------------------
// Run configuration.

enum class ProblemKind { Svm, Benchmark2d, Qp };
enum class MetricKind { DistToLambdaStar, MaxViolation, Overshoot };

inline std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::DistToLambdaStar:
      return "dist_to_lambda_star";
    case MetricKind::MaxViolation:
      return "max_violation";
    case MetricKind::Overshoot:
      return "overshoot";
  }
  return "?";
}

struct ProblemConfig {
  ProblemKind kind = ProblemKind::Svm;
  std::string data_path = "data/iris_setosa_versicolor.csv";
  std::uint64_t split_seed = 0;
  double train_fraction = 0.7;
  bool standardize = true;
  std::string qp_file;
  std::optional<Vector> x0;
};

struct GridConfig {
  std::vector<double> kp;
  std::vector<double> ki;
  std::vector<double> nu;
  std::vector<double> step_size;
};

struct SweepConfig {
  double h = 1.0;
  double a = -1.0;
  double ki = 1.0;
  double kp_min = -5.0;
  double kp_max = 5.0;
  long samples = 1000;
};

struct RunConfig {
  ProblemConfig problem;
  LoopConfig loop;
  std::string dual_kind = "nupi";
  GridConfig grid;
  SweepConfig sweep;
  std::uint64_t seed = 0;
  std::string output_dir;
  MetricKind metric = MetricKind::DistToLambdaStar;
  int gradient_points = 20;
  KeyValues resolved;  // every key with its effective value (unused grid axes omitted)
};

namespace detail {

// Defaults, also the list of accepted keys.
inline const KeyValues& default_keys() {
  static const KeyValues keys = {
      {"problem.kind", "svm"},
      {"problem.data", "data/iris_setosa_versicolor.csv"},
      {"problem.split_seed", "0"},
      {"problem.train_fraction", "0.7"},
      {"problem.standardize", "true"},
      {"problem.qp_file", ""},
      {"problem.x0", ""},
      {"loop.scheme", "alternating"},
      {"loop.max_steps", "5000"},
      {"loop.record_every", "1"},
      {"loop.stop_tolerance", ""},
      {"loop.dual_restarts", "false"},
      {"primal.kind", "gd_momentum"},
      {"primal.step_size", "1e-3"},
      {"primal.momentum", "0.9"},
      {"primal.beta1", "0.9"},
      {"primal.beta2", "0.999"},
      {"primal.eps", "1e-8"},
      {"dual.kind", "nupi"},
      {"dual.kp", "0"},
      {"dual.ki", "0.01"},
      {"dual.nu", "0"},
      {"dual.xi0", "match_error"},
      {"dual.step_size", "0.01"},
      {"dual.alpha", "0.01"},
      {"dual.beta", "0.9"},
      {"dual.gamma", "0"},
      {"dual.beta1", "0.9"},
      {"dual.beta2", "0.999"},
      {"dual.eps", "1e-8"},
      {"grid.kp", ""},
      {"grid.ki", ""},
      {"grid.nu", ""},
      {"grid.step_size", ""},
      {"sweep.h", "1"},
      {"sweep.a", "-1"},
      {"sweep.ki", "1"},
      {"sweep.kp_min", "-5"},
      {"sweep.kp_max", "5"},
      {"sweep.samples", "1000"},
      {"run.seed", "0"},
      {"run.metric", "dist_to_lambda_star"},
      {"run.gradient_points", "20"},
      {"output.dir", ""},
  };
  return keys;
}

}  // namespace detail

/// Builds the dual optimizer config named by `kind` from resolved keys.
inline DualOptimizerConfig make_dual_config(const KeyValues& kv) {
  auto num = [&](const std::string& k) { return parse_number(k, kv.at(k)); };
  const std::string& kind = kv.at("dual.kind");
  if (kind == "nupi") {
    NuPIConfig c;
    c.kp = num("dual.kp");
    c.ki = num("dual.ki");
    c.nu = num("dual.nu");
    const std::string& xi0 = kv.at("dual.xi0");
    if (xi0 == "match_error") {
      c.xi0_policy = Xi0Policy::MatchError;
    } else if (xi0 == "zero") {
      c.xi0_policy = Xi0Policy::Zero;
    } else {
      throw ConfigError("dual.xi0: expected match_error or zero, got '" + xi0 + "'");
    }
    return c;
  }
  if (kind == "ga") return GAConfig{num("dual.step_size")};
  if (kind == "um") {
    return UMConfig{num("dual.alpha"), num("dual.beta"), num("dual.gamma")};
  }
  if (kind == "adam") {
    return AdamConfig{num("dual.step_size"), num("dual.beta1"), num("dual.beta2"),
                      num("dual.eps")};
  }
  throw ConfigError("dual.kind: expected nupi, ga, um or adam, got '" + kind + "'");
}

/**
 * Resolves a run configuration: defaults, then the file's keys, then
 * command-line overrides. Unknown keys are errors.
 */
inline RunConfig resolve_config(const KeyValues& file_keys,
                                const KeyValues& overrides = {}) {
  KeyValues kv = detail::default_keys();
  for (const auto* layer : {&file_keys, &overrides}) {
    for (const auto& [k, v] : *layer) {
      if (!kv.count(k)) throw ConfigError(k + ": unknown key");
      // A grid axis that is mentioned must list at least one value.
      if (k.rfind("grid.", 0) == 0 && csv::trim(v).empty()) {
        throw ConfigError(k + ": empty grid axis");
      }
      kv[k] = v;
    }
  }

  RunConfig rc;
  auto num = [&](const std::string& k) { return parse_number(k, kv.at(k)); };
  auto integer = [&](const std::string& k) { return parse_integer(k, kv.at(k)); };

  const std::string& pk = kv.at("problem.kind");
  if (pk == "svm") {
    rc.problem.kind = ProblemKind::Svm;
  } else if (pk == "benchmark2d") {
    rc.problem.kind = ProblemKind::Benchmark2d;
  } else if (pk == "qp") {
    rc.problem.kind = ProblemKind::Qp;
    if (kv.at("problem.qp_file").empty()) {
      throw ConfigError("problem.qp_file: required when problem.kind = qp");
    }
  } else {
    throw ConfigError("problem.kind: expected svm, benchmark2d or qp, got '" +
                      pk + "'");
  }
  rc.problem.data_path = kv.at("problem.data");
  const long split_seed = integer("problem.split_seed");
  if (split_seed < 0) throw ConfigError("problem.split_seed: must be >= 0");
  rc.problem.split_seed = static_cast<std::uint64_t>(split_seed);
  rc.problem.train_fraction = num("problem.train_fraction");
  if (!(rc.problem.train_fraction > 0.0 && rc.problem.train_fraction <= 1.0)) {
    throw ConfigError("problem.train_fraction: must be in (0, 1]");
  }
  rc.problem.standardize = parse_bool("problem.standardize", kv.at("problem.standardize"));
  rc.problem.qp_file = kv.at("problem.qp_file");
  if (!kv.at("problem.x0").empty()) {
    rc.problem.x0 = parse_vector("problem.x0", kv.at("problem.x0"));
  }

  const std::string& scheme = kv.at("loop.scheme");
  if (scheme == "alternating") {
    rc.loop.scheme = Scheme::Alternating;
  } else if (scheme == "simultaneous") {
    rc.loop.scheme = Scheme::Simultaneous;
  } else {
    throw ConfigError("loop.scheme: expected alternating or simultaneous");
  }
  rc.loop.max_steps = integer("loop.max_steps");
  if (rc.loop.max_steps < 1) throw ConfigError("loop.max_steps: must be >= 1");
  rc.loop.record_every = integer("loop.record_every");
  if (rc.loop.record_every < 1) throw ConfigError("loop.record_every: must be >= 1");
  if (!kv.at("loop.stop_tolerance").empty()) {
    rc.loop.stop_tolerance = num("loop.stop_tolerance");
  }
  rc.loop.dual_restarts = parse_bool("loop.dual_restarts", kv.at("loop.dual_restarts"));

  const std::string& prim = kv.at("primal.kind");
  if (prim == "gd") {
    rc.loop.primal.kind = PrimalKind::GradientDescent;
  } else if (prim == "gd_momentum") {
    rc.loop.primal.kind = PrimalKind::GradientDescentMomentum;
  } else if (prim == "adam") {
    rc.loop.primal.kind = PrimalKind::Adam;
  } else {
    throw ConfigError("primal.kind: expected gd, gd_momentum or adam");
  }
  rc.loop.primal.step_size = num("primal.step_size");
  if (!(rc.loop.primal.step_size > 0.0)) {
    throw ConfigError("primal.step_size: must be > 0");
  }
  rc.loop.primal.momentum = num("primal.momentum");
  rc.loop.primal.beta1 = num("primal.beta1");
  rc.loop.primal.beta2 = num("primal.beta2");
  rc.loop.primal.eps = num("primal.eps");

  rc.dual_kind = kv.at("dual.kind");
  rc.loop.dual = make_dual_config(kv);
  if (const auto* um = std::get_if<UMConfig>(&rc.loop.dual); um && um->beta == 1.0) {
    throw ConfigError("dual.beta: momentum with beta = 1 is not supported");
  }

  rc.grid.kp = parse_list("grid.kp", kv.at("grid.kp"));
  rc.grid.ki = parse_list("grid.ki", kv.at("grid.ki"));
  rc.grid.nu = parse_list("grid.nu", kv.at("grid.nu"));
  rc.grid.step_size = parse_list("grid.step_size", kv.at("grid.step_size"));

  rc.sweep.h = num("sweep.h");
  rc.sweep.a = num("sweep.a");
  rc.sweep.ki = num("sweep.ki");
  rc.sweep.kp_min = num("sweep.kp_min");
  rc.sweep.kp_max = num("sweep.kp_max");
  rc.sweep.samples = integer("sweep.samples");

  const long seed = integer("run.seed");
  if (seed < 0) throw ConfigError("run.seed: must be >= 0");
  rc.seed = static_cast<std::uint64_t>(seed);
  const std::string& metric = kv.at("run.metric");
  if (metric == "dist_to_lambda_star") {
    rc.metric = MetricKind::DistToLambdaStar;
  } else if (metric == "max_violation") {
    rc.metric = MetricKind::MaxViolation;
  } else if (metric == "overshoot") {
    rc.metric = MetricKind::Overshoot;
  } else {
    throw ConfigError("run.metric: expected dist_to_lambda_star, max_violation "
                      "or overshoot");
  }
  rc.gradient_points = static_cast<int>(integer("run.gradient_points"));
  if (rc.gradient_points < 1) throw ConfigError("run.gradient_points: must be >= 1");

  rc.output_dir = kv.at("output.dir");
  if (rc.output_dir.empty()) {
    if (const char* env = std::getenv("NUMAX_OUTPUT_DIR"); env && *env) {
      rc.output_dir = env;
    } else {
      rc.output_dir = ".";
    }
    kv["output.dir"] = rc.output_dir;
  }
  // Unused grid axes are left out so the resolved file can be read back.
  for (const char* k : {"grid.kp", "grid.ki", "grid.nu", "grid.step_size"}) {
    if (kv.at(k).empty()) kv.erase(k);
  }
  rc.resolved = std::move(kv);
  return rc;
}

/// QP description file: keys H, A, b, c (matrices as rows separated by ';').
inline QPSystem load_qp_file(const std::string& path) {
  const KeyValues kv = load_key_values(path);
  for (const auto& [k, v] : kv) {
    if (k != "H" && k != "A" && k != "b" && k != "c") {
      throw ConfigError(path + ": unknown key '" + k + "'");
    }
  }
  for (const char* k : {"H", "A", "b"}) {
    if (!kv.count(k)) throw ConfigError(path + ": missing key '" + k + "'");
  }
  QPSystem sys;
  sys.H = parse_matrix("H", kv.at("H"));
  sys.A = parse_matrix("A", kv.at("A"));
  sys.b = parse_vector("b", kv.at("b"));
  sys.c_lin = kv.count("c") ? parse_vector("c", kv.at("c"))
                            : Vector(Vector::Zero(sys.H.rows()));
  validate(sys);
  return sys;
}

}  // namespace numax
