#pragma once

#include <cmath>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "numax/core.hpp"

namespace numax {

// All update rules below act componentwise on a stacked multiplier vector
// theta = [lambda, mu]. None of them projects; callers apply project_stacked
// afterwards and hand the projected value back through the state's theta.

/// How the EMA state xi_0 is chosen at the first step.
enum class Xi0Policy {
  MatchError,  // xi_0 = e_0, first step equals a gradient-ascent step
  MatchUM,     // xi_0 = (1 - beta) e_0, used by the momentum mapping
  Zero,        // xi_0 = 0
  Explicit,    // xi_0 supplied by the caller
};

struct NuPIConfig {
  double nu = 0.0;
  double kp = 0.0;
  double ki = 0.0;
  Xi0Policy xi0_policy = Xi0Policy::MatchError;
  double xi0_beta = 0.0;   // only read for MatchUM
  Vector xi0_explicit;     // only read for Explicit
};

/// Non-fatal warnings for a configuration that runs but is unusual.
inline std::vector<std::string> validate(const NuPIConfig& config) {
  std::vector<std::string> warnings;
  if (!(config.ki > 0.0)) {
    warnings.emplace_back("ki <= 0: the integral term does not ascend");
  }
  if (!(config.nu > -1.0 && config.nu < 1.0)) {
    warnings.emplace_back("nu outside (-1, 1): the EMA does not contract");
  }
  return warnings;
}

struct NuPIState {
  Vector xi;
  Vector theta;
  bool prev_initialized = false;
  long step_count = 0;

  NuPIState() = default;
  explicit NuPIState(Vector theta0) : theta(std::move(theta0)) {}
};

namespace detail {

inline void check_error(const Vector& theta, const Vector& error,
                        const char* where) {
  if (theta.size() != error.size()) {
    throw ConfigError(std::string(where) + ": error has length " +
                      std::to_string(error.size()) + ", state has " +
                      std::to_string(theta.size()));
  }
  if (!error.allFinite()) {
    throw NonFiniteError(std::string(where) +
                         ": non-finite constraint violation, step rejected");
  }
}

inline Vector initial_xi(const NuPIConfig& config, const Vector& e0) {
  switch (config.xi0_policy) {
    case Xi0Policy::MatchError:
      return e0;
    case Xi0Policy::MatchUM:
      return (1.0 - config.xi0_beta) * e0;
    case Xi0Policy::Zero:
      return Vector::Zero(e0.size());
    case Xi0Policy::Explicit:
      if (config.xi0_explicit.size() != e0.size()) {
        throw ConfigError("nupi_step: explicit xi0 has length " +
                          std::to_string(config.xi0_explicit.size()) +
                          ", expected " + std::to_string(e0.size()));
      }
      return config.xi0_explicit;
  }
  throw ConfigError("nupi_step: unknown xi0 policy");
}

}  // namespace detail

/**
 * One nuPI update in recursive form.
 *
 *   t = 0:   theta_1 = theta_0 + ki e_0 + kp xi_0        (xi stays xi_0)
 *   t >= 1:  theta_{t+1} = theta_t + ki e_t + kp (1 - nu)(e_t - xi_{t-1})
 *            xi_t = nu xi_{t-1} + (1 - nu) e_t
 *
 * which reproduces theta_{t+1} = theta_0 + kp xi_t + ki sum_{tau<=t} e_tau.
 * Throws NonFiniteError without touching `state` if `error` has NaN/Inf.
 */
inline NuPIState nupi_step(const NuPIState& state, const NuPIConfig& config,
                           const Vector& error) {
  detail::check_error(state.theta, error, "nupi_step");
  NuPIState next = state;
  if (!state.prev_initialized) {
    next.xi = detail::initial_xi(config, error);
    next.theta = state.theta + config.ki * error + config.kp * next.xi;
    next.prev_initialized = true;
  } else {
    const double one_minus_nu = 1.0 - config.nu;
    next.theta = state.theta + config.ki * error +
                 config.kp * one_minus_nu * (error - state.xi);
    next.xi = config.nu * state.xi + one_minus_nu * error;
  }
  ++next.step_count;
  return next;
}

struct UMConfig {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;  // 0 = Polyak, 1 = Nesterov
};

struct UMState {
  Vector phi;
  Vector theta;

  UMState() = default;
  explicit UMState(Vector theta0)
      : phi(Vector::Zero(theta0.size())), theta(std::move(theta0)) {}
};

/// Unified momentum: phi' = beta phi + alpha e; theta' = theta + phi' +
/// beta gamma (phi' - phi).
inline UMState um_step(const UMState& state, const UMConfig& config,
                       const Vector& error) {
  detail::check_error(state.theta, error, "um_step");
  UMState next;
  next.phi = config.beta * state.phi + config.alpha * error;
  next.theta = state.theta + next.phi +
               config.beta * config.gamma * (next.phi - state.phi);
  return next;
}

/// nuPI gains that reproduce UnifiedMomentum(alpha, beta, gamma) iterate by
/// iterate.
inline NuPIConfig map_um_to_nupi(const UMConfig& config) {
  if (config.beta == 1.0) {
    throw DomainError("map_um_to_nupi: beta == 1 has no nuPI equivalent");
  }
  const double one_minus_beta = 1.0 - config.beta;
  NuPIConfig out;
  out.nu = config.beta;
  out.ki = config.alpha / one_minus_beta;
  out.kp = -config.alpha * config.beta / (one_minus_beta * one_minus_beta) *
           (1.0 - config.gamma * one_minus_beta);
  out.xi0_policy = Xi0Policy::MatchUM;
  out.xi0_beta = config.beta;
  return out;
}

struct GAConfig {
  double step_size = 0.0;
};

struct GAState {
  Vector theta;

  GAState() = default;
  explicit GAState(Vector theta0) : theta(std::move(theta0)) {}
};

inline GAState ga_step(const GAState& state, double step_size,
                       const Vector& error) {
  detail::check_error(state.theta, error, "ga_step");
  return GAState(state.theta + step_size * error);
}

/// Resets lambda_i to zero wherever g_i(x) < 0 strictly. mu is untouched.
inline DualVector apply_dual_restarts(const DualVector& duals,
                                      const Vector& ineq_violation) {
  if (duals.lambda.size() != ineq_violation.size()) {
    throw ConfigError("apply_dual_restarts: g has length " +
                      std::to_string(ineq_violation.size()) + ", lambda has " +
                      std::to_string(duals.lambda.size()));
  }
  DualVector out = duals;
  for (Eigen::Index i = 0; i < out.lambda.size(); ++i) {
    if (ineq_violation[i] < 0.0) out.lambda[i] = 0.0;
  }
  return out;
}

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vector theta;
  Vector m;
  Vector v;
  long step_count = 0;

  AdamState() = default;
  explicit AdamState(Vector theta0)
      : theta(std::move(theta0)),
        m(Vector::Zero(theta.size())),
        v(Vector::Zero(theta.size())) {}
};

/// Bias-corrected Adam step taken in the ascent direction e_t.
inline AdamState adam_dual_step(const AdamState& state,
                                const AdamConfig& config,
                                const Vector& error) {
  detail::check_error(state.theta, error, "adam_dual_step");
  AdamState next = state;
  ++next.step_count;
  next.m = config.beta1 * state.m + (1.0 - config.beta1) * error;
  next.v = config.beta2 * state.v +
           (1.0 - config.beta2) * error.cwiseProduct(error);
  const double t = static_cast<double>(next.step_count);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const Vector m_hat = next.m / c1;
  const Vector v_hat = next.v / c2;
  next.theta = state.theta +
               config.step_size *
                   m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + config.eps)
                                           .matrix());
  return next;
}

/// Tagged dual optimizer configuration, as chosen in a run config.
using DualOptimizerConfig =
    std::variant<NuPIConfig, GAConfig, UMConfig, AdamConfig>;

inline std::string dual_optimizer_name(const DualOptimizerConfig& config) {
  struct {
    std::string operator()(const NuPIConfig&) const { return "nupi"; }
    std::string operator()(const GAConfig&) const { return "ga"; }
    std::string operator()(const UMConfig&) const { return "um"; }
    std::string operator()(const AdamConfig&) const { return "adam"; }
  } visitor;
  return std::visit(visitor, config);
}

/**
 * Runtime-selected dual optimizer used by the min-max drivers. Holds the
 * config together with the matching state; step() returns the unprojected
 * candidate and set_theta() stores whatever the driver decides (projected,
 * restarted) so the next step continues from it.
 */
class DualOptimizer {
 public:
  DualOptimizer(DualOptimizerConfig config, const Vector& theta0)
      : config_(std::move(config)) {
    std::visit(
        [&](const auto& c) {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<C, NuPIConfig>) {
            state_ = NuPIState(theta0);
          } else if constexpr (std::is_same_v<C, GAConfig>) {
            state_ = GAState(theta0);
          } else if constexpr (std::is_same_v<C, UMConfig>) {
            state_ = UMState(theta0);
          } else {
            state_ = AdamState(theta0);
          }
        },
        config_);
  }

  Vector step(const Vector& error) {
    std::visit(
        [&](const auto& c) {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<C, NuPIConfig>) {
            state_ = nupi_step(std::get<NuPIState>(state_), c, error);
          } else if constexpr (std::is_same_v<C, GAConfig>) {
            state_ = ga_step(std::get<GAState>(state_), c.step_size, error);
          } else if constexpr (std::is_same_v<C, UMConfig>) {
            state_ = um_step(std::get<UMState>(state_), c, error);
          } else {
            state_ = adam_dual_step(std::get<AdamState>(state_), c, error);
          }
        },
        config_);
    return theta();
  }

  const Vector& theta() const {
    return std::visit([](const auto& s) -> const Vector& { return s.theta; },
                      state_);
  }

  void set_theta(Vector theta) {
    std::visit([&](auto& s) { s.theta = std::move(theta); }, state_);
  }

  const DualOptimizerConfig& config() const { return config_; }

 private:
  DualOptimizerConfig config_;
  std::variant<NuPIState, GAState, UMState, AdamState> state_;
};

}  // namespace numax
