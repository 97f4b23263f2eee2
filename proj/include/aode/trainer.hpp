#pragma once

// Shooting method with minimizing-movement stabilisation. Each outer step
// solves the proximal problem
//   θ_{k+1} = argmin_θ  J^N(θ) + ‖θ - θ_k‖²_{L²} / (2τ)
// through the fixed point θ = Λ(θ) with
//   Λ(θ) = (θ_k - τ ∇J_ℓ(θ)) / (1 + 2λτ),
// where ∇J_ℓ is the L²-density gradient of the data term (the discrete
// gradient divided by dt). Steps that violate the descent inequality are
// retried with a smaller τ.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "aode/adjoint.hpp"
#include "aode/control.hpp"
#include "aode/errors.hpp"
#include "aode/random.hpp"

namespace aode {

struct InitScheme {
  enum class Kind { zeros, gaussian };
  Kind kind = Kind::zeros;
  double scale = 0.0;
  std::uint64_t seed = 0;

  static InitScheme zeros() { return {}; }
  static InitScheme gaussian(double scale, std::uint64_t seed) { return {Kind::gaussian, scale, seed}; }
};

struct TrainerConfig {
  double lambda = 0.0;
  double tau = 0.1;
  std::size_t n_outer = 100;
  double fp_tol = 1e-8;
  std::size_t fp_max_iter = 10;
  double tau_backoff = 0.5;
  std::size_t max_retries = 30;
  // τ is multiplied by this factor after every accepted step, capped at tau_max.
  double tau_growth = 1.0;
  double tau_max = std::numeric_limits<double>::infinity();
  InitScheme init;
  bool deterministic_reduction = true;
  // L² norm above which a fixed-point iterate counts as diverged.
  double blowup_bound = 1e8;
  double descent_slack = 1e-9;
  // Stop once ‖θ_{k+1} - θ_k‖_{L²} <= fp_tol * τ.
  bool stop_on_stationary = false;

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!(lambda >= 0.0) || !finite(lambda)) throw ConfigError("lambda must be a finite non-negative number");
    if (!(tau > 0.0) || !finite(tau)) throw ConfigError("tau must be positive");
    if (!(fp_tol > 0.0) || !finite(fp_tol)) throw ConfigError("fp_tol must be positive");
    if (fp_max_iter < 1) throw ConfigError("fp_max_iter must be at least 1");
    if (!(tau_backoff > 0.0 && tau_backoff < 1.0)) throw ConfigError("tau_backoff must lie in (0, 1)");
    if (!(tau_growth >= 1.0) || !finite(tau_growth)) throw ConfigError("tau_growth must be >= 1");
    if (!(tau_max > 0.0)) throw ConfigError("tau_max must be positive");
    if (!(blowup_bound > 0.0)) throw ConfigError("blowup_bound must be positive");
    if (!(descent_slack >= 0.0) || !finite(descent_slack)) throw ConfigError("descent_slack must be >= 0");
    if (init.kind == InitScheme::Kind::gaussian && (!(init.scale >= 0.0) || !finite(init.scale)))
      throw ConfigError("gaussian init scale must be non-negative");
  }

  ReductionMode reduction() const { return {deterministic_reduction}; }
};

struct HistoryRow {
  std::size_t iter = 0;
  double cost = 0.0;
  double data_term = 0.0;
  double reg_term = 0.0;
  std::size_t fp_iters = 0;
  double step_norm = 0.0;
  double tau = 0.0;
};

// Row 0 records the initial control; row k the k-th accepted step.
struct TrainingHistory {
  std::vector<HistoryRow> rows;

  void write_csv(std::ostream& os) const {
    os << "iter,cost,data_term,reg_term,fp_iters,step_norm,tau\n";
    os.precision(17);
    for (const HistoryRow& r : rows)
      os << r.iter << ',' << r.cost << ',' << r.data_term << ',' << r.reg_term << ',' << r.fp_iters << ','
         << r.step_norm << ',' << r.tau << '\n';
  }
};

inline ControlParams initial_control(const Network& net, const InitScheme& init) {
  ControlParams theta = ControlParams::zeros(net);
  if (init.kind == InitScheme::Kind::gaussian) {
    const ParameterIndex index(net.schedule);
    for (std::size_t i = 0; i < index.size(); ++i) index.ref(theta, i) = init.scale * rng::normal(init.seed, 0x1417, i);
  }
  return theta;
}

namespace detail {

// Cost with regularisation and the data-term gradient (λ = 0), one pass.
struct Objective {
  CostBreakdown cost;
  ControlParams data_grad;
};

inline Objective objective(const Network& net, const ControlParams& theta, const ParticleBatch& batch,
                           const LossSpec& spec, const TrainerConfig& cfg) {
  CostAndGradient cg = cost_and_gradient(net, theta, batch, spec, 0.0, cfg.reduction());
  Objective o;
  o.cost.data = cg.cost.data;
  o.cost.reg = cfg.lambda * theta.squared_l2(net.dt());
  o.cost.total = o.cost.data + o.cost.reg;
  o.data_grad = std::move(cg.grad);
  return o;
}

inline ControlParams lambda_from_gradient(const Network& net, const ControlParams& theta_prev,
                                          const ControlParams& data_grad, double tau, double lambda) {
  ControlParams out = theta_prev;
  out.axpy(-tau / net.dt(), data_grad);
  out *= 1.0 / (1.0 + 2.0 * lambda * tau);
  out.apply_mask(net.schedule);
  return out;
}

}  // namespace detail

// Λ(θ) = (θ_prev - τ g(θ)) / (1 + 2λτ), g the L²-density gradient of the
// data term at θ.
inline ControlParams lambda_map(const Network& net, const ControlParams& theta, const ControlParams& theta_prev,
                                const ParticleBatch& batch, const LossSpec& spec, const TrainerConfig& cfg) {
  const ControlParams g = control_gradient(net, theta, batch, spec, 0.0, cfg.reduction());
  return detail::lambda_from_gradient(net, theta_prev, g, cfg.tau, cfg.lambda);
}

struct FixedPointResult {
  ControlParams theta;
  std::size_t iterations = 0;
  // ‖θ^{(m+1)} - θ^{(m)}‖_{L²} for every iteration performed.
  std::vector<double> increments;
};

// Iterates θ^{(m+1)} = Λ(θ^{(m)}) from θ^{(0)} = θ_k until the L² increment
// drops to fp_tol or fp_max_iter is reached. `grad_at_start` may supply the
// data gradient at θ_k to save one evaluation.
inline FixedPointResult fixed_point_update(const Network& net, const ControlParams& theta_k,
                                           const ParticleBatch& batch, const LossSpec& spec,
                                           const TrainerConfig& cfg, const ControlParams* grad_at_start = nullptr) {
  cfg.validate();
  FixedPointResult res;
  ControlParams current = theta_k;
  for (std::size_t m = 0; m < cfg.fp_max_iter; ++m) {
    ControlParams g = (m == 0 && grad_at_start != nullptr)
                          ? *grad_at_start
                          : control_gradient(net, current, batch, spec, 0.0, cfg.reduction());
    ControlParams next = detail::lambda_from_gradient(net, theta_k, g, cfg.tau, cfg.lambda);
    const double norm = next.l2_norm(net.dt());
    if (!std::isfinite(norm) || norm > cfg.blowup_bound)
      throw FixedPointDiverged("fixed-point iterate norm " + std::to_string(norm) + " exceeds the blowup bound");
    const double inc = (next - current).l2_norm(net.dt());
    res.increments.push_back(inc);
    current = std::move(next);
    res.iterations = m + 1;
    if (inc <= cfg.fp_tol) break;
  }
  res.theta = std::move(current);
  return res;
}

struct TrainResult {
  ControlParams theta;
  TrainingHistory history;
};

// Called after every accepted step with the iteration number and control.
using StepObserver = std::function<void(std::size_t, const ControlParams&)>;

inline TrainResult train(const Network& net, const ParticleBatch& batch, const LossSpec& spec,
                         const TrainerConfig& cfg, ControlParams theta, const StepObserver& observer = {}) {
  cfg.validate();
  batch.check(net);
  theta.check_shape(net);
  theta.apply_mask(net.schedule);

  TrainResult out;
  detail::Objective cur = detail::objective(net, theta, batch, spec, cfg);
  out.history.rows.push_back({0, cur.cost.total, cur.cost.data, cur.cost.reg, 0, 0.0, cfg.tau});
  if (observer) observer(0, theta);

  double tau = cfg.tau;
  for (std::size_t k = 1; k <= cfg.n_outer; ++k) {
    std::size_t retries = 0;
    for (;;) {
      TrainerConfig step_cfg = cfg;
      step_cfg.tau = tau;
      bool accepted = false;
      FixedPointResult fp;
      detail::Objective next;
      double step_norm = 0.0;
      try {
        fp = fixed_point_update(net, theta, batch, spec, step_cfg, &cur.data_grad);
        next = detail::objective(net, fp.theta, batch, spec, cfg);
        const double step2 = (fp.theta - theta).squared_l2(net.dt());
        step_norm = std::sqrt(step2);
        // The slack absorbs rounding in the inequality; the cost itself may not rise.
        accepted = next.cost.total + step2 / (2.0 * tau) <= cur.cost.total + cfg.descent_slack &&
                   next.cost.total <= cur.cost.total;
      } catch (const NumericalError&) {
        accepted = false;
      }
      if (accepted) {
        theta = std::move(fp.theta);
        cur = std::move(next);
        out.history.rows.push_back({k, cur.cost.total, cur.cost.data, cur.cost.reg, fp.iterations, step_norm, tau});
        if (observer) observer(k, theta);
        const bool stationary = cfg.stop_on_stationary && step_norm <= cfg.fp_tol * tau;
        tau = std::min(tau * cfg.tau_growth, cfg.tau_max);
        if (stationary) {
          out.theta = std::move(theta);
          return out;
        }
        break;
      }
      tau *= cfg.tau_backoff;
      if (++retries > cfg.max_retries)
        throw FixedPointDiverged("no descent step found after " + std::to_string(cfg.max_retries) +
                                 " step-size reductions at iteration " + std::to_string(k));
    }
  }
  out.theta = std::move(theta);
  return out;
}

inline TrainResult train(const Network& net, const ParticleBatch& batch, const LossSpec& spec,
                         const TrainerConfig& cfg, const StepObserver& observer = {}) {
  return train(net, batch, spec, cfg, initial_control(net, cfg.init), observer);
}

struct Metrics {
  double data_term = 0.0;
  double mse = 0.0;
  // Fraction of particles whose final state is nearest (on the output set)
  // to their own target among the distinct targets; NaN unless requested.
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd sample_loss;
};

inline Metrics evaluate(const Network& net, const ControlParams& theta, const ParticleBatch& batch,
                        const LossSpec& spec, bool classification) {
  batch.check(net);
  const Trajectory tr = forward_flow(net, theta, batch.inputs);
  Metrics m;
  m.sample_loss = sample_losses(tr.final_states(), batch.targets, spec);
  m.mse = m.sample_loss.mean();
  m.data_term = spec.weight * m.mse;
  if (!classification) return m;

  std::vector<Eigen::VectorXd> classes;
  std::vector<std::size_t> label(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::VectorXd y = batch.targets.col(static_cast<Eigen::Index>(i));
    std::size_t c = 0;
    while (c < classes.size() && classes[c] != y) ++c;
    if (c == classes.size()) classes.push_back(y);
    label[i] = c;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::VectorXd x = tr.final_states().col(static_cast<Eigen::Index>(i));
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const double dist = loss(x, classes[c], spec);
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    if (best == label[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(batch.size());
  return m;
}

}  // namespace aode
