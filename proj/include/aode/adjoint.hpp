#pragma once

// Terminal cost, backward co-state recursion and the exact gradient of the
// discrete finite-particle objective
//   J^N(θ) = (1/N) Σ_i ℓ(X^i(T), Y^i) + λ dt Σ_j (‖W_j‖_F² + |b_j|²).
// Co-states follow p_T = +∇ℓ and are the exact adjoint of the Euler
// recursion, so gradients agree with finite differences to rounding.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "aode/control.hpp"
#include "aode/dynamics.hpp"
#include "aode/errors.hpp"
#include "aode/parallel.hpp"

namespace aode {

// Squared error on the output components: ℓ(x, y) = Σ_{k∈out} (x_k - y_k)².
struct LossSpec {
  IndexSet output_set;
  // Multiplies the data term; zero leaves the pure Tikhonov objective.
  double weight = 1.0;

  static LossSpec squared_active(const LayerSchedule& s) { return {s.output_set(), 1.0}; }
};

// Input/target pairs embedded in the state space, one particle per column.
struct ParticleBatch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;

  std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.cols()); }

  void check(const Network& net) const {
    const auto d = static_cast<Eigen::Index>(net.dim());
    if (inputs.rows() != d || targets.rows() != d)
      throw ShapeError("batch rows must equal the state dimension " + std::to_string(d));
    if (inputs.cols() != targets.cols()) throw ShapeError("inputs and targets differ in sample count");
    if (inputs.cols() == 0) throw ShapeError("empty batch");
  }
};

inline double loss(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const LossSpec& spec) {
  if (x.size() != y.size()) throw ShapeError("state and target differ in dimension");
  double s = 0.0;
  for (int k : spec.output_set) {
    if (k >= x.size()) throw ShapeError("output index beyond state dimension");
    const double r = x(k) - y(k);
    s += r * r;
  }
  return s;
}

// ∇_x ℓ(x, y): 2 (x_k - y_k) on the output set, zero elsewhere.
inline Eigen::VectorXd terminal_costate(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const LossSpec& spec) {
  if (x.size() != y.size()) throw ShapeError("state and target differ in dimension");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(x.size());
  for (int k : spec.output_set) {
    if (k >= x.size()) throw ShapeError("output index beyond state dimension");
    p(k) = 2.0 * (x(k) - y(k));
  }
  return p;
}

// Per-sample losses for a batch of final states.
inline Eigen::VectorXd sample_losses(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& y, const LossSpec& spec) {
  if (xt.rows() != y.rows() || xt.cols() != y.cols()) throw ShapeError("final states and targets differ in shape");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(xt.cols());
  for (int k : spec.output_set) out += (xt.row(k) - y.row(k)).cwiseAbs2().transpose();
  return out;
}

// Co-states P[j], j = 0..n_steps, one column per particle (the transpose of
// the row-vector convention).
struct CostateTrajectory {
  std::vector<Eigen::MatrixXd> costates;
  Eigen::VectorXd costate(std::size_t node, std::size_t particle) const {
    return costates.at(node).col(static_cast<Eigen::Index>(particle));
  }
};

namespace detail {

inline Eigen::MatrixXd terminal_costates(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& y, const LossSpec& spec) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(xt.rows(), xt.cols());
  for (int k : spec.output_set) p.row(k) = 2.0 * (xt.row(k) - y.row(k));
  return p;
}

// One backward step P[j] = D_j (Id + dt ∇_xF_j)^T P[j+1]; if `grad` is
// given, also accumulates Σ_i ∇_θF_j^T P^i[j+1] into node j.
inline void backward_step(const Network& net, const ControlParams& theta, const Trajectory& tr, std::size_t j,
                          Eigen::MatrixXd& p, ControlParams* grad) {
  const detail::ActiveRows act(net.schedule.active_at(j));
  const IndexSet& reset = net.schedule.reset_at(j);
  const Eigen::MatrixXd& z = tr.preact[j];
  Eigen::MatrixXd q = (net.activation.derivatives(z.array()) * act.rows(p).array()).matrix();
  if (act.contiguous()) {
    const Eigen::Index f = act.first(), n = act.size();
    if (grad != nullptr) {
      if (reset.empty()) {
        grad->W[j].block(f, f, n, n).noalias() += q * tr.states[j].middleRows(f, n).transpose();
      } else {
        const Eigen::MatrixXd xin = step_input(net.schedule, j, tr.states[j]).middleRows(f, n);
        grad->W[j].block(f, f, n, n).noalias() += q * xin.transpose();
      }
      grad->b[j].segment(f, n) += q.rowwise().sum();
    }
    p.middleRows(f, n).noalias() += net.dt() * (theta.W[j].block(f, f, n, n).transpose() * q);
  } else {
    if (grad != nullptr) {
      const Eigen::MatrixXd xin = act.rows(step_input(net.schedule, j, tr.states[j]));
      act.add_block(grad->W[j], q * xin.transpose());
      act.add_segment(grad->b[j], q.rowwise().sum());
    }
    act.add_rows(p, act.block(theta.W[j]).transpose() * q, net.dt());
  }
  zero_rows(p, reset);
}

struct ChunkResult {
  double loss_sum = 0.0;
  ControlParams grad_sum;  // Σ_i Σ_j ∇_θF_j^T P^i[j+1], without the dt factor
};

inline ChunkResult evaluate_chunk(const Network& net, const ControlParams& theta, const Eigen::MatrixXd& x0,
                                  const Eigen::MatrixXd& y, const LossSpec& spec, bool want_grad) {
  ChunkResult out;
  const Trajectory tr = forward_flow(net, theta, x0);
  out.loss_sum = sample_losses(tr.final_states(), y, spec).sum();
  if (!want_grad) return out;
  out.grad_sum = ControlParams::zeros(net);
  Eigen::MatrixXd p = terminal_costates(tr.final_states(), y, spec);
  for (std::size_t j = net.n_steps(); j-- > 0;) backward_step(net, theta, tr, j, p, &out.grad_sum);
  return out;
}

}  // namespace detail

inline CostateTrajectory backward_costate(const Network& net, const ControlParams& theta, const Trajectory& tr,
                                          const Eigen::MatrixXd& targets, const LossSpec& spec) {
  if (tr.states.size() != net.n_steps() + 1 || tr.preact.size() != net.n_steps())
    throw GridMismatch("trajectory and control disagree on the number of steps");
  theta.check_shape(net);
  CostateTrajectory out;
  out.costates.resize(net.n_steps() + 1);
  Eigen::MatrixXd p = detail::terminal_costates(tr.final_states(), targets, spec);
  out.costates[net.n_steps()] = p;
  for (std::size_t j = net.n_steps(); j-- > 0;) {
    detail::backward_step(net, theta, tr, j, p, nullptr);
    out.costates[j] = p;
  }
  return out;
}

struct CostBreakdown {
  double total = 0.0;
  double data = 0.0;
  double reg = 0.0;
};

struct CostAndGradient {
  CostBreakdown cost;
  ControlParams grad;
};

// How per-particle contributions are combined. In deterministic mode the
// chunking is fixed, so results do not depend on the thread count.
struct ReductionMode {
  bool deterministic = true;
};

namespace detail {

inline CostAndGradient evaluate(const Network& net, const ControlParams& theta, const ParticleBatch& batch,
                                const LossSpec& spec, double lambda, bool want_grad, ReductionMode mode) {
  batch.check(net);
  theta.check_shape(net);
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  const std::size_t n = batch.size();
  std::size_t chunk = kParticleChunk;
  if (!mode.deterministic) chunk = std::max<std::size_t>(1, (n + max_threads() - 1) / max_threads());
  const auto chunks = particle_chunks(n, chunk);
  const std::size_t wave = std::max<std::size_t>(1, max_threads());

  double loss_sum = 0.0;
  ControlParams grad_sum;
  if (want_grad) grad_sum = ControlParams::zeros(net);
  // Chunks are evaluated in waves and folded strictly in chunk order.
  for (std::size_t first = 0; first < chunks.size(); first += wave) {
    const std::size_t count = std::min(wave, chunks.size() - first);
    std::vector<ChunkResult> results(count);
    parallel_for(count, [&](std::size_t i) {
      const ChunkRange& c = chunks[first + i];
      const auto b = static_cast<Eigen::Index>(c.begin);
      const auto s = static_cast<Eigen::Index>(c.size);
      results[i] = evaluate_chunk(net, theta, batch.inputs.middleCols(b, s), batch.targets.middleCols(b, s), spec,
                                  want_grad);
    });
    for (ChunkResult& r : results) {
      loss_sum += r.loss_sum;
      if (want_grad) grad_sum += r.grad_sum;
    }
  }

  CostAndGradient out;
  const double inv_n = 1.0 / static_cast<double>(n);
  out.cost.data = spec.weight * loss_sum * inv_n;
  out.cost.reg = lambda * theta.squared_l2(net.dt());
  out.cost.total = out.cost.data + out.cost.reg;
  if (!std::isfinite(out.cost.total)) throw NumericalBlowup(net.n_steps(), "cost is not finite");
  if (want_grad) {
    grad_sum *= spec.weight * net.dt() * inv_n;
    grad_sum.axpy(2.0 * lambda * net.dt(), theta);
    grad_sum.apply_mask(net.schedule);
    out.grad = std::move(grad_sum);
  }
  return out;
}

}  // namespace detail

inline CostBreakdown discrete_cost(const Network& net, const ControlParams& theta, const ParticleBatch& batch,
                                   const LossSpec& spec, double lambda, ReductionMode mode = {}) {
  return detail::evaluate(net, theta, batch, spec, lambda, false, mode).cost;
}

inline CostAndGradient cost_and_gradient(const Network& net, const ControlParams& theta, const ParticleBatch& batch,
                                         const LossSpec& spec, double lambda, ReductionMode mode = {}) {
  return detail::evaluate(net, theta, batch, spec, lambda, true, mode);
}

// Exact gradient of discrete_cost (includes the dt factor of each node).
inline ControlParams control_gradient(const Network& net, const ControlParams& theta, const ParticleBatch& batch,
                                      const LossSpec& spec, double lambda, ReductionMode mode = {}) {
  return detail::evaluate(net, theta, batch, spec, lambda, true, mode).grad;
}

}  // namespace aode
