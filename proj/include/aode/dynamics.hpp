#pragma once

// Masked controlled vector field F(t, x, θ) = σ(W x + b) on the active
// components, its Jacobians, the explicit-Euler flow and its resolvent.
//
// Particles are stored as the columns of a d x N matrix so that one layer
// is a single matrix product for the whole batch.

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "aode/control.hpp"
#include "aode/errors.hpp"

namespace aode {

namespace detail {

// Gather/scatter helper for the active rows of one interval. Builders only
// emit contiguous active sets, the general path serves hand-made schedules.
class ActiveRows {
 public:
  explicit ActiveRows(const IndexSet& idx) : idx_(idx) {
    contiguous_ = true;
    for (std::size_t i = 1; i < idx.size(); ++i)
      if (idx[i] != idx[i - 1] + 1) contiguous_ = false;
    first_ = idx.empty() ? 0 : idx.front();
  }

  Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(idx_.size()); }
  bool contiguous() const noexcept { return contiguous_; }
  Eigen::Index first() const noexcept { return first_; }

  Eigen::MatrixXd rows(const Eigen::MatrixXd& x) const {
    if (contiguous_) return x.middleRows(first_, size());
    Eigen::MatrixXd out(size(), x.cols());
    for (Eigen::Index i = 0; i < size(); ++i) out.row(i) = x.row(idx_[static_cast<std::size_t>(i)]);
    return out;
  }

  Eigen::MatrixXd block(const Eigen::MatrixXd& w) const {
    if (contiguous_) return w.block(first_, first_, size(), size());
    Eigen::MatrixXd out(size(), size());
    for (Eigen::Index i = 0; i < size(); ++i)
      for (Eigen::Index k = 0; k < size(); ++k)
        out(i, k) = w(idx_[static_cast<std::size_t>(i)], idx_[static_cast<std::size_t>(k)]);
    return out;
  }

  Eigen::VectorXd segment(const Eigen::VectorXd& v) const {
    if (contiguous_) return v.segment(first_, size());
    Eigen::VectorXd out(size());
    for (Eigen::Index i = 0; i < size(); ++i) out(i) = v(idx_[static_cast<std::size_t>(i)]);
    return out;
  }

  // x.rows(active) += scale * v
  void add_rows(Eigen::MatrixXd& x, const Eigen::MatrixXd& v, double scale) const {
    if (contiguous_) {
      x.middleRows(first_, size()) += scale * v;
      return;
    }
    for (Eigen::Index i = 0; i < size(); ++i) x.row(idx_[static_cast<std::size_t>(i)]) += scale * v.row(i);
  }

  // w.block(active, active) += m ; v.segment(active) += s
  void add_block(Eigen::MatrixXd& w, const Eigen::MatrixXd& m) const {
    if (contiguous_) {
      w.block(first_, first_, size(), size()) += m;
      return;
    }
    for (Eigen::Index i = 0; i < size(); ++i)
      for (Eigen::Index k = 0; k < size(); ++k)
        w(idx_[static_cast<std::size_t>(i)], idx_[static_cast<std::size_t>(k)]) += m(i, k);
  }
  void add_segment(Eigen::VectorXd& v, const Eigen::VectorXd& s) const {
    if (contiguous_) {
      v.segment(first_, size()) += s;
      return;
    }
    for (Eigen::Index i = 0; i < size(); ++i) v(idx_[static_cast<std::size_t>(i)]) += s(i);
  }

 private:
  const IndexSet& idx_;
  Eigen::Index first_ = 0;
  bool contiguous_ = true;
};

inline void zero_rows(Eigen::MatrixXd& x, const IndexSet& rows) {
  for (int k : rows) x.row(k).setZero();
}

inline Eigen::MatrixXd preactivation(const Network& net, const ControlParams& theta, std::size_t j,
                                     const Eigen::MatrixXd& x, const ActiveRows& act) {
  Eigen::MatrixXd z(act.size(), x.cols());
  if (act.contiguous()) {
    const Eigen::Index f = act.first(), n = act.size();
    z.noalias() = theta.W[j].block(f, f, n, n) * x.middleRows(f, n);
  } else {
    z.noalias() = act.block(theta.W[j]) * act.rows(x);
  }
  z.colwise() += act.segment(theta.b[j]);
  (void)net;
  return z;
}

inline void check_state(const Network& net, const Eigen::MatrixXd& x) {
  if (x.rows() != static_cast<Eigen::Index>(net.dim()))
    throw ShapeError("state has " + std::to_string(x.rows()) + " components, network has " +
                     std::to_string(net.dim()));
}

}  // namespace detail

// States along the grid for a batch of particles (one column each).
// states[j] is X(t_j) as produced by the step that arrived at node j;
// slots listed in the schedule's reset set for node j are zeroed before the
// step leaving node j. preact[j] caches W_j x + b_j on the active rows.
struct Trajectory {
  std::vector<Eigen::MatrixXd> states;
  std::vector<Eigen::MatrixXd> preact;

  std::size_t n_particles() const noexcept { return states.empty() ? 0 : static_cast<std::size_t>(states[0].cols()); }
  std::size_t n_nodes() const noexcept { return states.size(); }
  const Eigen::MatrixXd& final_states() const { return states.back(); }
  Eigen::VectorXd state(std::size_t node, std::size_t particle) const {
    return states.at(node).col(static_cast<Eigen::Index>(particle));
  }
};

// State entering the step at `node`: X[node] with reset slots zeroed.
inline Eigen::MatrixXd step_input(const LayerSchedule& s, std::size_t node, const Eigen::MatrixXd& x) {
  const IndexSet& reset = s.reset_at(node);
  if (reset.empty()) return x;
  Eigen::MatrixXd out = x;
  detail::zero_rows(out, reset);
  return out;
}

// F(t_j, x, θ): σ((W_j x + b_j)_k) on active k, zero elsewhere.
inline Eigen::VectorXd vector_field(const Network& net, const ControlParams& theta, std::size_t node,
                                    const Eigen::VectorXd& x) {
  detail::check_state(net, x);
  const detail::ActiveRows act(net.schedule.active_at(node));
  const Eigen::MatrixXd z = detail::preactivation(net, theta, node, x, act);
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(x.size(), 1);
  act.add_rows(f, z.unaryExpr([&](double u) { return net.activation.value(u); }), 1.0);
  return f.col(0);
}

// ∇_x F(t_j, x, θ): diag(σ'(W x + b)) W on the active block, zero elsewhere.
inline Eigen::MatrixXd jac_x(const Network& net, const ControlParams& theta, std::size_t node,
                             const Eigen::VectorXd& x) {
  detail::check_state(net, x);
  const detail::ActiveRows act(net.schedule.active_at(node));
  const Eigen::MatrixXd z = detail::preactivation(net, theta, node, x, act);
  const Eigen::VectorXd dsig = z.col(0).unaryExpr([&](double u) { return net.activation.derivative(u); });
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(x.size(), x.size());
  act.add_block(jac, dsig.asDiagonal() * act.block(theta.W[node]));
  return jac;
}

// Gradient of a single node's (W, b).
struct NodeGradient {
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
};

// Adjoint action v ↦ ∇_θF(t_j, x, θ)^T v:
// dW_{kl} = σ'(z_k) v_k x_l, db_k = σ'(z_k) v_k for active k, l.
inline NodeGradient jac_theta_adjoint(const Network& net, const ControlParams& theta, std::size_t node,
                                      const Eigen::VectorXd& x, const Eigen::VectorXd& v) {
  detail::check_state(net, x);
  if (v.size() != x.size()) throw ShapeError("co-vector and state differ in dimension");
  const detail::ActiveRows act(net.schedule.active_at(node));
  const Eigen::MatrixXd z = detail::preactivation(net, theta, node, x, act);
  const Eigen::VectorXd q =
      z.col(0).unaryExpr([&](double u) { return net.activation.derivative(u); }).cwiseProduct(act.segment(v));
  NodeGradient g{Eigen::MatrixXd::Zero(x.size(), x.size()), Eigen::VectorXd::Zero(x.size())};
  act.add_block(g.dW, q * act.segment(x).transpose());
  act.add_segment(g.db, q);
  return g;
}

// Explicit Euler: X[j+1] = X̃[j] + dt F(t_j, X̃[j], θ_j), X̃[j] = X[j] with
// the node's reset slots zeroed (identical to X[j] outside decoder entries).
inline Trajectory forward_flow(const Network& net, const ControlParams& theta, const Eigen::MatrixXd& x0) {
  detail::check_state(net, x0);
  theta.check_shape(net);
  Trajectory tr;
  const std::size_t n = net.n_steps();
  tr.states.reserve(n + 1);
  tr.preact.reserve(n);
  tr.states.push_back(x0);
  if (!x0.allFinite()) throw NumericalBlowup(0, "initial state");
  const double dt = net.dt();
  for (std::size_t j = 0; j < n; ++j) {
    Eigen::MatrixXd x = step_input(net.schedule, j, tr.states[j]);
    const detail::ActiveRows act(net.schedule.active_at(j));
    Eigen::MatrixXd z = detail::preactivation(net, theta, j, x, act);
    act.add_rows(x, net.activation.values(z.array()).matrix(), dt);
    if (!x.allFinite()) throw NumericalBlowup(j + 1, "forward flow overflowed");
    tr.preact.push_back(std::move(z));
    tr.states.push_back(std::move(x));
  }
  return tr;
}

inline Trajectory forward_flow(const Network& net, const ControlParams& theta, const Eigen::VectorXd& x0) {
  return forward_flow(net, theta, Eigen::MatrixXd(x0));
}

// Jacobian of the discrete flow from node `from` to node `to` along the
// trajectory of x0: Π_{j=from}^{to-1} (Id + dt ∇_xF(t_j, X̃[j])) D_j, where
// D_j zeroes reset slots. R(τ, τ) = Id.
inline Eigen::MatrixXd resolvent(const Network& net, const ControlParams& theta, const Eigen::VectorXd& x0,
                                 std::size_t from, std::size_t to) {
  if (from > to || to > net.n_steps())
    throw IndexError("resolvent needs 0 <= from <= to <= n_steps");
  const Trajectory tr = forward_flow(net, theta, x0);
  const auto d = static_cast<Eigen::Index>(net.dim());
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(d, d);
  for (std::size_t j = from; j < to; ++j) {
    const Eigen::MatrixXd xin = step_input(net.schedule, j, tr.states[j]);
    Eigen::MatrixXd step = Eigen::MatrixXd::Identity(d, d) + net.dt() * jac_x(net, theta, j, xin.col(0));
    for (int k : net.schedule.reset_at(j)) step.col(k).setZero();
    r = step * r;
    if (!r.allFinite()) throw NumericalBlowup(j + 1, "resolvent overflowed");
  }
  return r;
}

}  // namespace aode
