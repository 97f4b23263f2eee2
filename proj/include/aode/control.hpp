#pragma once

// The control θ = (W_j, b_j), one dense layer per grid node, with support
// restricted to the active block of the node's interval.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "aode/activation.hpp"
#include "aode/architecture.hpp"
#include "aode/errors.hpp"

namespace aode {

// Everything that fixes the network apart from its weights.
struct Network {
  TimeGrid grid;
  LayerSchedule schedule;
  Activation activation;

  Network(TimeGrid g, LayerSchedule s, Activation a)
      : grid(g), schedule(std::move(s)), activation(a) {
    if (grid.n_steps() != schedule.n_steps())
      throw GridMismatch("grid has " + std::to_string(grid.n_steps()) + " steps, schedule has " +
                         std::to_string(schedule.n_steps()));
  }

  std::size_t dim() const noexcept { return schedule.dim(); }
  std::size_t n_steps() const noexcept { return grid.n_steps(); }
  double dt() const noexcept { return grid.dt(); }
};

class ControlParams {
 public:
  ControlParams() = default;

  static ControlParams zeros(std::size_t n_nodes, std::size_t dim) {
    ControlParams c;
    c.W.assign(n_nodes, Eigen::MatrixXd::Zero(dim, dim));
    c.b.assign(n_nodes, Eigen::VectorXd::Zero(dim));
    return c;
  }
  static ControlParams zeros(const Network& net) { return zeros(net.n_steps(), net.dim()); }

  std::size_t n_nodes() const noexcept { return W.size(); }
  std::size_t dim() const noexcept { return W.empty() ? 0 : static_cast<std::size_t>(W.front().rows()); }

  void check_shape(const Network& net) const {
    if (W.size() != net.n_steps() || b.size() != net.n_steps())
      throw GridMismatch("control has " + std::to_string(W.size()) + " nodes, grid has " +
                         std::to_string(net.n_steps()));
    for (std::size_t j = 0; j < W.size(); ++j) {
      const auto d = static_cast<Eigen::Index>(net.dim());
      if (W[j].rows() != d || W[j].cols() != d || b[j].size() != d)
        throw ShapeError("control node " + std::to_string(j) + " has the wrong dimension");
    }
  }

  // Zeroes every entry outside the active x active block (W) and the
  // active set (b) of each node.
  ControlParams& apply_mask(const LayerSchedule& s) {
    for (std::size_t j = 0; j < W.size(); ++j) {
      const IndexSet& inactive = s.interval_at(j).inactive;
      for (int k : inactive) {
        W[j].row(k).setZero();
        W[j].col(k).setZero();
        b[j](k) = 0.0;
      }
    }
    return *this;
  }

  bool is_masked(const LayerSchedule& s) const {
    for (std::size_t j = 0; j < W.size(); ++j) {
      for (int k : s.interval_at(j).inactive) {
        if (b[j](k) != 0.0 || !W[j].row(k).isZero(0.0) || !W[j].col(k).isZero(0.0)) return false;
      }
    }
    return true;
  }

  // Σ_j ‖W_j‖_F² + |b_j|² (no dt weight).
  double squared_sum() const {
    double s = 0.0;
    for (std::size_t j = 0; j < W.size(); ++j) s += W[j].squaredNorm() + b[j].squaredNorm();
    return s;
  }
  // L²([0,T]) norm of the piecewise-constant control: dt · Σ_j |θ_j|².
  double squared_l2(double dt) const { return dt * squared_sum(); }
  double l2_norm(double dt) const { return std::sqrt(squared_l2(dt)); }

  // L¹ norm in time of the Frobenius norm per node: dt · Σ_j |θ_j|.
  double l1_time_norm(double dt) const {
    double s = 0.0;
    for (std::size_t j = 0; j < W.size(); ++j) s += std::sqrt(W[j].squaredNorm() + b[j].squaredNorm());
    return dt * s;
  }

  double max_abs() const {
    double m = 0.0;
    for (std::size_t j = 0; j < W.size(); ++j) m = std::max({m, W[j].cwiseAbs().maxCoeff(), b[j].cwiseAbs().maxCoeff()});
    return m;
  }

  bool all_finite() const {
    for (std::size_t j = 0; j < W.size(); ++j)
      if (!W[j].allFinite() || !b[j].allFinite()) return false;
    return true;
  }

  ControlParams& operator+=(const ControlParams& o) {
    for (std::size_t j = 0; j < W.size(); ++j) {
      W[j] += o.W[j];
      b[j] += o.b[j];
    }
    return *this;
  }
  ControlParams& operator-=(const ControlParams& o) {
    for (std::size_t j = 0; j < W.size(); ++j) {
      W[j] -= o.W[j];
      b[j] -= o.b[j];
    }
    return *this;
  }
  ControlParams& operator*=(double a) {
    for (std::size_t j = 0; j < W.size(); ++j) {
      W[j] *= a;
      b[j] *= a;
    }
    return *this;
  }
  // this += a * o
  ControlParams& axpy(double a, const ControlParams& o) {
    for (std::size_t j = 0; j < W.size(); ++j) {
      W[j] += a * o.W[j];
      b[j] += a * o.b[j];
    }
    return *this;
  }

  friend ControlParams operator+(ControlParams a, const ControlParams& b) { return a += b; }
  friend ControlParams operator-(ControlParams a, const ControlParams& b) { return a -= b; }
  friend ControlParams operator*(double s, ControlParams a) { return a *= s; }

  // Bitwise equality of every entry.
  friend bool operator==(const ControlParams& a, const ControlParams& o) {
    if (a.W.size() != o.W.size()) return false;
    for (std::size_t j = 0; j < a.W.size(); ++j)
      if (a.W[j] != o.W[j] || a.b[j] != o.b[j]) return false;
    return true;
  }

  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> b;
};

// Enumerates the unmasked coordinates of a control in a fixed order: node
// by node, W's active block row-major, then b's active entries.
class ParameterIndex {
 public:
  struct Coord {
    std::size_t node;
    int row;
    int col;  // -1 for a bias entry
  };

  explicit ParameterIndex(const LayerSchedule& s) {
    for (std::size_t j = 0; j < s.n_steps(); ++j) {
      const IndexSet& a = s.active_at(j);
      for (int k : a)
        for (int l : a) coords_.push_back({j, k, l});
      for (int k : a) coords_.push_back({j, k, -1});
    }
  }

  std::size_t size() const noexcept { return coords_.size(); }
  const Coord& operator[](std::size_t i) const { return coords_[i]; }

  double& ref(ControlParams& c, std::size_t i) const {
    const Coord& x = coords_[i];
    return x.col < 0 ? c.b[x.node](x.row) : c.W[x.node](x.row, x.col);
  }
  double get(const ControlParams& c, std::size_t i) const {
    const Coord& x = coords_[i];
    return x.col < 0 ? c.b[x.node](x.row) : c.W[x.node](x.row, x.col);
  }

  Eigen::VectorXd flatten(const ControlParams& c) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i) v(static_cast<Eigen::Index>(i)) = get(c, i);
    return v;
  }

  // Writes v into the unmasked coordinates of `into`; masked entries untouched.
  void unflatten(const Eigen::VectorXd& v, ControlParams& into) const {
    if (static_cast<std::size_t>(v.size()) != size()) throw ShapeError("parameter vector has the wrong length");
    for (std::size_t i = 0; i < size(); ++i) ref(into, i) = v(static_cast<Eigen::Index>(i));
  }

 private:
  std::vector<Coord> coords_;
};

}  // namespace aode
