#pragma once

// Measurements on a trained network: finite-difference gradient check,
// per-node Lipschitz / step-size profile, extreme Hessian eigenvalues,
// entropy profiles, latent sparsity and exact Wasserstein-1.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "aode/adjoint.hpp"
#include "aode/control.hpp"
#include "aode/dynamics.hpp"
#include "aode/errors.hpp"
#include "aode/parallel.hpp"
#include "aode/random.hpp"

namespace aode {

// Fourth-order central difference of discrete_cost along coordinate i of
// `probe`; the coordinate is restored before returning.
inline double finite_diff_partial(const Network& net, ControlParams& probe, const ParticleBatch& batch,
                                  const LossSpec& spec, double lambda, const ParameterIndex& index, std::size_t i,
                                  double h) {
  double& x = index.ref(probe, i);
  const double x0 = x;
  auto f = [&](double offset) {
    x = x0 + offset;
    return discrete_cost(net, probe, batch, spec, lambda).total;
  };
  const double d = (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
  x = x0;
  return d;
}

// Finite-difference gradient over every unmasked coordinate.
inline ControlParams finite_diff_gradient(const Network& net, const ControlParams& theta, const ParticleBatch& batch,
                                          const LossSpec& spec, double lambda, double h = 1e-4) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  const ParameterIndex index(net.schedule);
  ControlParams g = ControlParams::zeros(net);
  ControlParams probe = theta;
  for (std::size_t i = 0; i < index.size(); ++i)
    index.ref(g, i) = finite_diff_partial(net, probe, batch, spec, lambda, index, i, h);
  return g;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor) over unmasked coordinates,
// floor = scale_floor * max_i max(|a_i|, |b_i|). The floor keeps entries that
// are pure cancellation noise in a difference quotient from dominating.
inline double max_relative_error(const ControlParams& a, const ControlParams& b, const LayerSchedule& s,
                                 double scale_floor = 1e-6) {
  const ParameterIndex index(s);
  double scale = 0.0;
  for (std::size_t i = 0; i < index.size(); ++i)
    scale = std::max({scale, std::abs(index.get(a, i)), std::abs(index.get(b, i))});
  const double floor = std::max(scale_floor * scale, std::numeric_limits<double>::min());
  double worst = 0.0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const double x = index.get(a, i);
    const double y = index.get(b, i);
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

inline double largest_singular_value(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  if (m.rows() <= 16) return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
  return Eigen::BDCSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

struct DeltaProfile {
  std::vector<double> lipschitz;
  // 1 / Lip, +inf when Lip = 0.
  std::vector<double> delta;
  // Δ_j < dt.
  std::vector<bool> flagged;

  bool any_flagged() const { return std::find(flagged.begin(), flagged.end(), true) != flagged.end(); }
};

// Lip_j = max_i ‖∇_xF(t_j, X̃^i[j], θ)‖₂ along the batch trajectories.
inline DeltaProfile lipschitz_profile(const Network& net, const ControlParams& theta, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() == 0) throw ShapeError("lipschitz profile needs at least one particle");
  const Trajectory tr = forward_flow(net, theta, inputs);
  const std::size_t n = net.n_steps();
  DeltaProfile out;
  out.lipschitz.assign(n, 0.0);
  parallel_for(n, [&](std::size_t j) {
    const detail::ActiveRows act(net.schedule.active_at(j));
    const Eigen::MatrixXd w = act.block(theta.W[j]);
    const Eigen::MatrixXd& z = tr.preact[j];
    double lip = 0.0;
    if (w.isZero(0.0)) {
      out.lipschitz[j] = 0.0;
      return;
    }
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
      const Eigen::VectorXd ds = z.col(i).unaryExpr([&](double u) { return net.activation.derivative(u); });
      lip = std::max(lip, largest_singular_value(ds.asDiagonal() * w));
    }
    out.lipschitz[j] = lip;
  });
  for (std::size_t j = 0; j < n; ++j) {
    const double lip = out.lipschitz[j];
    out.delta.push_back(lip > 0.0 ? 1.0 / lip : std::numeric_limits<double>::infinity());
    out.flagged.push_back(out.delta.back() < net.dt());
  }
  return out;
}

inline void write_delta_csv(std::ostream& os, const DeltaProfile& p) {
  os << "node,delta,flag\n";
  os.precision(17);
  for (std::size_t j = 0; j < p.delta.size(); ++j) {
    os << j << ',';
    if (std::isinf(p.delta[j])) os << "inf";
    else os << p.delta[j];
    os << ',' << (p.flagged[j] ? 1 : 0) << '\n';
  }
}

struct HessianEigs {
  double min = 0.0;
  double max = 0.0;
};

enum class HessianProbe { dense_fd, power_iteration };

inline constexpr std::size_t kDenseHessianLimit = 2000;

// H v ≈ (∇J(θ + h v) - ∇J(θ - h v)) / (2h) in flattened unmasked coordinates.
class HessianVectorProduct {
 public:
  HessianVectorProduct(const Network& net, const ControlParams& theta, const ParticleBatch& batch, const LossSpec& spec,
                       double lambda, double h)
      : net_(net), theta_(theta), batch_(batch), spec_(spec), lambda_(lambda), h_(h), index_(net.schedule) {
    if (!(h > 0.0)) throw ConfigError("Hessian probe step must be positive");
  }

  std::size_t size() const noexcept { return index_.size(); }

  Eigen::VectorXd operator()(const Eigen::VectorXd& v) const {
    const double scale = v.norm();
    if (scale == 0.0) return Eigen::VectorXd::Zero(v.size());
    // Probe along the unit direction so h is a true step length.
    const Eigen::VectorXd u = v / scale;
    const Eigen::VectorXd base = index_.flatten(theta_);
    ControlParams plus = theta_, minus = theta_;
    index_.unflatten(base + h_ * u, plus);
    index_.unflatten(base - h_ * u, minus);
    const Eigen::VectorXd gp = index_.flatten(control_gradient(net_, plus, batch_, spec_, lambda_));
    const Eigen::VectorXd gm = index_.flatten(control_gradient(net_, minus, batch_, spec_, lambda_));
    return scale * (gp - gm) / (2.0 * h_);
  }

 private:
  const Network& net_;
  const ControlParams& theta_;
  const ParticleBatch& batch_;
  const LossSpec& spec_;
  double lambda_;
  double h_;
  ParameterIndex index_;
};

namespace detail {

// Dominant eigenpair of the symmetric operator x ↦ op(x) + shift x.
// Convergence is measured against `scale` (the spectral radius once known),
// since finite-difference products carry absolute noise.
template <typename Op>
double power_method(const Op& op, std::size_t n, double shift, double tol, std::size_t max_iter, std::uint64_t seed,
                    double scale = 0.0) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = rng::normal(seed, 0x4E55, i);
  v.normalize();
  double mu = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Eigen::VectorXd w = op(v) + shift * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (!std::isfinite(norm)) throw ConvergenceFailure("power iteration produced a non-finite vector");
    if (norm == 0.0) return 0.0;
    const double resid = (w - next * v).norm();
    w /= norm;
    const double ref = std::max({std::abs(next), scale, 1e-300});
    if (it > 0 && std::abs(next - mu) <= tol * ref && resid <= std::sqrt(tol) * ref) return next;
    mu = next;
    v = std::move(w);
  }
  throw ConvergenceFailure("power iteration did not converge in " + std::to_string(max_iter) + " iterations");
}

}  // namespace detail

inline Eigen::MatrixXd dense_hessian(const HessianVectorProduct& hvp) {
  const auto n = static_cast<Eigen::Index>(hvp.size());
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index i = 0; i < n; ++i) h.col(i) = hvp(Eigen::VectorXd::Unit(n, i));
  return 0.5 * (h + h.transpose());
}

// (λ_min, λ_max) of the Hessian of discrete_cost at θ.
inline HessianEigs hessian_extreme_eigs(const Network& net, const ControlParams& theta, const ParticleBatch& batch,
                                        const LossSpec& spec, double lambda, HessianProbe probe, double tol = 1e-10,
                                        double h = 1e-5, std::size_t max_iter = 20000) {
  const HessianVectorProduct hvp(net, theta, batch, spec, lambda, h);
  if (probe == HessianProbe::dense_fd) {
    if (hvp.size() > kDenseHessianLimit)
      throw SizeLimit("dense Hessian limited to " + std::to_string(kDenseHessianLimit) + " parameters, got " +
                      std::to_string(hvp.size()));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_hessian(hvp), Eigen::EigenvaluesOnly);
    return {es.eigenvalues()(0), es.eigenvalues()(es.eigenvalues().size() - 1)};
  }
  // Dominant-magnitude eigenvalue first, then shift so that the opposite
  // end of the spectrum becomes dominant.
  const double mu1 = detail::power_method(hvp, hvp.size(), 0.0, tol, max_iter, 1);
  const double c = std::abs(mu1);
  if (c == 0.0) return {0.0, 0.0};
  const auto neg = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return -hvp(v); };
  const double top = detail::power_method(hvp, hvp.size(), c, tol, max_iter, 2, c) - c;
  const double bottom = -(detail::power_method(neg, hvp.size(), c, tol, max_iter, 3, c) - c);
  return {std::min(bottom, top), std::max(bottom, top)};
}

struct HessianRecord {
  std::size_t iter = 0;
  HessianEigs eigs;
};

inline void write_hessian_csv(std::ostream& os, const std::vector<HessianRecord>& rows) {
  os << "iter,lambda_min,lambda_max\n";
  os.precision(17);
  for (const auto& r : rows) os << r.iter << ',' << r.eigs.min << ',' << r.eigs.max << '\n';
}

// 5th percentile of pairwise distances between the columns of x.
inline double default_epsilon(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.cols();
  if (n < 2) throw ShapeError("need at least two particles");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((x.col(i) - x.col(j)).norm());
  const std::size_t k = static_cast<std::size_t>(0.05 * static_cast<double>(d.size() - 1));
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  return d[k];
}

namespace detail {

// Number of particles within ε of each particle (itself included).
inline std::vector<std::size_t> neighbour_counts(const Eigen::MatrixXd& x, double eps) {
  const Eigen::Index n = x.cols();
  std::vector<std::size_t> count(static_cast<std::size_t>(n), 1);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      if ((x.col(i) - x.col(j)).norm() <= eps) {
        ++count[static_cast<std::size_t>(i)];
        ++count[static_cast<std::size_t>(j)];
      }
  return count;
}

}  // namespace detail

// H = -Σ_e p(e) log p(e) for the empirical law of the neighbour count E.
inline double shannon_entropy(const Eigen::MatrixXd& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("entropy radius must be positive");
  if (x.cols() < 2) throw ShapeError("entropy needs at least two particles");
  std::map<std::size_t, std::size_t> hist;
  for (std::size_t c : detail::neighbour_counts(x, eps)) ++hist[c];
  const double n = static_cast<double>(x.cols());
  double h = 0.0;
  for (const auto& [value, count] : hist) {
    const double p = static_cast<double>(count) / n;
    h -= p * std::log(p);
  }
  return h;
}

inline std::vector<double> shannon_entropy_profile(const std::vector<Eigen::MatrixXd>& states, double eps) {
  std::vector<double> out(states.size());
  parallel_for(states.size(), [&](std::size_t j) { out[j] = shannon_entropy(states[j], eps); });
  return out;
}

// Picks k particles by ranking a seeded hash of their initial coordinates, so
// the choice follows the particles under any reordering of the batch.
inline std::vector<std::size_t> select_centers(const Eigen::MatrixXd& x0, std::size_t k, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x0.cols());
  if (k == 0 || k > n) throw ConfigError("number of centers must lie in [1, N]");
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t h = rng::splitmix64(seed);
    for (Eigen::Index r = 0; r < x0.rows(); ++r) {
      std::uint64_t bits;
      const double v = x0(r, static_cast<Eigen::Index>(i)) + 0.0;  // folds -0 into +0
      std::memcpy(&bits, &v, sizeof bits);
      h = rng::splitmix64(h ^ bits);
    }
    keyed[i] = {h, i};
  }
  auto less = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    const auto ca = x0.col(static_cast<Eigen::Index>(a.second));
    const auto cb = x0.col(static_cast<Eigen::Index>(b.second));
    return std::lexicographical_compare(ca.begin(), ca.end(), cb.begin(), cb.end());
  };
  std::sort(keyed.begin(), keyed.end(), less);
  std::vector<std::size_t> centers(k);
  for (std::size_t i = 0; i < k; ++i) centers[i] = keyed[i].second;
  return centers;
}

// Fraction of particles within ε of one of the centers.
inline double cluster_coverage(const Eigen::MatrixXd& x, const std::vector<std::size_t>& centers, double eps) {
  std::size_t inside = 0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    for (std::size_t c : centers) {
      if ((x.col(i) - x.col(static_cast<Eigen::Index>(c))).norm() <= eps) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(x.cols());
}

// Same centers (chosen on states[0]) at every node.
inline std::vector<double> cluster_entropy_profile(const std::vector<Eigen::MatrixXd>& states, double eps,
                                                   std::size_t k, std::uint64_t seed) {
  if (states.empty()) return {};
  if (!(eps >= 0.0)) throw ConfigError("cluster radius must be non-negative");
  const auto centers = select_centers(states.front(), k, seed);
  std::vector<double> out(states.size());
  parallel_for(states.size(), [&](std::size_t j) { out[j] = cluster_coverage(states[j], centers, eps); });
  return out;
}

inline void write_entropy_csv(std::ostream& os, const std::vector<double>& shannon, const std::vector<double>& cluster) {
  if (shannon.size() != cluster.size()) throw ShapeError("entropy profiles differ in length");
  os << "node,H,E_cluster\n";
  os.precision(17);
  for (std::size_t j = 0; j < shannon.size(); ++j) os << j << ',' << shannon[j] << ',' << cluster[j] << '\n';
}

struct LatentReport {
  std::size_t node = 0;
  IndexSet active;
  IndexSet modal_support;
  double consistency = 0.0;
  std::vector<std::size_t> support_sizes;
  std::map<int, Eigen::VectorXd> class_means;
};

// End of the bottleneck interval, where the latent code is complete.
inline std::size_t bottleneck_node(const LayerSchedule& s) { return s.intervals()[s.bottleneck_interval()].end; }

inline LatentReport latent_sparsity_report(const Network& net, const ControlParams& theta, const Eigen::MatrixXd& inputs,
                                           const std::vector<int>& labels, std::size_t node, double zero_tol) {
  if (node > net.n_steps()) throw IndexError("bottleneck node outside the grid");
  if (labels.size() != static_cast<std::size_t>(inputs.cols())) throw ShapeError("one label per sample required");
  const Trajectory tr = forward_flow(net, theta, inputs);
  LatentReport rep;
  rep.node = node;
  // Active set of the step that produced this node's state.
  rep.active = net.schedule.active_at(node == 0 ? 0 : node - 1);
  const Eigen::MatrixXd& x = tr.states[node];
  std::map<IndexSet, std::size_t> freq;
  std::map<int, std::pair<Eigen::VectorXd, std::size_t>> sums;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    IndexSet support;
    Eigen::VectorXd z(static_cast<Eigen::Index>(rep.active.size()));
    for (std::size_t a = 0; a < rep.active.size(); ++a) {
      const double v = x(rep.active[a], i);
      z(static_cast<Eigen::Index>(a)) = v;
      if (std::abs(v) > zero_tol) support.push_back(rep.active[a]);
    }
    rep.support_sizes.push_back(support.size());
    ++freq[support];
    auto& [sum, count] = sums[labels[static_cast<std::size_t>(i)]];
    if (count == 0) sum = Eigen::VectorXd::Zero(z.size());
    sum += z;
    ++count;
  }
  std::size_t best = 0;
  for (const auto& [support, count] : freq)
    if (count > best) {
      best = count;
      rep.modal_support = support;
    }
  rep.consistency = static_cast<double>(best) / static_cast<double>(x.cols());
  for (auto& [label, sc] : sums) rep.class_means[label] = sc.first / static_cast<double>(sc.second);
  return rep;
}

inline constexpr std::size_t kMaxAssignmentSize = 512;

// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
// paths with potentials). Returns the column assigned to each row.
inline std::vector<std::size_t> solve_assignment(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) throw ShapeError("assignment needs a square cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

// W₁ between uniform empirical measures on the columns of mu and nu.
inline double wasserstein1_exact(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& nu) {
  if (mu.cols() != nu.cols()) throw ShapeError("empirical measures must have the same number of atoms");
  if (mu.rows() != nu.rows()) throw ShapeError("empirical measures live in different dimensions");
  const auto n = static_cast<std::size_t>(mu.cols());
  if (n == 0) throw ShapeError("empty empirical measure");
  if (n > kMaxAssignmentSize)
    throw SizeLimit("exact W1 limited to " + std::to_string(kMaxAssignmentSize) + " atoms, got " + std::to_string(n));
  Eigen::MatrixXd cost(mu.cols(), nu.cols());
  for (Eigen::Index i = 0; i < mu.cols(); ++i)
    for (Eigen::Index j = 0; j < nu.cols(); ++j) cost(i, j) = (mu.col(i) - nu.col(j)).norm();
  const auto match = solve_assignment(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(match[i]));
  return total / static_cast<double>(n);
}

struct W1Record {
  std::string label;
  std::size_t n = 0;
  double value = 0.0;
};

inline void write_w1_csv(std::ostream& os, const std::vector<W1Record>& rows) {
  os << "label,N,value\n";
  os.precision(17);
  for (const auto& r : rows) os << r.label << ',' << r.n << ',' << r.value << '\n';
}

struct DiagnosticsReport {
  std::optional<double> grad_check_max_rel_err;
  std::optional<DeltaProfile> delta_profile;
  std::optional<HessianEigs> hessian_eigs;
  std::vector<double> shannon_profile;
  std::vector<double> cluster_profile;
  std::optional<LatentReport> latent;
  std::vector<W1Record> w1_values;
};

}  // namespace aode
