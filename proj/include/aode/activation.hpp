#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <string_view>

#include "aode/errors.hpp"

namespace aode {

// Componentwise C¹ activation. The smooth variants use the sharpness `s`:
//   smooth_leaky_relu(x) = alpha * x + log(1 + exp(s * x)) / s
// and smooth_relu is the alpha = 0 case.
struct Activation {
  enum class Kind { tanh, smooth_relu, smooth_leaky_relu };

  Kind kind = Kind::tanh;
  double alpha = 0.0;
  double sharpness = 10.0;

  static Activation tanh() { return {Kind::tanh, 0.0, 10.0}; }
  static Activation smooth_relu(double s = 10.0) { return checked({Kind::smooth_relu, 0.0, s}); }
  static Activation smooth_leaky_relu(double alpha, double s = 10.0) {
    return checked({Kind::smooth_leaky_relu, alpha, s});
  }

  double value(double x) const noexcept {
    switch (kind) {
      case Kind::tanh: return std::tanh(x);
      case Kind::smooth_relu: return softplus(x);
      case Kind::smooth_leaky_relu: return alpha * x + softplus(x);
    }
    return 0.0;
  }

  double derivative(double x) const noexcept {
    switch (kind) {
      case Kind::tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      }
      case Kind::smooth_relu: return logistic(sharpness * x);
      case Kind::smooth_leaky_relu: return alpha + logistic(sharpness * x);
    }
    return 0.0;
  }

  // Elementwise value / derivative on a whole block, vectorised.
  Eigen::ArrayXXd values(const Eigen::ArrayXXd& z) const {
    switch (kind) {
      case Kind::tanh: return z.tanh();
      case Kind::smooth_relu: return softplus(z);
      case Kind::smooth_leaky_relu: return alpha * z + softplus(z);
    }
    return z;
  }

  Eigen::ArrayXXd derivatives(const Eigen::ArrayXXd& z) const {
    switch (kind) {
      case Kind::tanh: return 1.0 - z.tanh().square();
      case Kind::smooth_relu: return logistic(sharpness * z);
      case Kind::smooth_leaky_relu: return alpha + logistic(sharpness * z);
    }
    return z;
  }

  // Global Lipschitz constant of the activation itself.
  double lipschitz() const noexcept { return kind == Kind::tanh ? 1.0 : alpha + 1.0; }

  friend bool operator==(const Activation&, const Activation&) = default;

 private:
  static Activation checked(Activation a) {
    if (!(a.sharpness > 0.0) || !std::isfinite(a.sharpness)) throw ConfigError("activation sharpness must be positive");
    if (!(a.alpha >= 0.0 && a.alpha <= 1.0)) throw ConfigError("leaky slope alpha must lie in [0, 1]");
    return a;
  }

  // log(1 + e^{s x}) / s without overflow for large |s x|.
  double softplus(double x) const noexcept {
    const double sx = sharpness * x;
    return (std::max(sx, 0.0) + std::log1p(std::exp(-std::abs(sx)))) / sharpness;
  }

  Eigen::ArrayXXd softplus(const Eigen::ArrayXXd& x) const {
    const Eigen::ArrayXXd sx = sharpness * x;
    // log(1 + e) with e <= 1 vectorises where log1p does not; the absolute
    // error stays at rounding level.
    return (sx.max(0.0) + (1.0 + (-sx.abs()).exp()).log()) / sharpness;
  }

  // exp(-u) may overflow to inf for very negative u, giving exactly 0.
  static Eigen::ArrayXXd logistic(const Eigen::ArrayXXd& u) { return 1.0 / (1.0 + (-u).exp()); }

  static double logistic(double u) noexcept {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
  }
};

inline std::string_view to_string(Activation::Kind k) {
  switch (k) {
    case Activation::Kind::tanh: return "tanh";
    case Activation::Kind::smooth_relu: return "smooth_relu";
    case Activation::Kind::smooth_leaky_relu: return "smooth_leaky_relu";
  }
  return "tanh";
}

inline Activation make_activation(std::string_view kind, double alpha, double sharpness) {
  if (kind == "tanh") return Activation::tanh();
  if (kind == "smooth_relu") return Activation::smooth_relu(sharpness);
  if (kind == "smooth_leaky_relu") return Activation::smooth_leaky_relu(alpha, sharpness);
  throw ConfigError("unknown activation '" + std::string(kind) + "'");
}

}  // namespace aode
