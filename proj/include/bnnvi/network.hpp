#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>

#include "bnnvi/errors.hpp"
#include "bnnvi/linalg.hpp"

namespace bnnvi {

inline constexpr double kHalfLog2Pi = 0.9189385332046727;  // ln(2*pi)/2

// Single hidden layer, scalar output: f(x) = v . tanh(W x + b_w) + b_v.
struct NetworkShape {
  std::size_t input_dim = 1;
  std::size_t hidden_units = 50;

  // W, b_w, v, b_v (the observation-noise parameter is counted separately).
  std::size_t weight_count() const {
    return hidden_units * input_dim + hidden_units + hidden_units + 1;
  }
};

// One setting of the network weights, used as the mean of a posterior, a
// point estimate, or a sampled parameter vector.
struct NetParams {
  Matrix w;     // hidden x input
  Vector b_w;   // hidden
  Vector v;     // hidden (output weights)
  double b_v = 0.0;

  NetParams() = default;
  explicit NetParams(const NetworkShape& s, double fill = 0.0)
      : w(s.hidden_units, s.input_dim, fill),
        b_w(s.hidden_units, fill),
        v(s.hidden_units, fill),
        b_v(fill) {}

  NetworkShape shape() const { return {w.cols(), w.rows()}; }

  void check_shape(const NetworkShape& s) const {
    if (w.rows() != s.hidden_units || w.cols() != s.input_dim ||
        b_w.size() != s.hidden_units || v.size() != s.hidden_units) {
      throw DimensionMismatch("NetParams does not match NetworkShape");
    }
  }
};

struct ParamPoint {
  NetParams net;
  double log_noise_std = 0.0;

  ParamPoint() = default;
  explicit ParamPoint(const NetworkShape& s, double fill = 0.0) : net(s, fill) {}

  double noise_std() const { return std::exp(log_noise_std); }
};

inline Vector hidden_activations(const NetParams& p, const Vector& x) {
  Vector a = matvec(p.w, x);
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = std::tanh(a[j] + p.b_w[j]);
  return a;
}

inline double forward(const NetParams& p, const Vector& x) {
  const Vector h = hidden_activations(p, x);
  return dot(p.v, h) + p.b_v;
}

inline double forward(const ParamPoint& p, const Vector& x) {
  return forward(p.net, x);
}

inline double gauss_log_lik(double y, double mean, double noise_std) {
  if (!(noise_std > 0.0)) {
    throw NonPositiveNoise("gauss_log_lik: noise_std must be positive");
  }
  const double r = (y - mean) / noise_std;
  return -kHalfLog2Pi - std::log(noise_std) - 0.5 * r * r;
}

// Gradients of the point objective: sum_i -log p(y_i | x_i, theta), plus the
// Gaussian-prior penalty sum theta^2 / (2 s^2) when map_prior_std is set.
struct PointGrads {
  NetParams net;
  double log_noise_std = 0.0;
  double objective = 0.0;

  explicit PointGrads(const NetworkShape& s) : net(s, 0.0) {}
};

inline PointGrads point_gradients(const ParamPoint& p, const Matrix& x,
                                  const Vector& y,
                                  std::optional<double> map_prior_std = {}) {
  const NetworkShape shape = p.net.shape();
  if (x.cols() != shape.input_dim || x.rows() != y.size()) {
    throw DimensionMismatch("point_gradients: batch shape mismatch");
  }
  if (x.rows() == 0) throw EmptyInput("point_gradients: empty batch");

  PointGrads g(shape);
  const double inv_var = std::exp(-2.0 * p.log_noise_std);
  const std::size_t h = shape.hidden_units;
  const std::size_t d = shape.input_dim;

  Vector hid(h);
  for (std::size_t n = 0; n < x.rows(); ++n) {
    const double* xn = x.row(n);
    double f = p.net.b_v;
    for (std::size_t j = 0; j < h; ++j) {
      const double* wj = p.net.w.row(j);
      double a = p.net.b_w[j];
      for (std::size_t i = 0; i < d; ++i) a += wj[i] * xn[i];
      hid[j] = std::tanh(a);
      f += p.net.v[j] * hid[j];
    }
    const double r = f - y[n];
    g.objective += kHalfLog2Pi + p.log_noise_std + 0.5 * r * r * inv_var;
    const double gf = r * inv_var;
    g.log_noise_std += 1.0 - r * r * inv_var;
    g.net.b_v += gf;
    for (std::size_t j = 0; j < h; ++j) {
      g.net.v[j] += gf * hid[j];
      const double ga = gf * p.net.v[j] * (1.0 - hid[j] * hid[j]);
      g.net.b_w[j] += ga;
      double* gwj = g.net.w.row(j);
      for (std::size_t i = 0; i < d; ++i) gwj[i] += ga * xn[i];
    }
  }

  if (map_prior_std) {
    const double inv_s2 = 1.0 / (*map_prior_std * *map_prior_std);
    auto penalize = [&](double theta, double& grad) {
      g.objective += 0.5 * theta * theta * inv_s2;
      grad += theta * inv_s2;
    };
    for (std::size_t k = 0; k < p.net.w.size(); ++k) {
      penalize(p.net.w.data()[k], g.net.w.data()[k]);
    }
    for (std::size_t j = 0; j < h; ++j) {
      penalize(p.net.b_w[j], g.net.b_w[j]);
      penalize(p.net.v[j], g.net.v[j]);
    }
    penalize(p.net.b_v, g.net.b_v);
  }
  return g;
}

inline double point_objective(const ParamPoint& p, const Matrix& x, const Vector& y,
                              std::optional<double> map_prior_std = {}) {
  return point_gradients(p, x, y, map_prior_std).objective;
}

}  // namespace bnnvi
