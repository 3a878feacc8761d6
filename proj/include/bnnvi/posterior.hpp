#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "bnnvi/data.hpp"
#include "bnnvi/errors.hpp"
#include "bnnvi/linalg.hpp"
#include "bnnvi/network.hpp"
#include "bnnvi/rng.hpp"

namespace bnnvi {

// ES: maximum likelihood (trained for a fixed budget), MAP: Gaussian-prior
// penalized point estimate, WN: diagonal Gaussian with fixed stds, MF:
// diagonal Gaussian with learned stds, FC: full covariance per layer.
enum class Family { ES, MAP, WN, MF, FC };

inline bool is_point_family(Family f) { return f == Family::ES || f == Family::MAP; }
inline bool is_variational_family(Family f) { return !is_point_family(f); }

inline std::string family_name(Family f) {
  switch (f) {
    case Family::ES: return "es";
    case Family::MAP: return "map";
    case Family::WN: return "wn";
    case Family::MF: return "mf";
    case Family::FC: return "fc";
  }
  return "?";
}

inline Family family_from_name(const std::string& s) {
  if (s == "es") return Family::ES;
  if (s == "map") return Family::MAP;
  if (s == "wn") return Family::WN;
  if (s == "mf") return Family::MF;
  if (s == "fc") return Family::FC;
  throw Error("unknown family: " + s);
}

// Zero-mean isotropic Gaussian prior shared by all weights and biases.
struct Prior {
  double std = 1.0;
};

// FC treats each layer as one Gaussian block: {W, b_w} and {v, b_v}.
inline Vector flatten_input_layer(const NetParams& p) {
  Vector out;
  out.reserve(p.w.size() + p.b_w.size());
  out.insert(out.end(), p.w.data().begin(), p.w.data().end());
  out.insert(out.end(), p.b_w.begin(), p.b_w.end());
  return out;
}

inline Vector flatten_output_layer(const NetParams& p) {
  Vector out;
  out.reserve(p.v.size() + 1);
  out.insert(out.end(), p.v.begin(), p.v.end());
  out.push_back(p.b_v);
  return out;
}

inline void unflatten_input_layer(const Vector& flat, NetParams& p) {
  const std::size_t nw = p.w.size();
  if (flat.size() != nw + p.b_w.size()) {
    throw DimensionMismatch("unflatten_input_layer: size mismatch");
  }
  std::copy(flat.begin(), flat.begin() + nw, p.w.data().begin());
  std::copy(flat.begin() + nw, flat.end(), p.b_w.begin());
}

inline void unflatten_output_layer(const Vector& flat, NetParams& p) {
  if (flat.size() != p.v.size() + 1) {
    throw DimensionMismatch("unflatten_output_layer: size mismatch");
  }
  std::copy(flat.begin(), flat.end() - 1, p.v.begin());
  p.b_v = flat.back();
}

struct VariationalPosterior {
  Family family = Family::MF;
  NetworkShape shape;
  ParamPoint mean;

  // MF: per-parameter unconstrained scales, sigma = exp(rho).
  NetParams rho;

  // WN: fixed stds (hyperparameters, not optimized).
  double wn_weight_std = 0.0;
  double wn_bias_std = 0.0;

  // FC: lower-triangular Cholesky factors with positive diagonals,
  // one per layer block.
  Matrix l_in;
  Matrix l_out;

  std::size_t input_block_dim() const {
    return shape.hidden_units * shape.input_dim + shape.hidden_units;
  }
  std::size_t output_block_dim() const { return shape.hidden_units + 1; }
};

// Per-parameter marginal stds (FC: sqrt of the covariance diagonal).
inline NetParams marginal_sigmas(const VariationalPosterior& q) {
  NetParams s(q.shape, 0.0);
  switch (q.family) {
    case Family::ES:
    case Family::MAP:
      break;
    case Family::WN: {
      for (auto& x : s.w.data()) x = q.wn_weight_std;
      for (auto& x : s.v) x = q.wn_weight_std;
      for (auto& x : s.b_w) x = q.wn_bias_std;
      s.b_v = q.wn_bias_std;
      break;
    }
    case Family::MF: {
      for (std::size_t k = 0; k < s.w.size(); ++k) {
        s.w.data()[k] = std::exp(q.rho.w.data()[k]);
      }
      for (std::size_t j = 0; j < s.b_w.size(); ++j) s.b_w[j] = std::exp(q.rho.b_w[j]);
      for (std::size_t j = 0; j < s.v.size(); ++j) s.v[j] = std::exp(q.rho.v[j]);
      s.b_v = std::exp(q.rho.b_v);
      break;
    }
    case Family::FC: {
      const std::size_t k1 = q.input_block_dim();
      const std::size_t k2 = q.output_block_dim();
      Vector d1(k1, 0.0), d2(k2, 0.0);
      for (std::size_t i = 0; i < k1; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += q.l_in(i, j) * q.l_in(i, j);
        d1[i] = std::sqrt(acc);
      }
      for (std::size_t i = 0; i < k2; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += q.l_out(i, j) * q.l_out(i, j);
        d2[i] = std::sqrt(acc);
      }
      unflatten_input_layer(d1, s);
      unflatten_output_layer(d2, s);
      break;
    }
  }
  return s;
}

// Means drawn from N(0, 1/fan_in); scales start at sigma_init so training
// begins from a near-deterministic network.
inline VariationalPosterior init_posterior(Family family, const NetworkShape& shape,
                                           const Prior& prior, RngState& rng,
                                           double sigma_init = 1e-4,
                                           double wn_weight_std = 0.1,
                                           double wn_bias_std = 0.1) {
  (void)prior;
  if (!(sigma_init > 0.0)) {
    throw InvalidSigmaInit("init_posterior: sigma_init must be positive");
  }
  VariationalPosterior q;
  q.family = family;
  q.shape = shape;
  q.mean = ParamPoint(shape);

  const double w_scale = 1.0 / std::sqrt(static_cast<double>(shape.input_dim));
  const double v_scale = 1.0 / std::sqrt(static_cast<double>(shape.hidden_units));
  for (auto& w : q.mean.net.w.data()) w = w_scale * rng.next_normal();
  for (auto& b : q.mean.net.b_w) b = w_scale * rng.next_normal();
  for (auto& v : q.mean.net.v) v = v_scale * rng.next_normal();
  q.mean.net.b_v = v_scale * rng.next_normal();
  q.mean.log_noise_std = 0.0;

  switch (family) {
    case Family::ES:
    case Family::MAP:
      break;
    case Family::WN:
      q.wn_weight_std = wn_weight_std;
      q.wn_bias_std = wn_bias_std;
      break;
    case Family::MF:
      q.rho = NetParams(shape, std::log(sigma_init));
      break;
    case Family::FC: {
      const std::size_t k1 = q.input_block_dim();
      const std::size_t k2 = q.output_block_dim();
      q.l_in = Matrix(k1, k1);
      q.l_out = Matrix(k2, k2);
      for (std::size_t i = 0; i < k1; ++i) q.l_in(i, i) = sigma_init;
      for (std::size_t i = 0; i < k2; ++i) q.l_out(i, i) = sigma_init;
      break;
    }
  }
  return q;
}

// MF posterior centered on given weights with every sigma = sigma_init.
inline VariationalPosterior init_at_truth(const ParamPoint& teacher,
                                          double sigma_init) {
  if (!(sigma_init > 0.0)) {
    throw InvalidSigmaInit("init_at_truth: sigma_init must be positive");
  }
  VariationalPosterior q;
  q.family = Family::MF;
  q.shape = teacher.net.shape();
  q.mean = teacher;
  q.rho = NetParams(q.shape, std::log(sigma_init));
  return q;
}

// One draw theta ~ q.  ES/MAP return the point itself; the observation-noise
// parameter is a point estimate in every family.
inline ParamPoint sample_params(const VariationalPosterior& q, RngState& rng) {
  ParamPoint out = q.mean;
  switch (q.family) {
    case Family::ES:
    case Family::MAP:
      return out;
    case Family::WN:
    case Family::MF: {
      const NetParams s = marginal_sigmas(q);
      for (std::size_t k = 0; k < out.net.w.size(); ++k) {
        out.net.w.data()[k] += s.w.data()[k] * rng.next_normal();
      }
      for (std::size_t j = 0; j < out.net.b_w.size(); ++j) {
        out.net.b_w[j] += s.b_w[j] * rng.next_normal();
      }
      for (std::size_t j = 0; j < out.net.v.size(); ++j) {
        out.net.v[j] += s.v[j] * rng.next_normal();
      }
      out.net.b_v += s.b_v * rng.next_normal();
      return out;
    }
    case Family::FC: {
      const std::size_t k1 = q.input_block_dim();
      const std::size_t k2 = q.output_block_dim();
      Vector theta_in = flatten_input_layer(q.mean.net);
      Vector theta_out = flatten_output_layer(q.mean.net);
      const Vector e1 = rng.normals(k1);
      const Vector e2 = rng.normals(k2);
      for (std::size_t i = 0; i < k1; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += q.l_in(i, j) * e1[j];
        theta_in[i] += acc;
      }
      for (std::size_t i = 0; i < k2; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += q.l_out(i, j) * e2[j];
        theta_out[i] += acc;
      }
      unflatten_input_layer(theta_in, out.net);
      unflatten_output_layer(theta_out, out.net);
      return out;
    }
  }
  return out;
}

// Samples layer pre-activations directly from their induced Gaussian:
// a_j ~ N(mu_W[j].x + mu_b[j], sum_i sigma_W[j][i]^2 x_i^2 + sigma_b[j]^2).
inline Vector local_reparam_layer(const Matrix& mu_w, const Matrix& sigma_w,
                                  const Vector& mu_b, const Vector& sigma_b,
                                  const Vector& x, RngState& rng) {
  if (mu_w.rows() != sigma_w.rows() || mu_w.cols() != sigma_w.cols() ||
      mu_w.rows() != mu_b.size() || mu_b.size() != sigma_b.size() ||
      mu_w.cols() != x.size()) {
    throw DimensionMismatch("local_reparam_layer: shape mismatch");
  }
  Vector a(mu_w.rows());
  for (std::size_t j = 0; j < mu_w.rows(); ++j) {
    const double* mw = mu_w.row(j);
    const double* sw = sigma_w.row(j);
    double m = mu_b[j];
    double var = sigma_b[j] * sigma_b[j];
    for (std::size_t i = 0; i < x.size(); ++i) {
      m += mw[i] * x[i];
      var += sw[i] * sw[i] * x[i] * x[i];
    }
    const double eps = rng.next_normal();
    a[j] = var > 0.0 ? m + std::sqrt(var) * eps : m;
  }
  return a;
}

// Hidden-layer pre-activations for a diagonal-family posterior.
inline Vector local_reparam_hidden(const VariationalPosterior& q, const Vector& x,
                                   RngState& rng) {
  if (q.family != Family::WN && q.family != Family::MF) {
    throw FamilyMismatch("local_reparam_hidden: requires a diagonal family");
  }
  const NetParams s = marginal_sigmas(q);
  return local_reparam_layer(q.mean.net.w, s.w, q.mean.net.b_w, s.b_w, x, rng);
}

// KL(N(mu, sigma^2) || N(0, prior_std^2)) in nats.
inline double kl_diag_gauss(double mu, double sigma, double prior_std) {
  if (!(sigma > 0.0) || !(prior_std > 0.0)) {
    throw NonPositiveScale("kl_diag_gauss: scales must be positive");
  }
  const double ratio2 = (sigma * sigma + mu * mu) / (prior_std * prior_std);
  return std::log(prior_std / sigma) + 0.5 * ratio2 - 0.5;
}

// KL(N(mu, L L^T) || N(0, prior_std^2 I)) in nats.
inline double kl_full_gauss(const Vector& mu, const Matrix& l, double prior_std) {
  if (!(prior_std > 0.0)) {
    throw NonPositiveScale("kl_full_gauss: prior_std must be positive");
  }
  if (l.rows() != l.cols() || l.rows() != mu.size()) {
    throw DimensionMismatch("kl_full_gauss: dimension mismatch");
  }
  const std::size_t k = mu.size();
  const double inv_s2 = 1.0 / (prior_std * prior_std);
  double trace = 0.0;
  double log_det_half = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(l(i, i) > 0.0)) {
      throw NonPositiveScale("kl_full_gauss: non-positive diagonal in L");
    }
    log_det_half += std::log(l(i, i));
    for (std::size_t j = 0; j <= i; ++j) trace += l(i, j) * l(i, j);
  }
  return 0.5 * (trace * inv_s2 + squared_norm(mu) * inv_s2 -
                static_cast<double>(k)) +
         static_cast<double>(k) * std::log(prior_std) - log_det_half;
}

// Complexity penalty of the whole posterior; the observation-noise parameter
// carries no KL term.
inline double kl_to_prior(const VariationalPosterior& q, const Prior& prior) {
  switch (q.family) {
    case Family::ES:
    case Family::MAP:
      throw FamilyMismatch("kl_to_prior: point families have no KL term");
    case Family::WN:
    case Family::MF: {
      const NetParams s = marginal_sigmas(q);
      double kl = 0.0;
      for (std::size_t k = 0; k < s.w.size(); ++k) {
        kl += kl_diag_gauss(q.mean.net.w.data()[k], s.w.data()[k], prior.std);
      }
      for (std::size_t j = 0; j < s.b_w.size(); ++j) {
        kl += kl_diag_gauss(q.mean.net.b_w[j], s.b_w[j], prior.std);
      }
      for (std::size_t j = 0; j < s.v.size(); ++j) {
        kl += kl_diag_gauss(q.mean.net.v[j], s.v[j], prior.std);
      }
      kl += kl_diag_gauss(q.mean.net.b_v, s.b_v, prior.std);
      return kl;
    }
    case Family::FC:
      return kl_full_gauss(flatten_input_layer(q.mean.net), q.l_in, prior.std) +
             kl_full_gauss(flatten_output_layer(q.mean.net), q.l_out, prior.std);
  }
  return 0.0;
}

struct VfeEstimate {
  double expected_nll = 0.0;
  double kl = 0.0;
  double total = 0.0;
  std::size_t n_mc = 0;
};

// Gradients of the VFE with respect to the packed variational parameters.
// rho holds d/d rho (MF); the l_* diagonals hold d/d log(L_ii) so every
// coordinate is unconstrained.
struct PosteriorGrads {
  ParamPoint mean;
  NetParams rho;
  Matrix l_in;
  Matrix l_out;
  VfeEstimate estimate;

  explicit PosteriorGrads(const VariationalPosterior& q)
      : mean(q.shape, 0.0), rho(q.shape, 0.0) {
    if (q.family == Family::FC) {
      l_in = Matrix(q.input_block_dim(), q.input_block_dim());
      l_out = Matrix(q.output_block_dim(), q.output_block_dim());
    }
  }
};

namespace detail {

// Expected-NLL estimate (and optionally reparameterization gradients) for the
// diagonal families via local reparameterization at both layers.  The clamp
// forces q(v_j) to a zero point mass for the conditional-independence check.
inline double diag_expected_nll(const VariationalPosterior& q, const Dataset& data,
                                std::size_t n_mc, RngState rng,
                                PosteriorGrads* grads,
                                std::optional<std::size_t> clamp_unit) {
  const NetworkShape shape = q.shape;
  const std::size_t h = shape.hidden_units;
  const std::size_t d = shape.input_dim;
  const bool learn_scales = q.family == Family::MF;

  NetParams sig = marginal_sigmas(q);
  Vector mu_v = q.mean.net.v;
  if (clamp_unit) {
    if (*clamp_unit >= h) throw UnitOutOfRange("clamp unit out of range");
    mu_v[*clamp_unit] = 0.0;
    sig.v[*clamp_unit] = 0.0;
  }

  const double s_obs = q.mean.log_noise_std;
  const double inv_var = std::exp(-2.0 * s_obs);
  double nll_acc = 0.0;

  Vector mu_a(h), sd_a(h), hid(h), eps_h(h);
  for (std::size_t m = 0; m < n_mc; ++m) {
    RngState child = rng.child("mc", m);
    for (std::size_t n = 0; n < data.n(); ++n) {
      const double* xn = data.x.row(n);
      for (std::size_t j = 0; j < h; ++j) eps_h[j] = child.next_normal();
      const double eps_f = child.next_normal();

      for (std::size_t j = 0; j < h; ++j) {
        const double* mw = q.mean.net.w.row(j);
        const double* sw = sig.w.row(j);
        double mu = q.mean.net.b_w[j];
        double var = sig.b_w[j] * sig.b_w[j];
        for (std::size_t i = 0; i < d; ++i) {
          mu += mw[i] * xn[i];
          var += sw[i] * sw[i] * xn[i] * xn[i];
        }
        mu_a[j] = mu;
        sd_a[j] = std::sqrt(var);
        hid[j] = std::tanh(mu + sd_a[j] * eps_h[j]);
      }

      double mu_f = q.mean.net.b_v;
      double var_f = sig.b_v * sig.b_v;
      for (std::size_t j = 0; j < h; ++j) {
        mu_f += mu_v[j] * hid[j];
        var_f += sig.v[j] * sig.v[j] * hid[j] * hid[j];
      }
      const double sd_f = std::sqrt(var_f);
      const double f = mu_f + sd_f * eps_f;
      const double r = f - data.y[n];
      nll_acc += kHalfLog2Pi + s_obs + 0.5 * r * r * inv_var;

      if (!grads) continue;

      const double gf = r * inv_var;
      grads->mean.log_noise_std += 1.0 - r * r * inv_var;
      grads->mean.net.b_v += gf;
      const double g_sdf = sd_f > 0.0 ? gf * eps_f : 0.0;
      if (learn_scales && sd_f > 0.0) {
        grads->rho.b_v += g_sdf * (sig.b_v * sig.b_v) / sd_f;
      }
      for (std::size_t j = 0; j < h; ++j) {
        grads->mean.net.v[j] += gf * hid[j];
        double gh = gf * mu_v[j];
        if (sd_f > 0.0) {
          gh += g_sdf * sig.v[j] * sig.v[j] * hid[j] / sd_f;
          if (learn_scales) {
            grads->rho.v[j] +=
                g_sdf * (sig.v[j] * sig.v[j]) * hid[j] * hid[j] / sd_f;
          }
        }
        const double ga = gh * (1.0 - hid[j] * hid[j]);
        grads->mean.net.b_w[j] += ga;
        double* gw = grads->mean.net.w.row(j);
        for (std::size_t i = 0; i < d; ++i) gw[i] += ga * xn[i];
        if (learn_scales && sd_a[j] > 0.0) {
          const double g_sda = ga * eps_h[j];
          const double* sw = sig.w.row(j);
          double* gr = grads->rho.w.row(j);
          for (std::size_t i = 0; i < d; ++i) {
            gr[i] += g_sda * sw[i] * sw[i] * xn[i] * xn[i] / sd_a[j];
          }
          grads->rho.b_w[j] += g_sda * sig.b_w[j] * sig.b_w[j] / sd_a[j];
        }
      }
    }
  }
  return nll_acc / static_cast<double>(n_mc);
}

// Expected-NLL estimate (and gradients) for FC via full weight sampling,
// one sampled parameter vector per MC sample shared across the batch.
inline double fc_expected_nll(const VariationalPosterior& q, const Dataset& data,
                              std::size_t n_mc, RngState rng,
                              PosteriorGrads* grads) {
  const std::size_t k1 = q.input_block_dim();
  const std::size_t k2 = q.output_block_dim();
  const Vector mu_in = flatten_input_layer(q.mean.net);
  const Vector mu_out = flatten_output_layer(q.mean.net);

  double nll_acc = 0.0;
  ParamPoint theta(q.shape);
  theta.log_noise_std = q.mean.log_noise_std;
  for (std::size_t m = 0; m < n_mc; ++m) {
    RngState child = rng.child("mc", m);
    const Vector e1 = child.normals(k1);
    const Vector e2 = child.normals(k2);
    Vector t_in = mu_in;
    Vector t_out = mu_out;
    for (std::size_t i = 0; i < k1; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= i; ++j) acc += q.l_in(i, j) * e1[j];
      t_in[i] += acc;
    }
    for (std::size_t i = 0; i < k2; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= i; ++j) acc += q.l_out(i, j) * e2[j];
      t_out[i] += acc;
    }
    unflatten_input_layer(t_in, theta.net);
    unflatten_output_layer(t_out, theta.net);

    const PointGrads pg = point_gradients(theta, data.x, data.y);
    nll_acc += pg.objective;
    if (!grads) continue;

    grads->mean.log_noise_std += pg.log_noise_std;
    const Vector g_in = flatten_input_layer(pg.net);
    const Vector g_out = flatten_output_layer(pg.net);
    Vector gm_in = flatten_input_layer(grads->mean.net);
    Vector gm_out = flatten_output_layer(grads->mean.net);
    for (std::size_t i = 0; i < k1; ++i) {
      gm_in[i] += g_in[i];
      double* row = grads->l_in.row(i);
      for (std::size_t j = 0; j <= i; ++j) row[j] += g_in[i] * e1[j];
    }
    for (std::size_t i = 0; i < k2; ++i) {
      gm_out[i] += g_out[i];
      double* row = grads->l_out.row(i);
      for (std::size_t j = 0; j <= i; ++j) row[j] += g_out[i] * e2[j];
    }
    unflatten_input_layer(gm_in, grads->mean.net);
    unflatten_output_layer(gm_out, grads->mean.net);
  }
  return nll_acc / static_cast<double>(n_mc);
}

// The sampling path produces d/dL_ii; re-express as d/dlog(L_ii) to match
// the unconstrained packing.
inline void chain_fc_diagonal(const VariationalPosterior& q, PosteriorGrads& g) {
  for (std::size_t i = 0; i < g.l_in.rows(); ++i) g.l_in(i, i) *= q.l_in(i, i);
  for (std::size_t i = 0; i < g.l_out.rows(); ++i) g.l_out(i, i) *= q.l_out(i, i);
}

inline void scale_nll_grads(PosteriorGrads& g, const VariationalPosterior& q,
                            double factor) {
  for (auto& x : g.mean.net.w.data()) x *= factor;
  for (auto& x : g.mean.net.b_w) x *= factor;
  for (auto& x : g.mean.net.v) x *= factor;
  g.mean.net.b_v *= factor;
  g.mean.log_noise_std *= factor;
  for (auto& x : g.rho.w.data()) x *= factor;
  for (auto& x : g.rho.b_w) x *= factor;
  for (auto& x : g.rho.v) x *= factor;
  g.rho.b_v *= factor;
  if (q.family == Family::FC) {
    for (auto& x : g.l_in.data()) x *= factor;
    for (auto& x : g.l_out.data()) x *= factor;
  }
}

// Closed-form KL gradients, chained onto the unconstrained parameterization.
inline void add_kl_grads(const VariationalPosterior& q, const Prior& prior,
                         PosteriorGrads& g) {
  const double inv_s2 = 1.0 / (prior.std * prior.std);
  switch (q.family) {
    case Family::ES:
    case Family::MAP:
      return;
    case Family::WN: {
      for (std::size_t k = 0; k < q.mean.net.w.size(); ++k) {
        g.mean.net.w.data()[k] += q.mean.net.w.data()[k] * inv_s2;
      }
      for (std::size_t j = 0; j < q.mean.net.b_w.size(); ++j) {
        g.mean.net.b_w[j] += q.mean.net.b_w[j] * inv_s2;
      }
      for (std::size_t j = 0; j < q.mean.net.v.size(); ++j) {
        g.mean.net.v[j] += q.mean.net.v[j] * inv_s2;
      }
      g.mean.net.b_v += q.mean.net.b_v * inv_s2;
      return;
    }
    case Family::MF: {
      const NetParams sig = marginal_sigmas(q);
      auto add = [&](double mu, double sigma, double& g_mu, double& g_rho) {
        g_mu += mu * inv_s2;
        g_rho += sigma * sigma * inv_s2 - 1.0;
      };
      for (std::size_t k = 0; k < q.mean.net.w.size(); ++k) {
        add(q.mean.net.w.data()[k], sig.w.data()[k], g.mean.net.w.data()[k],
            g.rho.w.data()[k]);
      }
      for (std::size_t j = 0; j < q.mean.net.b_w.size(); ++j) {
        add(q.mean.net.b_w[j], sig.b_w[j], g.mean.net.b_w[j], g.rho.b_w[j]);
      }
      for (std::size_t j = 0; j < q.mean.net.v.size(); ++j) {
        add(q.mean.net.v[j], sig.v[j], g.mean.net.v[j], g.rho.v[j]);
      }
      add(q.mean.net.b_v, sig.b_v, g.mean.net.b_v, g.rho.b_v);
      return;
    }
    case Family::FC: {
      Vector gm_in = flatten_input_layer(g.mean.net);
      Vector gm_out = flatten_output_layer(g.mean.net);
      const Vector mu_in = flatten_input_layer(q.mean.net);
      const Vector mu_out = flatten_output_layer(q.mean.net);
      for (std::size_t i = 0; i < mu_in.size(); ++i) {
        gm_in[i] += mu_in[i] * inv_s2;
        double* row = g.l_in.row(i);
        const double* lrow = q.l_in.row(i);
        for (std::size_t j = 0; j < i; ++j) row[j] += lrow[j] * inv_s2;
        row[i] += lrow[i] * lrow[i] * inv_s2 - 1.0;  // d/d log(L_ii)
      }
      for (std::size_t i = 0; i < mu_out.size(); ++i) {
        gm_out[i] += mu_out[i] * inv_s2;
        double* row = g.l_out.row(i);
        const double* lrow = q.l_out.row(i);
        for (std::size_t j = 0; j < i; ++j) row[j] += lrow[j] * inv_s2;
        row[i] += lrow[i] * lrow[i] * inv_s2 - 1.0;
      }
      unflatten_input_layer(gm_in, g.mean.net);
      unflatten_output_layer(gm_out, g.mean.net);
      return;
    }
  }
}

}  // namespace detail

// Stochastic estimate of the variational free energy.  The expected NLL uses
// local reparameterization for WN/MF and full weight sampling for FC; the KL
// is always closed form.  The rng is taken by value so a caller can replay
// the identical noise (frozen-noise finite differences rely on this).
inline VfeEstimate vfe_estimate(const VariationalPosterior& q, const Prior& prior,
                                const Dataset& data, std::size_t n_mc,
                                RngState rng) {
  if (!is_variational_family(q.family)) {
    throw FamilyMismatch("vfe_estimate: requires WN, MF, or FC");
  }
  if (n_mc == 0) throw Error("vfe_estimate: n_mc must be >= 1");
  VfeEstimate est;
  est.n_mc = n_mc;
  est.expected_nll =
      q.family == Family::FC
          ? detail::fc_expected_nll(q, data, n_mc, rng, nullptr)
          : detail::diag_expected_nll(q, data, n_mc, rng, nullptr, {});
  est.kl = kl_to_prior(q, prior);
  est.total = est.expected_nll + est.kl;
  return est;
}

// Reparameterization-trick gradients of the n_mc-averaged VFE estimate.
// WN receives gradients only for means and the noise parameter.
inline PosteriorGrads vfe_gradients(const VariationalPosterior& q,
                                    const Prior& prior, const Dataset& data,
                                    std::size_t n_mc, RngState rng) {
  if (!is_variational_family(q.family)) {
    throw FamilyMismatch("vfe_gradients: requires WN, MF, or FC");
  }
  if (n_mc == 0) throw Error("vfe_gradients: n_mc must be >= 1");
  PosteriorGrads g(q);
  g.estimate.n_mc = n_mc;
  g.estimate.expected_nll =
      q.family == Family::FC
          ? detail::fc_expected_nll(q, data, n_mc, rng, &g)
          : detail::diag_expected_nll(q, data, n_mc, rng, &g, {});
  detail::scale_nll_grads(g, q, 1.0 / static_cast<double>(n_mc));
  if (q.family == Family::FC) detail::chain_fc_diagonal(q, g);
  detail::add_kl_grads(q, prior, g);
  g.estimate.kl = kl_to_prior(q, prior);
  g.estimate.total = g.estimate.expected_nll + g.estimate.kl;
  return g;
}

// Expected-NLL gradients with q(v_j) clamped to a zero point mass; used by
// the conditional-independence diagnostic.  No KL term is added.
inline PosteriorGrads expected_nll_gradients_clamped(
    const VariationalPosterior& q, const Dataset& data, std::size_t n_mc,
    RngState rng, std::optional<std::size_t> clamp_unit) {
  if (q.family != Family::MF) {
    throw FamilyMismatch("expected_nll_gradients_clamped: requires MF");
  }
  PosteriorGrads g(q);
  g.estimate.n_mc = n_mc;
  g.estimate.expected_nll =
      detail::diag_expected_nll(q, data, n_mc, rng, &g, clamp_unit);
  detail::scale_nll_grads(g, q, 1.0 / static_cast<double>(n_mc));
  g.estimate.kl = 0.0;
  g.estimate.total = g.estimate.expected_nll;
  return g;
}

}  // namespace bnnvi
