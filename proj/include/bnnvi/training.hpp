#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bnnvi/data.hpp"
#include "bnnvi/diagnostics.hpp"
#include "bnnvi/errors.hpp"
#include "bnnvi/posterior.hpp"

namespace bnnvi {

struct TrainConfig {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  std::size_t iterations = 5000;
  std::size_t es_iterations = 2000;  // ES trains for a fixed shorter budget
  std::size_t trace_every = 50;
  std::size_t eval_mc_samples = 100;
  std::size_t n_mc_diag = 1;  // per-iteration MC samples with local reparam
  std::size_t n_mc_fc = 8;    // FC has no local reparameterization
  double sigma_init = 1e-4;
  double wn_weight_std = 0.1;
  double wn_bias_std = 0.1;
  // Synthetic runs pin the observation noise to the generating value.
  std::optional<double> fixed_log_noise_std;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error("TrainConfig: learning_rate <= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw Error("TrainConfig: betas must lie in (0, 1)");
    }
    if (!(sigma_init > 0.0)) throw InvalidSigmaInit("TrainConfig: sigma_init <= 0");
  }

  std::size_t iterations_for(Family f) const {
    return f == Family::ES ? es_iterations : iterations;
  }
};

struct AdamState {
  Vector m;
  Vector v;
  std::size_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Standard Adam with bias correction.
inline void adam_step(Vector& params, const Vector& grads, AdamState& state,
                      const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeMismatch("adam_step: parameter/gradient/state size mismatch");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

// Flat parameter packing, fixed layout per family:
//   ES/MAP/WN: [W, b_w, v, b_v, log_noise_std]
//   MF:        [... as above, rho_W, rho_b_w, rho_v, rho_b_v]
//   FC:        [... as ES, tril(L_in), tril(L_out)] with log-diagonals
namespace detail {

inline void append_net(const NetParams& p, Vector& out) {
  out.insert(out.end(), p.w.data().begin(), p.w.data().end());
  out.insert(out.end(), p.b_w.begin(), p.b_w.end());
  out.insert(out.end(), p.v.begin(), p.v.end());
  out.push_back(p.b_v);
}

inline std::size_t read_net(const Vector& flat, std::size_t pos, NetParams& p) {
  std::copy(flat.begin() + pos, flat.begin() + pos + p.w.size(), p.w.data().begin());
  pos += p.w.size();
  std::copy(flat.begin() + pos, flat.begin() + pos + p.b_w.size(), p.b_w.begin());
  pos += p.b_w.size();
  std::copy(flat.begin() + pos, flat.begin() + pos + p.v.size(), p.v.begin());
  pos += p.v.size();
  p.b_v = flat[pos++];
  return pos;
}

inline void append_tril_log_diag(const Matrix& l, Vector& out) {
  for (std::size_t i = 0; i < l.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) out.push_back(l(i, j));
    out.push_back(std::log(l(i, i)));
  }
}

inline std::size_t read_tril_log_diag(const Vector& flat, std::size_t pos,
                                      Matrix& l) {
  for (std::size_t i = 0; i < l.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) l(i, j) = flat[pos++];
    l(i, i) = std::exp(flat[pos++]);
  }
  return pos;
}

inline void append_tril_raw(const Matrix& l, Vector& out) {
  // gradient counterpart: diagonal entries already hold d/dlog(L_ii)
  for (std::size_t i = 0; i < l.rows(); ++i) {
    for (std::size_t j = 0; j <= i; ++j) out.push_back(l(i, j));
  }
}

}  // namespace detail

inline Vector pack_parameters(const VariationalPosterior& q) {
  Vector out;
  detail::append_net(q.mean.net, out);
  out.push_back(q.mean.log_noise_std);
  if (q.family == Family::MF) detail::append_net(q.rho, out);
  if (q.family == Family::FC) {
    detail::append_tril_log_diag(q.l_in, out);
    detail::append_tril_log_diag(q.l_out, out);
  }
  return out;
}

inline void unpack_parameters(const Vector& flat, VariationalPosterior& q) {
  std::size_t pos = detail::read_net(flat, 0, q.mean.net);
  q.mean.log_noise_std = flat[pos++];
  if (q.family == Family::MF) pos = detail::read_net(flat, pos, q.rho);
  if (q.family == Family::FC) {
    pos = detail::read_tril_log_diag(flat, pos, q.l_in);
    pos = detail::read_tril_log_diag(flat, pos, q.l_out);
  }
  if (pos != flat.size()) throw ShapeMismatch("unpack_parameters: size mismatch");
}

inline Vector pack_gradients(const PosteriorGrads& g, Family family) {
  Vector out;
  detail::append_net(g.mean.net, out);
  out.push_back(g.mean.log_noise_std);
  if (family == Family::MF) detail::append_net(g.rho, out);
  if (family == Family::FC) {
    detail::append_tril_raw(g.l_in, out);
    detail::append_tril_raw(g.l_out, out);
  }
  return out;
}

inline Vector pack_gradients(const PointGrads& g) {
  Vector out;
  detail::append_net(g.net, out);
  out.push_back(g.log_noise_std);
  return out;
}

struct TraceRecord {
  std::size_t iter = 0;
  double kl = 0.0;
  double expected_nll = 0.0;
  double vfe_total = 0.0;
  double train_pred_nll = 0.0;
  double test_pred_nll = std::numeric_limits<double>::quiet_NaN();
};

using TrainingTrace = std::vector<TraceRecord>;

struct TrainResult {
  VariationalPosterior posterior;
  TrainingTrace trace;
};

namespace detail {

inline TraceRecord make_trace_record(const VariationalPosterior& q,
                                     const Prior& prior, const Dataset& train,
                                     const Dataset* test, const TrainConfig& cfg,
                                     std::size_t iter, RngState eval_rng) {
  TraceRecord rec;
  rec.iter = iter;
  if (is_variational_family(q.family)) {
    const VfeEstimate est = vfe_estimate(q, prior, train, cfg.eval_mc_samples,
                                         eval_rng.child("vfe"));
    rec.kl = est.kl;
    rec.expected_nll = est.expected_nll;
  } else {
    // Point families: the "kl" column carries the prior penalty (MAP) so the
    // total still sums to the optimized objective.
    const double nll = point_objective(q.mean, train);
    rec.expected_nll = nll;
    rec.kl = q.family == Family::MAP
                 ? point_objective(q.mean, train, prior.std) - nll
                 : 0.0;
  }
  rec.vfe_total = rec.kl + rec.expected_nll;
  rec.train_pred_nll =
      -mean_predictive_ll(q, train, cfg.eval_mc_samples, eval_rng.child("train"));
  if (test != nullptr) {
    rec.test_pred_nll =
        -mean_predictive_ll(q, *test, cfg.eval_mc_samples, eval_rng.child("test"));
  }
  return rec;
}

}  // namespace detail

// Full-batch Adam from a given starting posterior.  Trace records are taken
// before the update at every trace_every-th iteration with a per-record eval
// stream, so trace noise is decorrelated from training noise.
inline TrainResult train_from(VariationalPosterior q, const Dataset& train_data,
                              const Prior& prior, const TrainConfig& cfg,
                              RngState rng, const Dataset* test_data = nullptr) {
  cfg.validate();
  if (train_data.n() == 0) throw EmptyInput("train_from: empty training set");
  q.mean.net.check_shape(q.shape);
  if (cfg.fixed_log_noise_std) q.mean.log_noise_std = *cfg.fixed_log_noise_std;

  const std::size_t iterations = cfg.iterations_for(q.family);
  Vector params = pack_parameters(q);
  AdamState adam(params.size());
  TrainingTrace trace;

  const std::size_t noise_index =
      q.shape.hidden_units * q.shape.input_dim + 2 * q.shape.hidden_units + 1;

  auto record = [&](std::size_t iter) {
    trace.push_back(detail::make_trace_record(
        q, prior, train_data, test_data, cfg, iter,
        rng.child("trace_eval", trace.size())));
  };

  for (std::size_t t = 0; t < iterations; ++t) {
    if (cfg.trace_every > 0 && t % cfg.trace_every == 0) record(t);

    Vector grads;
    double objective = 0.0;
    switch (q.family) {
      case Family::ES: {
        const PointGrads g = point_gradients(q.mean, train_data);
        objective = g.objective;
        grads = pack_gradients(g);
        break;
      }
      case Family::MAP: {
        const PointGrads g = point_gradients(q.mean, train_data, prior.std);
        objective = g.objective;
        grads = pack_gradients(g);
        break;
      }
      default: {
        const std::size_t n_mc =
            q.family == Family::FC ? cfg.n_mc_fc : cfg.n_mc_diag;
        const PosteriorGrads g =
            vfe_gradients(q, prior, train_data, n_mc, rng.child("iter", t));
        objective = g.estimate.total;
        grads = pack_gradients(g, q.family);
        break;
      }
    }

    if (!std::isfinite(objective)) {
      throw NonFiniteLoss("train_from: non-finite objective at iteration " +
                          std::to_string(t) + " (family " +
                          family_name(q.family) + ")");
    }
    if (cfg.fixed_log_noise_std) grads[noise_index] = 0.0;
    adam_step(params, grads, adam, cfg);
    unpack_parameters(params, q);
    if (cfg.fixed_log_noise_std) q.mean.log_noise_std = *cfg.fixed_log_noise_std;
  }

  if (trace.empty()) record(iterations);
  return {std::move(q), std::move(trace)};
}

inline TrainResult train(Family family, const Dataset& train_data,
                         const NetworkShape& shape, const Prior& prior,
                         const TrainConfig& cfg, RngState rng,
                         const Dataset* test_data = nullptr) {
  RngState init_rng = rng.child("init");
  VariationalPosterior q =
      init_posterior(family, shape, prior, init_rng, cfg.sigma_init,
                     cfg.wn_weight_std, cfg.wn_bias_std);
  return train_from(std::move(q), train_data, prior, cfg, rng, test_data);
}

}  // namespace bnnvi
