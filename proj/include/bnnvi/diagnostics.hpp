#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "bnnvi/data.hpp"
#include "bnnvi/errors.hpp"
#include "bnnvi/posterior.hpp"

namespace bnnvi {

// log p(y | x, D) via Eq-style Monte Carlo: log of the average likelihood
// over m posterior draws.  Point families evaluate at the point estimate.
// When the dataset carrying (x, y) was standardized, subtract log(sigma_y)
// of the scaler to express the density in original units.
inline double posterior_predictive_ll(const VariationalPosterior& q,
                                      const Vector& x, double y, std::size_t m,
                                      RngState rng, double log_y_scale = 0.0) {
  if (is_point_family(q.family)) {
    return gauss_log_lik(y, forward(q.mean, x), q.mean.noise_std()) - log_y_scale;
  }
  if (m == 0) throw Error("posterior_predictive_ll: m must be >= 1");
  Vector lls(m);
  for (std::size_t i = 0; i < m; ++i) {
    const ParamPoint theta = sample_params(q, rng);
    lls[i] = gauss_log_lik(y, forward(theta, x), theta.noise_std());
  }
  return log_mean_exp(lls) - log_y_scale;
}

// Mean per-point predictive log-likelihood over a dataset.  One set of m
// parameter draws is shared across all points; each point still gets its own
// log-mean-exp.  Results are in original target units when the dataset is
// standardized.
inline double mean_predictive_ll(const VariationalPosterior& q, const Dataset& data,
                                 std::size_t m, RngState rng) {
  if (data.n() == 0) throw EmptyInput("mean_predictive_ll: empty dataset");
  const double log_y_scale = data.scaler ? std::log(data.scaler->y_std) : 0.0;

  if (is_point_family(q.family)) {
    double acc = 0.0;
    for (std::size_t n = 0; n < data.n(); ++n) {
      acc += gauss_log_lik(data.y[n], forward(q.mean, data.row(n)),
                           q.mean.noise_std());
    }
    return acc / static_cast<double>(data.n()) - log_y_scale;
  }

  if (m == 0) throw Error("mean_predictive_ll: m must be >= 1");
  Matrix lls(data.n(), m);
  for (std::size_t i = 0; i < m; ++i) {
    const ParamPoint theta = sample_params(q, rng);
    const double noise = theta.noise_std();
    for (std::size_t n = 0; n < data.n(); ++n) {
      lls(n, i) = gauss_log_lik(data.y[n], forward(theta, data.row(n)), noise);
    }
  }
  double acc = 0.0;
  Vector row(m);
  for (std::size_t n = 0; n < data.n(); ++n) {
    std::copy(lls.row(n), lls.row(n) + m, row.begin());
    acc += log_mean_exp(row);
  }
  return acc / static_cast<double>(data.n()) - log_y_scale;
}

struct PruneThresholds {
  double out_mean_max;     // |mu_vj| below this
  double incoming_kl_max;  // mean incoming-weight KL (nats) below this

  static PruneThresholds defaults(double prior_std) {
    return {0.1 * prior_std, 0.01};
  }
};

struct ActivationHistogram {
  double lo = -1.05;
  double hi = 1.05;
  std::vector<std::size_t> counts = std::vector<std::size_t>(41, 0);

  void add(double value) {
    const double t = (value - lo) / (hi - lo);
    auto bin = static_cast<long>(std::floor(t * static_cast<double>(counts.size())));
    bin = std::clamp<long>(bin, 0, static_cast<long>(counts.size()) - 1);
    ++counts[static_cast<std::size_t>(bin)];
  }
};

struct UnitRecord {
  std::size_t index = 0;
  double out_mean = 0.0;
  double out_std = 0.0;
  double incoming_kl = 0.0;  // nats, averaged over the D+1 incoming parameters
  ActivationHistogram activations;
  bool pruned = false;
};

struct PruningReport {
  PruneThresholds thresholds{0.1, 0.01};
  double prior_std = 1.0;
  std::size_t n_samples = 25;
  std::vector<UnitRecord> units;

  std::size_t pruned_count() const {
    std::size_t c = 0;
    for (const auto& u : units) c += u.pruned ? 1 : 0;
    return c;
  }
};

// Per-hidden-unit over-pruning diagnosis: output-weight marginal statistics,
// mean incoming-weight KL against the prior, and a histogram of sampled
// activations across every training point.
inline PruningReport unit_report(const VariationalPosterior& q, const Prior& prior,
                                 const Dataset& data, std::size_t n_samples,
                                 const PruneThresholds& thresholds, RngState rng) {
  if (!is_variational_family(q.family)) {
    throw FamilyMismatch("unit_report: requires WN, MF, or FC");
  }
  const std::size_t h = q.shape.hidden_units;
  const std::size_t d = q.shape.input_dim;
  const NetParams sig = marginal_sigmas(q);

  PruningReport report;
  report.thresholds = thresholds;
  report.prior_std = prior.std;
  report.n_samples = n_samples;
  report.units.resize(h);

  for (std::size_t j = 0; j < h; ++j) {
    UnitRecord& u = report.units[j];
    u.index = j;
    u.out_mean = q.mean.net.v[j];
    u.out_std = sig.v[j];
    double kl = kl_diag_gauss(q.mean.net.b_w[j], sig.b_w[j], prior.std);
    for (std::size_t i = 0; i < d; ++i) {
      kl += kl_diag_gauss(q.mean.net.w(j, i), sig.w(j, i), prior.std);
    }
    u.incoming_kl = kl / static_cast<double>(d + 1);
    u.pruned = std::abs(u.out_mean) < thresholds.out_mean_max &&
               u.incoming_kl < thresholds.incoming_kl_max;
  }

  for (std::size_t s = 0; s < n_samples; ++s) {
    const ParamPoint theta = sample_params(q, rng);
    for (std::size_t n = 0; n < data.n(); ++n) {
      const Vector act = hidden_activations(theta.net, data.row(n));
      for (std::size_t j = 0; j < h; ++j) report.units[j].activations.add(act[j]);
    }
  }
  return report;
}

// Gradient norm of the expected NLL on unit j's incoming variational
// parameters while q(v_j) is clamped to a zero point mass.  Zero output
// weight severs the unit from the likelihood, so this is identically zero.
inline double collapse_check(const VariationalPosterior& q, const Dataset& data,
                             std::size_t unit, RngState rng,
                             std::size_t n_mc = 4) {
  if (q.family != Family::MF) {
    throw FamilyMismatch("collapse_check: requires MF");
  }
  if (unit >= q.shape.hidden_units) {
    throw UnitOutOfRange("collapse_check: unit index out of range");
  }
  const PosteriorGrads g =
      expected_nll_gradients_clamped(q, data, n_mc, rng, unit);
  double acc = 0.0;
  for (std::size_t i = 0; i < q.shape.input_dim; ++i) {
    acc += g.mean.net.w(unit, i) * g.mean.net.w(unit, i);
    acc += g.rho.w(unit, i) * g.rho.w(unit, i);
  }
  acc += g.mean.net.b_w[unit] * g.mean.net.b_w[unit];
  acc += g.rho.b_w[unit] * g.rho.b_w[unit];
  return std::sqrt(acc);
}

// n_functions posterior draws evaluated on a 1-d input grid, for plotting.
struct FunctionSamples {
  Vector grid;
  Matrix values;  // n_functions x grid.size()
};

inline FunctionSamples sample_functions(const VariationalPosterior& q,
                                        const Vector& x_grid,
                                        std::size_t n_functions, RngState rng) {
  if (q.family == Family::ES) {
    throw FamilyMismatch("sample_functions: ES has no posterior to sample");
  }
  if (q.shape.input_dim != 1) {
    throw DimensionMismatch("sample_functions: requires 1-d inputs");
  }
  FunctionSamples out;
  out.grid = x_grid;
  out.values = Matrix(n_functions, x_grid.size());
  for (std::size_t f = 0; f < n_functions; ++f) {
    const ParamPoint theta = sample_params(q, rng);
    for (std::size_t i = 0; i < x_grid.size(); ++i) {
      out.values(f, i) = forward(theta, {x_grid[i]});
    }
  }
  return out;
}

}  // namespace bnnvi
