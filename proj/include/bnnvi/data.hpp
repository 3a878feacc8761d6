#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bnnvi/errors.hpp"
#include "bnnvi/linalg.hpp"
#include "bnnvi/network.hpp"
#include "bnnvi/rng.hpp"

namespace bnnvi {

// Train-split statistics used to standardize features and target.
struct Scaler {
  Vector x_mean;
  Vector x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
};

struct Dataset {
  Matrix x;  // n x d design matrix
  Vector y;  // n targets
  std::optional<Scaler> scaler;  // present iff standardized

  std::size_t n() const { return x.rows(); }
  std::size_t d() const { return x.cols(); }

  Vector row(std::size_t i) const {
    return Vector(x.row(i), x.row(i) + x.cols());
  }
};

namespace detail {

inline bool parse_double(const std::string& field, double& out) {
  const char* begin = field.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) fields.push_back(cur);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace detail

// Reads a comma-separated numeric table.  An optional single header row is
// detected by a non-numeric first cell and skipped.  The target column is
// removed from the features and becomes y.
inline Dataset load_csv(const std::string& path, std::size_t target_column) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool first_data_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    std::vector<double> values(fields.size());
    bool ok = true;
    std::size_t bad_col = 0;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (!detail::parse_double(fields[c], values[c])) {
        ok = false;
        bad_col = c;
        break;
      }
    }
    if (!ok) {
      if (first_data_line) {  // header row
        first_data_line = false;
        continue;
      }
      throw ParseError("load_csv: non-numeric cell at row " +
                       std::to_string(line_no) + ", column " +
                       std::to_string(bad_col) + " of " + path);
    }
    first_data_line = false;
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ParseError("load_csv: no data rows in " + path);

  const std::size_t n_cols = rows.front().size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != n_cols) {
      throw ParseError("load_csv: ragged row " + std::to_string(r + 1) + " in " +
                       path);
    }
  }
  if (target_column >= n_cols) {
    throw MissingTarget("load_csv: target column " + std::to_string(target_column) +
                        " out of range (file has " + std::to_string(n_cols) +
                        " columns)");
  }

  Dataset ds;
  ds.x = Matrix(rows.size(), n_cols - 1);
  ds.y.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t k = 0;
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (c == target_column) {
        ds.y[r] = rows[r][c];
      } else {
        ds.x(r, k++) = rows[r][c];
      }
    }
  }
  return ds;
}

// Computes train statistics and returns the standardized train set.  Constant
// columns get their std clamped to 1 (with a warning) so the transform stays
// well defined.
inline std::pair<Scaler, Dataset> standardize(const Dataset& train) {
  const std::size_t n = train.n();
  const std::size_t d = train.d();
  Scaler sc;
  sc.x_mean.assign(d, 0.0);
  sc.x_std.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) sc.x_mean[c] += train.x(i, c);
  }
  for (std::size_t c = 0; c < d; ++c) sc.x_mean[c] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = train.x(i, c) - sc.x_mean[c];
      sc.x_std[c] += dv * dv;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    sc.x_std[c] = std::sqrt(sc.x_std[c] / static_cast<double>(n));
    if (!(sc.x_std[c] > 0.0)) {
      std::cerr << "standardize: column " << c
                << " is constant; clamping std to 1\n";
      sc.x_std[c] = 1.0;
    }
  }
  sc.y_mean = mean(train.y);
  sc.y_std = std::sqrt(variance(train.y));
  if (!(sc.y_std > 0.0)) {
    std::cerr << "standardize: target is constant; clamping std to 1\n";
    sc.y_std = 1.0;
  }

  Dataset out = train;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      out.x(i, c) = (train.x(i, c) - sc.x_mean[c]) / sc.x_std[c];
    }
    out.y[i] = (train.y[i] - sc.y_mean) / sc.y_std;
  }
  out.scaler = sc;
  return {sc, out};
}

// Standardizes a dataset with previously computed (train) statistics.
inline Dataset apply_scaler(const Scaler& sc, const Dataset& ds) {
  if (sc.x_mean.size() != ds.d()) {
    throw DimensionMismatch("apply_scaler: scaler dimension mismatch");
  }
  Dataset out = ds;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t c = 0; c < ds.d(); ++c) {
      out.x(i, c) = (ds.x(i, c) - sc.x_mean[c]) / sc.x_std[c];
    }
    out.y[i] = (ds.y[i] - sc.y_mean) / sc.y_std;
  }
  out.scaler = sc;
  return out;
}

// Random train/test partition: train gets ceil(n * (1 - f)) rows.
inline std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction,
                                         std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error("split: test_fraction must be in (0, 1)");
  }
  const std::size_t n = data.n();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  RngState rng(seed);
  for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates
    const std::size_t j = rng.next_u64() % i;
    std::swap(idx[i - 1], idx[j]);
  }
  const auto n_train = static_cast<std::size_t>(
      std::ceil(static_cast<double>(n) * (1.0 - test_fraction)));

  auto take = [&](std::size_t begin, std::size_t end) {
    Dataset out;
    out.x = Matrix(end - begin, data.d());
    out.y.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t r = idx[i];
      for (std::size_t c = 0; c < data.d(); ++c) out.x(i - begin, c) = data.x(r, c);
      out.y[i - begin] = data.y[r];
    }
    out.scaler = data.scaler;
    return out;
  };
  return {take(0, n_train), take(n_train, n)};
}

// Generator for the correctly specified synthetic experiment: a network with
// weights drawn from the prior, inputs uniform on a box, Gaussian noise.
struct TeacherSpec {
  NetworkShape shape{1, 50};
  double prior_std = 1.0;
  std::optional<ParamPoint> true_params;  // sampled from prior when absent
  double noise_std = 0.1;
  double input_low = -4.0;
  double input_high = 4.0;
};

inline ParamPoint sample_prior_params(const NetworkShape& shape, double prior_std,
                                      RngState& rng) {
  ParamPoint p(shape);
  for (auto& w : p.net.w.data()) w = prior_std * rng.next_normal();
  for (auto& b : p.net.b_w) b = prior_std * rng.next_normal();
  for (auto& v : p.net.v) v = prior_std * rng.next_normal();
  p.net.b_v = prior_std * rng.next_normal();
  return p;
}

inline PointGrads point_gradients(const ParamPoint& p, const Dataset& batch,
                                  std::optional<double> map_prior_std = {}) {
  return point_gradients(p, batch.x, batch.y, map_prior_std);
}

inline double point_objective(const ParamPoint& p, const Dataset& batch,
                              std::optional<double> map_prior_std = {}) {
  return point_objective(p, batch.x, batch.y, map_prior_std);
}

inline std::pair<Dataset, ParamPoint> generate_teacher(const TeacherSpec& spec,
                                                       std::size_t n, RngState& rng) {
  if (spec.noise_std < 0.0) throw Error("generate_teacher: negative noise_std");
  if (!(spec.input_low < spec.input_high)) {
    throw Error("generate_teacher: empty input range");
  }
  ParamPoint truth = spec.true_params
                         ? *spec.true_params
                         : sample_prior_params(spec.shape, spec.prior_std, rng);
  truth.log_noise_std =
      spec.noise_std > 0.0 ? std::log(spec.noise_std) : std::log(1e-3);

  Dataset ds;
  ds.x = Matrix(n, spec.shape.input_dim);
  ds.y.resize(n);
  const double span = spec.input_high - spec.input_low;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < spec.shape.input_dim; ++c) {
      ds.x(i, c) = spec.input_low + span * rng.next_uniform();
    }
    ds.y[i] = forward(truth, ds.row(i)) + spec.noise_std * rng.next_normal();
  }
  return {ds, truth};
}

}  // namespace bnnvi
