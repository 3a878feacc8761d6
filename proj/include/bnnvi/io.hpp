#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bnnvi/data.hpp"
#include "bnnvi/diagnostics.hpp"
#include "bnnvi/errors.hpp"
#include "bnnvi/posterior.hpp"
#include "bnnvi/training.hpp"

namespace bnnvi {

using json = nlohmann::json;

// Fixed-format double for CSV output; %.17g round-trips exactly, which keeps
// repeated runs byte-identical.
inline std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- training trace ----

inline std::string trace_to_csv(const TrainingTrace& trace) {
  std::string out = "iter,kl,expected_nll,vfe,train_pred_nll,test_pred_nll\n";
  for (const auto& r : trace) {
    out += std::to_string(r.iter) + ',' + fmt_double(r.kl) + ',' +
           fmt_double(r.expected_nll) + ',' + fmt_double(r.vfe_total) + ',' +
           fmt_double(r.train_pred_nll) + ',' + fmt_double(r.test_pred_nll) + '\n';
  }
  return out;
}

inline void save_trace_csv(const std::string& path, const TrainingTrace& trace) {
  write_text_file(path, trace_to_csv(trace));
}

// ---- posterior snapshots ----

namespace detail {

inline json net_to_json(const NetParams& p) {
  return json{{"w", p.w.data()}, {"b_w", p.b_w}, {"v", p.v}, {"b_v", p.b_v}};
}

inline void net_from_json(const json& j, NetParams& p) {
  const auto w = j.at("w").get<Vector>();
  if (w.size() != p.w.size()) throw ParseError("posterior json: W size mismatch");
  p.w.data() = w;
  p.b_w = j.at("b_w").get<Vector>();
  p.v = j.at("v").get<Vector>();
  p.b_v = j.at("b_v").get<double>();
  if (p.b_w.size() != p.w.rows() || p.v.size() != p.w.rows()) {
    throw ParseError("posterior json: bias/output size mismatch");
  }
}

inline Vector tril_to_flat(const Matrix& l) {
  Vector out;
  out.reserve(l.rows() * (l.rows() + 1) / 2);
  for (std::size_t i = 0; i < l.rows(); ++i) {
    for (std::size_t j = 0; j <= i; ++j) out.push_back(l(i, j));
  }
  return out;
}

inline Matrix tril_from_flat(const Vector& flat, std::size_t k) {
  if (flat.size() != k * (k + 1) / 2) {
    throw ParseError("posterior json: triangular factor size mismatch");
  }
  Matrix l(k, k);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) l(i, j) = flat[pos++];
  }
  return l;
}

}  // namespace detail

struct PosteriorSnapshot {
  VariationalPosterior posterior;
  Prior prior;
  std::optional<Scaler> scaler;
  std::optional<std::size_t> target_column;
};

inline json snapshot_to_json(const PosteriorSnapshot& snap) {
  const auto& q = snap.posterior;
  json j;
  j["format"] = "bnnvi-posterior-v1";
  j["family"] = family_name(q.family);
  j["shape"] = {{"input_dim", q.shape.input_dim},
                {"hidden_units", q.shape.hidden_units}};
  j["prior_std"] = snap.prior.std;
  json params;
  params["mean"] = detail::net_to_json(q.mean.net);
  params["log_noise_std"] = q.mean.log_noise_std;
  if (q.family == Family::MF) params["rho"] = detail::net_to_json(q.rho);
  if (q.family == Family::WN) {
    params["wn_weight_std"] = q.wn_weight_std;
    params["wn_bias_std"] = q.wn_bias_std;
  }
  if (q.family == Family::FC) {
    params["l_in_tril"] = detail::tril_to_flat(q.l_in);
    params["l_out_tril"] = detail::tril_to_flat(q.l_out);
  }
  j["params"] = params;
  if (snap.scaler) {
    j["scaler"] = {{"x_mean", snap.scaler->x_mean},
                   {"x_std", snap.scaler->x_std},
                   {"y_mean", snap.scaler->y_mean},
                   {"y_std", snap.scaler->y_std}};
  }
  if (snap.target_column) j["target_column"] = *snap.target_column;
  return j;
}

inline PosteriorSnapshot snapshot_from_json(const json& j) {
  PosteriorSnapshot snap;
  auto& q = snap.posterior;
  q.family = family_from_name(j.at("family").get<std::string>());
  q.shape.input_dim = j.at("shape").at("input_dim").get<std::size_t>();
  q.shape.hidden_units = j.at("shape").at("hidden_units").get<std::size_t>();
  snap.prior.std = j.at("prior_std").get<double>();

  const json& params = j.at("params");
  q.mean = ParamPoint(q.shape);
  detail::net_from_json(params.at("mean"), q.mean.net);
  q.mean.log_noise_std = params.at("log_noise_std").get<double>();
  if (q.family == Family::MF) {
    q.rho = NetParams(q.shape);
    detail::net_from_json(params.at("rho"), q.rho);
  }
  if (q.family == Family::WN) {
    q.wn_weight_std = params.at("wn_weight_std").get<double>();
    q.wn_bias_std = params.at("wn_bias_std").get<double>();
  }
  if (q.family == Family::FC) {
    q.l_in = detail::tril_from_flat(params.at("l_in_tril").get<Vector>(),
                                    q.input_block_dim());
    q.l_out = detail::tril_from_flat(params.at("l_out_tril").get<Vector>(),
                                     q.output_block_dim());
  }
  if (j.contains("scaler")) {
    Scaler sc;
    sc.x_mean = j.at("scaler").at("x_mean").get<Vector>();
    sc.x_std = j.at("scaler").at("x_std").get<Vector>();
    sc.y_mean = j.at("scaler").at("y_mean").get<double>();
    sc.y_std = j.at("scaler").at("y_std").get<double>();
    snap.scaler = sc;
  }
  if (j.contains("target_column")) {
    snap.target_column = j.at("target_column").get<std::size_t>();
  }
  return snap;
}

inline void save_posterior(const std::string& path, const PosteriorSnapshot& snap) {
  write_text_file(path, snapshot_to_json(snap).dump(2) + "\n");
}

inline PosteriorSnapshot load_posterior(const std::string& path) {
  return snapshot_from_json(json::parse(read_text_file(path)));
}

// ---- pruning report ----

inline json pruning_report_to_json(const PruningReport& report) {
  json j;
  j["prior_std"] = report.prior_std;
  j["thresholds"] = {{"out_mean_max", report.thresholds.out_mean_max},
                     {"incoming_kl_max", report.thresholds.incoming_kl_max}};
  j["n_samples"] = report.n_samples;
  j["pruned_count"] = report.pruned_count();
  if (!report.units.empty()) {
    j["histogram"] = {{"lo", report.units.front().activations.lo},
                      {"hi", report.units.front().activations.hi},
                      {"bins", report.units.front().activations.counts.size()}};
  }
  json units = json::array();
  for (const auto& u : report.units) {
    units.push_back({{"index", u.index},
                     {"out_mean", u.out_mean},
                     {"out_std", u.out_std},
                     {"incoming_kl", u.incoming_kl},
                     {"pruned", u.pruned},
                     {"activation_counts", u.activations.counts}});
  }
  j["units"] = units;
  return j;
}

inline void save_pruning_report(const std::string& path,
                                const PruningReport& report) {
  write_text_file(path, pruning_report_to_json(report).dump(2) + "\n");
}

// ---- function samples ----

inline std::string function_samples_to_csv(const FunctionSamples& fs) {
  std::string out = "x";
  for (std::size_t f = 0; f < fs.values.rows(); ++f) {
    out += ",f" + std::to_string(f);
  }
  out += '\n';
  for (std::size_t i = 0; i < fs.grid.size(); ++i) {
    out += fmt_double(fs.grid[i]);
    for (std::size_t f = 0; f < fs.values.rows(); ++f) {
      out += ',' + fmt_double(fs.values(f, i));
    }
    out += '\n';
  }
  return out;
}

inline void save_function_samples(const std::string& path,
                                  const FunctionSamples& fs) {
  write_text_file(path, function_samples_to_csv(fs));
}

// ---- dataset output (synthetic runs) ----

inline std::string dataset_to_csv(const Dataset& ds) {
  std::string out;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t c = 0; c < ds.d(); ++c) {
      out += fmt_double(ds.x(i, c)) + ',';
    }
    out += fmt_double(ds.y[i]) + '\n';
  }
  return out;
}

inline json teacher_to_json(const TeacherSpec& spec, const ParamPoint& truth,
                            std::size_t n) {
  json j;
  j["shape"] = {{"input_dim", spec.shape.input_dim},
                {"hidden_units", spec.shape.hidden_units}};
  j["prior_std"] = spec.prior_std;
  j["noise_std"] = spec.noise_std;
  j["input_low"] = spec.input_low;
  j["input_high"] = spec.input_high;
  j["n"] = n;
  j["true_params"] = detail::net_to_json(truth.net);
  j["true_log_noise_std"] = truth.log_noise_std;
  return j;
}

}  // namespace bnnvi
