#pragma once

#include "cmdp/exact_pd.hpp"
#include "cmdp/policies.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace cmdp {

using Json = nlohmann::json;

/// Malformed instance, feature or experiment documents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// IEEE-754 double with 17 significant digits, so that parsing it back is exact.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

template <class Fn>
void write_list(std::ostream& os, int n, Fn&& item) {
  os << '[';
  for (int i = 0; i < n; ++i) {
    if (i) os << ',';
    item(i);
  }
  os << ']';
}

inline const Json& field(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(std::string("missing key \"") + key + "\"");
  return *it;
}

inline double number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  return j.get<double>();
}

inline int positive_int(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_number_integer() || v.get<long long>() < 1) throw ConfigError(std::string(key) + ": expected a positive integer");
  return v.get<int>();
}

inline const Json& sized_array(const Json& j, std::size_t n, const std::string& where) {
  if (!j.is_array() || j.size() != n)
    throw ConfigError(where + ": expected an array of length " + std::to_string(n));
  return j;
}

inline Json parse_text(std::istream& is, const std::string& what) {
  try {
    return Json::parse(is);
  } catch (const Json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cmdp documents

inline void write_cmdp_json(std::ostream& os, const Cmdp& m) {
  using detail::write_list;
  const int S = m.n_states, A = m.n_actions;
  os << "{\"n_states\":" << S << ",\"n_actions\":" << A << ",\"P\":";
  write_list(os, S, [&](int s) {
    write_list(os, A, [&](int a) {
      write_list(os, S, [&](int t) { os << format_double(m.transition(m.sa(s, a), t)); });
    });
  });
  auto table = [&](const Matrix& x) {
    write_list(os, S, [&](int s) { write_list(os, A, [&](int a) { os << format_double(x(s, a)); }); });
  };
  os << ",\"r\":";
  table(m.reward);
  os << ",\"g\":";
  table(m.utility);
  os << ",\"b\":" << format_double(m.offset) << ",\"gamma\":" << format_double(m.discount) << ",\"rho\":";
  write_list(os, S, [&](int s) { os << format_double(m.initial_dist(s)); });
  os << "}\n";
}

inline std::string cmdp_to_json(const Cmdp& m) {
  std::ostringstream os;
  write_cmdp_json(os, m);
  return os.str();
}

/// Parses and validates an instance; every structural or numeric problem is a ConfigError.
inline Cmdp cmdp_from_json(const Json& j) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("instance: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"n_states", "n_actions", "P", "r", "g", "b", "gamma", "rho"};
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known))
      throw ConfigError("instance: unknown key \"" + it.key() + "\"");
  }
  const int S = positive_int(j, "n_states");
  const int A = positive_int(j, "n_actions");
  Cmdp m = Cmdp::zeros(S, A, number(field(j, "gamma"), "gamma"), number(field(j, "b"), "b"));
  const Json& P = sized_array(field(j, "P"), S, "P");
  const Json& r = sized_array(field(j, "r"), S, "r");
  const Json& g = sized_array(field(j, "g"), S, "g");
  const Json& rho = sized_array(field(j, "rho"), S, "rho");
  for (int s = 0; s < S; ++s) {
    const std::string ps = "P[" + std::to_string(s) + "]";
    sized_array(P[s], A, ps);
    sized_array(r[s], A, "r[" + std::to_string(s) + "]");
    sized_array(g[s], A, "g[" + std::to_string(s) + "]");
    for (int a = 0; a < A; ++a) {
      const std::string pa = ps + "[" + std::to_string(a) + "]";
      sized_array(P[s][a], S, pa);
      for (int t = 0; t < S; ++t) m.transition(m.sa(s, a), t) = number(P[s][a][t], pa);
      m.reward(s, a) = number(r[s][a], "r");
      m.utility(s, a) = number(g[s][a], "g");
    }
    m.initial_dist(s) = number(rho[s], "rho");
  }
  auto problems = validate(m);
  if (!problems.empty()) {
    std::string msg = "instance invalid:";
    for (const auto& v : problems) msg += " " + v.what + ";";
    throw ConfigError(msg);
  }
  return m;
}

inline Cmdp cmdp_from_string(const std::string& text) {
  std::istringstream is(text);
  return cmdp_from_json(detail::parse_text(is, "instance"));
}

inline Cmdp load_cmdp(const std::string& path) {
  auto in = detail::open_in(path);
  return cmdp_from_json(detail::parse_text(in, path));
}

inline void save_cmdp(const std::string& path, const Cmdp& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_cmdp_json(out, m);
}

// ---------------------------------------------------------------------------
// Feature maps

inline std::string feature_map_to_json(const FeatureMap& f) {
  std::ostringstream os;
  os << "{\"d\":" << f.dim() << ",\"B\":" << format_double(f.bound) << ",\"phi\":";
  detail::write_list(os, f.n_states, [&](int s) {
    detail::write_list(os, f.n_actions, [&](int a) {
      detail::write_list(os, f.dim(), [&](int k) { os << format_double(f.phi(s * f.n_actions + a, k)); });
    });
  });
  os << "}\n";
  return os.str();
}

inline FeatureMap feature_map_from_json(const Json& j) {
  using namespace detail;
  const int d = positive_int(j, "d");
  const Json& phi = field(j, "phi");
  if (!phi.is_array() || phi.empty() || !phi[0].is_array() || phi[0].empty())
    throw ConfigError("phi: expected a [state][action][component] array");
  const int S = static_cast<int>(phi.size());
  const int A = static_cast<int>(phi[0].size());
  FeatureMap f;
  f.n_states = S;
  f.n_actions = A;
  f.phi = Matrix(S * A, d);
  for (int s = 0; s < S; ++s) {
    sized_array(phi[s], A, "phi[" + std::to_string(s) + "]");
    for (int a = 0; a < A; ++a) {
      sized_array(phi[s][a], d, "phi[s][a]");
      for (int k = 0; k < d; ++k) f.phi(s * A + a, k) = number(phi[s][a][k], "phi");
    }
  }
  double max_norm = 0.0;
  for (int i = 0; i < f.phi.rows(); ++i) max_norm = std::max(max_norm, f.phi.row(i).norm());
  f.bound = j.contains("B") ? number(j["B"], "B") : max_norm;
  if (max_norm > f.bound * (1.0 + 1e-12)) throw ConfigError("phi: a feature norm exceeds B");
  return f;
}

// ---------------------------------------------------------------------------
// Oracle output

inline Json matrix_json(const Matrix& x) {
  Json out = Json::array();
  for (int i = 0; i < x.rows(); ++i) {
    Json row = Json::array();
    for (int k = 0; k < x.cols(); ++k) row.push_back(x(i, k));
    out.push_back(std::move(row));
  }
  return out;
}

inline Json lp_solution_json(const LpSolution& sol) {
  Json j;
  j["status"] = to_string(sol.status);
  j["max_utility"] = sol.max_utility;
  j["xi"] = sol.slater_slack;
  if (sol.status == LpStatus::optimal) {
    j["v_r_star"] = sol.v_r_star;
    j["lambda_star"] = sol.lambda_star;
    j["q_star"] = matrix_json(sol.q_star.q);
    j["optimal_policy"] = matrix_json(sol.optimal_policy.prob);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Iterate logs

inline std::string csv_header(const IterateLog& log) {
  std::string h = "t,v_r,v_g,lambda,avg_v_r,avg_v_g,gap,violation";
  if (log.fa_columns) h += ",eps_bias_r,eps_bias_g,kappa";
  if (log.sample_columns) h += ",K,rollout_steps_total,seed";
  return h;
}

inline void write_csv(std::ostream& os, const IterateLog& log) {
  os << csv_header(log) << '\n';
  for (const auto& r : log.records()) {
    os << r.t;
    for (double v : {r.v_r, r.v_g, r.lambda, r.avg_v_r, r.avg_v_g, r.gap, r.violation}) os << ',' << format_double(v);
    if (log.fa_columns)
      for (double v : {r.eps_bias_r, r.eps_bias_g, r.kappa}) os << ',' << format_double(v);
    if (log.sample_columns) os << ',' << log.sample_k << ',' << r.rollout_steps_total << ',' << log.seed;
    os << '\n';
  }
}

/// A parsed numeric CSV with a header line.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw Error("csv: no column " + name);
  }
};

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(is, line)) throw Error("csv: empty input");
  t.header = split(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split(line)) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() != t.header.size()) throw Error("csv: ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace cmdp
