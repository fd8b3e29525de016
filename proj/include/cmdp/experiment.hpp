#pragma once

#include "cmdp/fa_pd.hpp"
#include "cmdp/io.hpp"
#include "cmdp/sampling.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <thread>
#include <variant>

namespace cmdp {

// ---------------------------------------------------------------------------
// Instances

/// Two-step chain with a reward/utility trade-off at s1, whose feasible policy set is nonconvex.
/// States s1..s5 are indices 0..4, actions a1, a2 are 0, 1; rho is a point mass on s1.
inline Cmdp figure1_cmdp(double gamma, double b) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error("figure1_cmdp: gamma must lie in [0, 1)");
  if (!(b > 0.0)) throw Error("figure1_cmdp: b must be positive");
  Cmdp m = Cmdp::zeros(5, 2, gamma, b);
  auto go = [&](int s, int a, int next, double r, double g) {
    m.transition(m.sa(s, a), next) = 1.0;
    m.reward(s, a) = r;
    m.utility(s, a) = g;
  };
  go(0, 0, 3, 0.0, 1.0);
  go(0, 1, 1, 0.0, 0.0);
  go(1, 0, 4, 1.0, 1.0);
  go(1, 1, 2, 0.0, 0.0);
  for (int s : {2, 3, 4})
    for (int a : {0, 1}) go(s, a, s, 0.0, 0.0);
  m.initial_dist = Vector::Unit(5, 0);
  return m;
}

/// Softmax parameters on figure1 with (theta_{s1,a1}, theta_{s1,a2}, theta_{s2,a1}, theta_{s2,a2})
/// and zeros on the absorbing states.
inline SoftmaxParams figure1_params(double t11, double t12, double t21, double t22) {
  Matrix theta = Matrix::Zero(5, 2);
  theta << t11, t12, t21, t22, 0, 0, 0, 0, 0, 0;
  return {theta};
}

/// Random instance: Dirichlet(1) transition rows, uniform [0,1] channels, uniform rho.
/// The offset interpolates between the smallest and largest achievable V_g(rho), so the
/// instance is strictly feasible with xi = (1 - q)(max V_g - min V_g).
inline Cmdp random_cmdp(std::uint64_t seed, int n_states, int n_actions, double gamma, double b_quantile) {
  if (n_states < 1 || n_actions < 1) throw Error("random_cmdp: sizes must be at least 1");
  if (!(b_quantile > 0.0 && b_quantile < 1.0)) throw Error("random_cmdp: b_quantile must lie in (0, 1)");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error("random_cmdp: gamma must lie in [0, 1)");
  RngStream rng = RngStream::derive(seed, {static_cast<std::uint64_t>(n_states), static_cast<std::uint64_t>(n_actions)});
  Cmdp m = Cmdp::zeros(n_states, n_actions, gamma, 0.0);
  for (int i = 0; i < m.n_pairs(); ++i) {
    double total = 0.0;
    for (int t = 0; t < n_states; ++t) {
      const double e = -std::log1p(-rng.uniform());
      m.transition(i, t) = e;
      total += e;
    }
    if (total > 0.0)
      m.transition.row(i) /= total;
    else
      m.transition.row(i).setConstant(1.0 / n_states);
  }
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) {
      m.reward(s, a) = rng.uniform();
      m.utility(s, a) = rng.uniform();
    }
  const double hi = optimize_occupancy(m, m.utility).objective;
  const double lo = -optimize_occupancy(m, -m.utility).objective;
  m.offset = lo + b_quantile * (hi - lo);
  return m;
}

struct TheoremBounds {
  double gap = 0.0;
  double violation = 0.0;
};

/// Right-hand sides of the averaged gap and violation bounds for exact NPG-PD.
inline TheoremBounds theorem_bounds(double gamma, double xi, int T) {
  if (!(xi > 0.0)) throw Error("theorem_bounds: xi must be positive");
  const double scale = 1.0 / ((1.0 - gamma) * (1.0 - gamma) * std::sqrt(static_cast<double>(T)));
  return {7.0 * scale, (2.0 / xi + 4.0 * xi) * scale};
}

// ---------------------------------------------------------------------------
// Experiment configs

enum class Algorithm { npg_pd, pg_pd, primal, dual, npg_pd_fa, sample_general, sample_loglinear };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::npg_pd: return "npg_pd";
    case Algorithm::pg_pd: return "pg_pd";
    case Algorithm::primal: return "primal";
    case Algorithm::dual: return "dual";
    case Algorithm::npg_pd_fa: return "npg_pd_fa";
    case Algorithm::sample_general: return "sample_general";
    case Algorithm::sample_loglinear: return "sample_loglinear";
  }
  return "?";
}

struct FileInstance {
  std::string path;
};
struct RandomInstance {
  std::uint64_t seed = 0;
  int n_states = 10;
  int n_actions = 5;
  double gamma = 0.9;
  double b_quantile = 0.5;
};
struct Figure1Instance {
  double gamma = 0.9;
  double b = 0.8;
};
using InstanceSource = std::variant<FileInstance, RandomInstance, Figure1Instance>;

struct ExperimentConfig {
  InstanceSource instance = Figure1Instance{};
  Algorithm algorithm = Algorithm::npg_pd;
  int T = 1000;
  std::optional<double> eta1;
  std::optional<double> eta2;
  int K = 100;
  double W = 0.0;        // sampling: 0 selects the default radius; FA: 0 means 1e6
  double sigma_f = 0.0;  // 0 selects the estimate at theta^{(0)}
  double delta = 0.0;
  double eps_b = 0.0;
  std::optional<FeatureMap> features;  // one-hot when absent
  std::vector<std::uint64_t> seeds{0};
  std::string output = "out";
  int eval_every = 1;  // CSV row cadence; the final iterate is always written
};

namespace detail {

template <class T>
T get_as(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
  }
}

inline Algorithm parse_algorithm(const std::string& name) {
  for (auto a : {Algorithm::npg_pd, Algorithm::pg_pd, Algorithm::primal, Algorithm::dual, Algorithm::npg_pd_fa,
                 Algorithm::sample_general, Algorithm::sample_loglinear})
    if (name == to_string(a)) return a;
  throw ConfigError("algorithm: unknown value \"" + name + "\"");
}

}  // namespace detail

/// Parses an experiment document. Unknown keys and out-of-range values are ConfigErrors;
/// relative paths resolve against `base_dir`.
inline ExperimentConfig experiment_from_json(const Json& j, const std::string& base_dir = ".") {
  using detail::get_as;
  detail::reject_unknown(j,
                         {"instance", "algorithm", "T", "eta1", "eta2", "K", "W", "sigma_F", "delta", "eps_b",
                          "features", "seeds", "output", "eval_every"},
                         "config");
  ExperimentConfig c;
  const Json& inst = detail::field(j, "instance");
  const std::string source = get_as<std::string>(inst, "source");
  if (source == "figure1") {
    detail::reject_unknown(inst, {"source", "gamma", "b"}, "instance");
    Figure1Instance f;
    if (inst.contains("gamma")) f.gamma = get_as<double>(inst, "gamma");
    if (inst.contains("b")) f.b = get_as<double>(inst, "b");
    c.instance = f;
  } else if (source == "random") {
    detail::reject_unknown(inst, {"source", "seed", "states", "actions", "gamma", "b_quantile"}, "instance");
    RandomInstance r;
    if (inst.contains("seed")) r.seed = get_as<std::uint64_t>(inst, "seed");
    if (inst.contains("states")) r.n_states = get_as<int>(inst, "states");
    if (inst.contains("actions")) r.n_actions = get_as<int>(inst, "actions");
    if (inst.contains("gamma")) r.gamma = get_as<double>(inst, "gamma");
    if (inst.contains("b_quantile")) r.b_quantile = get_as<double>(inst, "b_quantile");
    c.instance = r;
  } else if (source == "file") {
    detail::reject_unknown(inst, {"source", "path"}, "instance");
    std::filesystem::path p = get_as<std::string>(inst, "path");
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    c.instance = FileInstance{p.string()};
  } else {
    throw ConfigError("instance.source: expected file, random or figure1");
  }

  c.algorithm = detail::parse_algorithm(get_as<std::string>(j, "algorithm"));
  c.T = get_as<int>(j, "T");
  if (c.T < 1) throw ConfigError("T: must be at least 1");
  if (j.contains("eta1")) c.eta1 = get_as<double>(j, "eta1");
  if (j.contains("eta2")) c.eta2 = get_as<double>(j, "eta2");
  if ((c.eta1 && *c.eta1 < 0.0) || (c.eta2 && *c.eta2 < 0.0)) throw ConfigError("stepsizes must be non-negative");
  if (j.contains("K")) c.K = get_as<int>(j, "K");
  if (c.K < 1) throw ConfigError("K: must be at least 1");
  if (j.contains("W")) c.W = get_as<double>(j, "W");
  if (j.contains("sigma_F")) c.sigma_f = get_as<double>(j, "sigma_F");
  if (c.W < 0.0 || c.sigma_f < 0.0) throw ConfigError("W and sigma_F must be non-negative");
  if (j.contains("delta")) c.delta = get_as<double>(j, "delta");
  if (j.contains("eps_b")) c.eps_b = get_as<double>(j, "eps_b");
  if (c.delta < 0.0 || c.eps_b < 0.0) throw ConfigError("delta and eps_b must be non-negative");
  if (c.delta > 0.0 && c.algorithm != Algorithm::npg_pd && c.algorithm != Algorithm::pg_pd)
    throw ConfigError("delta: only the exact primal-dual methods support a conservative offset");
  if (j.contains("features")) {
    const Json& f = j["features"];
    if (f.is_string()) {
      if (f.get<std::string>() != "one_hot") throw ConfigError("features: expected \"one_hot\" or a feature map");
    } else {
      detail::reject_unknown(f, {"d", "B", "phi"}, "features");
      c.features = feature_map_from_json(f);
    }
  }
  if (j.contains("seeds")) c.seeds = get_as<std::vector<std::uint64_t>>(j, "seeds");
  if (c.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (j.contains("output")) c.output = get_as<std::string>(j, "output");
  if (std::filesystem::path(c.output).is_relative())
    c.output = (std::filesystem::path(base_dir) / c.output).lexically_normal().string();
  if (j.contains("eval_every")) c.eval_every = get_as<int>(j, "eval_every");
  if (c.eval_every < 1) throw ConfigError("eval_every: must be at least 1");
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  auto in = detail::open_in(path);
  return experiment_from_json(detail::parse_text(in, path), std::filesystem::path(path).parent_path().string());
}

inline Cmdp resolve_instance(const InstanceSource& src) {
  try {
    if (auto* f = std::get_if<FileInstance>(&src)) return load_cmdp(f->path);
    if (auto* r = std::get_if<RandomInstance>(&src))
      return random_cmdp(r->seed, r->n_states, r->n_actions, r->gamma, r->b_quantile);
    const auto& f1 = std::get<Figure1Instance>(src);
    return figure1_cmdp(f1.gamma, f1.b);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Running

struct SeedResult {
  std::uint64_t seed = 0;
  std::string csv_path;
  double gap = 0.0;
  double violation = 0.0;
  bool pass_gap = false;
  bool pass_violation = false;
  std::string error;
};

struct ExperimentResult {
  std::vector<SeedResult> seeds;
  LpSolution oracle;
  TheoremBounds bounds;
  std::string summary_path;
  bool pass = false;
};

/// Runs one seed and returns its iterate log.
inline IterateLog run_single(const Cmdp& m, const ExperimentConfig& c, const LpSolution& oracle, std::uint64_t seed) {
  const FeatureMap features = c.features.value_or(FeatureMap::one_hot(m.n_states, m.n_actions));
  if (features.n_states != m.n_states || features.n_actions != m.n_actions)
    throw ConfigError("features: shape does not match the instance");
  switch (c.algorithm) {
    case Algorithm::npg_pd:
    case Algorithm::pg_pd:
    case Algorithm::primal:
    case Algorithm::dual: {
      SolverConfig sc;
      sc.T = c.T;
      sc.eta1 = c.eta1;
      sc.eta2 = c.eta2;
      sc.eps_b = c.eps_b;
      sc.delta = c.delta;
      const auto algo = c.algorithm == Algorithm::npg_pd  ? ExactAlgorithm::npg_pd
                        : c.algorithm == Algorithm::pg_pd ? ExactAlgorithm::pg_pd
                        : c.algorithm == Algorithm::primal ? ExactAlgorithm::primal
                                                           : ExactAlgorithm::dual;
      return run_solver(m, algo, sc).log;
    }
    case Algorithm::npg_pd_fa: {
      FaRunConfig fc;
      fc.T = c.T;
      fc.eta1 = c.eta1;
      fc.eta2 = c.eta2;
      if (c.W > 0.0) fc.radius = c.W;
      fc.diagnostics_every = c.eval_every;
      return run_fa(m, LogLinearClass(features), fc).log;
    }
    case Algorithm::sample_general:
    case Algorithm::sample_loglinear: {
      SampleConfig sc;
      sc.T = c.T;
      sc.K = c.K;
      sc.radius = c.W;
      sc.sigma_f = c.sigma_f;
      sc.eta1 = c.eta1;
      sc.eta2 = c.eta2;
      const auto mode = c.algorithm == Algorithm::sample_general ? SampleMode::general : SampleMode::loglinear;
      return sample_npgpd(m, LogLinearClass(features), mode, sc, seed, &oracle).log;
    }
  }
  throw ConfigError("unknown algorithm");
}

/// Writes the rows of `log` at the configured cadence, always including the final iterate.
inline void write_csv_every(std::ostream& os, const IterateLog& log, int every) {
  if (every <= 1) return write_csv(os, log);
  IterateLog thinned = log;
  auto& rows = thinned.records();
  std::vector<IterateRecord> kept;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (i % every == 0 || i + 1 == rows.size()) kept.push_back(rows[i]);
  rows = std::move(kept);
  write_csv(os, thinned);
}

inline int worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CMDP_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<unsigned>(v);
  }
  return static_cast<int>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

/// Resolves the instance, computes the oracle, runs every seed and writes
/// `<output>/seed_<k>.csv` plus `<output>/summary.json`.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  ExperimentResult res;
  const Cmdp m = resolve_instance(c.instance);
  res.oracle = solve_lp(m);
  if (res.oracle.status != LpStatus::optimal) throw ConfigError("instance is infeasible");
  res.bounds = theorem_bounds(m.discount, res.oracle.slater_slack, c.T);

  std::filesystem::create_directories(c.output);
  res.seeds.resize(c.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < c.seeds.size(); i = next++) {
      SeedResult& out = res.seeds[i];
      out.seed = c.seeds[i];
      out.csv_path = (std::filesystem::path(c.output) / ("seed_" + std::to_string(out.seed) + ".csv")).string();
      try {
        IterateLog log = run_single(m, c, res.oracle, out.seed);
        std::ofstream f(out.csv_path);
        if (!f) throw Error("cannot write " + out.csv_path);
        write_csv_every(f, log, c.eval_every);
        out.gap = log.back().gap;
        out.violation = log.back().violation;
        out.pass_gap = out.gap <= res.bounds.gap;
        out.pass_violation = out.violation <= res.bounds.violation;
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    }
  };
  const int n = worker_count(c.seeds.size());
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  res.pass = true;
  Json summary;
  summary["algorithm"] = to_string(c.algorithm);
  summary["T"] = c.T;
  summary["oracle"] = lp_solution_json(res.oracle);
  summary["bounds"] = {{"gap", res.bounds.gap}, {"violation", res.bounds.violation}};
  summary["runs"] = Json::array();
  for (const auto& s : res.seeds) {
    Json r = {{"seed", s.seed}, {"csv", s.csv_path}};
    if (s.error.empty()) {
      r["gap"] = s.gap;
      r["violation"] = s.violation;
      r["pass_gap"] = s.pass_gap;
      r["pass_violation"] = s.pass_violation;
    } else {
      r["error"] = s.error;
    }
    res.pass = res.pass && s.error.empty() && s.pass_gap && s.pass_violation;
    summary["runs"].push_back(std::move(r));
  }
  summary["pass"] = res.pass;
  res.summary_path = (std::filesystem::path(c.output) / "summary.json").string();
  std::ofstream(res.summary_path) << summary.dump(2) << '\n';
  return res;
}

}  // namespace cmdp
