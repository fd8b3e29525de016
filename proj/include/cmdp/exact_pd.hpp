#pragma once

#include "cmdp/occupancy_lp.hpp"
#include "cmdp/policies.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cmdp {

/// Upper end of the dual interval, factor / ((1-gamma) xi). The default factor 2 gives
/// Lambda = [0, 2/((1-gamma) xi)]; conservative runs use 4.
inline double dual_cap(double discount, double xi, double factor = 2.0) {
  if (!(xi > 0.0)) throw Error("dual_cap: Slater slack must be positive");
  return factor / ((1.0 - discount) * xi);
}

inline double project_dual(double lambda, double cap) { return std::clamp(lambda, 0.0, cap); }

/// Primal-dual iterate. `Primal` is SoftmaxParams for NPG-PD and DirectParams for PG-PD.
template <class Primal>
struct PdState {
  Primal primal;
  double lambda = 0.0;
  int t = 0;
  double eta1 = 0.0;
  double eta2 = 0.0;
  double xi = 0.0;
  double lambda_cap = 0.0;
};

/// Quantities computed inside one NPG-PD step, before the update is applied.
struct NpgStepTrace {
  ValueBundle values;
  Vector log_z;  // log Z^{(t)}(s)
  double v_r = 0.0;
  double v_g = 0.0;
};

// ---------------------------------------------------------------------------
// One-step updates

/// log sum_a pi(a|s) exp(x(s,a)) per state, skipping zero-probability actions.
inline Vector log_partition(const TabularPolicy& pi, const Matrix& x) {
  Vector out(x.rows());
  for (int s = 0; s < x.rows(); ++s) {
    double top = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < x.cols(); ++a)
      if (pi(s, a) > 0.0) top = std::max(top, x(s, a));
    double acc = 0.0;
    for (int a = 0; a < x.cols(); ++a)
      if (pi(s, a) > 0.0) acc += pi(s, a) * std::exp(x(s, a) - top);
    out(s) = top + std::log(acc);
  }
  return out;
}

/// Subtracts each state's mean logit; leaves the softmax policy unchanged.
inline void recenter(SoftmaxParams& params) {
  params.theta = params.theta.colwise() - params.theta.rowwise().mean();
}

inline double dual_update(const Cmdp& m, double lambda, double eta2, double v_g, double cap) {
  return project_dual(lambda - eta2 * (v_g - m.offset), cap);
}

/// NPG-PD under softmax in closed form:
///   theta += eta1/(1-gamma) * (A_r + lambda A_g),  lambda <- P_Lambda(lambda - eta2 (V_g(rho) - b)).
/// The induced policy follows the multiplicative weights update pi' = pi exp(eta1 A_L/(1-gamma)) / Z.
inline PdState<SoftmaxParams> npgpd_step(const Cmdp& m, const PdState<SoftmaxParams>& state,
                                         NpgStepTrace* trace = nullptr) {
  TabularPolicy pi = softmax_policy(state.primal);
  ValueBundle vals = evaluate_policy(m, pi);
  const double v_g = vals.at(Channel::utility, m.initial_dist);
  const double step = state.eta1 / (1.0 - m.discount);
  Matrix exponent = step * (vals.adv_r + state.lambda * vals.adv_g);

  PdState<SoftmaxParams> next = state;
  next.primal.theta += exponent;
  next.lambda = dual_update(m, state.lambda, state.eta2, v_g, state.lambda_cap);
  next.t = state.t + 1;
  if (next.t % 100 == 0) recenter(next.primal);

  if (trace) {
    trace->log_z = log_partition(pi, exponent);
    trace->v_r = vals.at(Channel::reward, m.initial_dist);
    trace->v_g = v_g;
    trace->values = std::move(vals);
  }
  return next;
}

/// Same primal step computed through the Fisher pseudo-inverse: theta += eta1 F^dagger grad V_L.
/// Exists as an independent cross-check of the closed form.
inline SoftmaxParams npg_fisher_primal_step(const Cmdp& m, const SoftmaxParams& params, double lambda, double eta1) {
  SoftmaxClass cls(m.n_states, m.n_actions);
  Vector theta = cls.flatten(params.theta);
  theta += eta1 * natural_gradient(m, cls, theta, lambda);
  return {cls.logits(theta)};
}

/// PG-PD under direct parametrization: per-state projected gradient ascent, projected dual descent.
inline PdState<DirectParams> pgpd_step(const Cmdp& m, const PdState<DirectParams>& state) {
  TabularPolicy pi = direct_policy(state.primal);
  const double v_g = evaluate_policy(m, pi).at(Channel::utility, m.initial_dist);
  Matrix ascent = state.primal.theta + state.eta1 * policy_gradient(m, state.primal, state.lambda);

  PdState<DirectParams> next = state;
  for (int s = 0; s < m.n_states; ++s) next.primal.theta.row(s) = project_simplex(ascent.row(s).transpose()).transpose();
  next.lambda = dual_update(m, state.lambda, state.eta2, v_g, state.lambda_cap);
  next.t = state.t + 1;
  return next;
}

/// Feasibility-switching primal method: follow A_r/(1-gamma) while V_g(rho) >= b - eps_b,
/// otherwise follow A_g/(1-gamma) to regain feasibility.
inline SoftmaxParams primal_feasibility_step(const Cmdp& m, const SoftmaxParams& params, double eta, double eps_b) {
  if (eps_b < 0.0) throw Error("primal_feasibility_step: eps_b must be non-negative");
  ValueBundle vals = evaluate_policy(m, softmax_policy(params));
  const bool feasible = vals.at(Channel::utility, m.initial_dist) >= m.offset - eps_b;
  const Matrix& adv = feasible ? vals.adv_r : vals.adv_g;
  return {params.theta + eta * adv / (1.0 - m.discount)};
}

// ---------------------------------------------------------------------------
// Dual descent baseline

struct DualDescentResult {
  std::vector<double> lambda;      // lambda^{(0..T)}
  std::vector<double> dual_value;  // V_D at lambda^{(0..T-1)}
  std::vector<double> v_r, v_g;    // values of the scalarized maximizers
  std::optional<TabularPolicy> best_feasible;
  double best_feasible_value = -std::numeric_limits<double>::infinity();
};

/// Projected dual subgradient descent with subgradient V_g^{pi_lambda}(rho) - b.
inline DualDescentResult dual_descent(const Cmdp& m, double eta, int T, double lambda0 = 0.0, double vi_tol = 1e-10) {
  if (!(eta > 0.0)) throw Error("dual_descent: eta must be positive");
  DualDescentResult out;
  double lambda = std::max(0.0, lambda0);
  out.lambda.push_back(lambda);
  for (int t = 0; t < T; ++t) {
    auto sol = value_iteration_scalarized(m, lambda, vi_tol);
    auto vals = evaluate_policy(m, sol.policy);
    const double vr = vals.at(Channel::reward, m.initial_dist);
    const double vg = vals.at(Channel::utility, m.initial_dist);
    out.dual_value.push_back(sol.dual_value);
    out.v_r.push_back(vr);
    out.v_g.push_back(vg);
    if (vg >= m.offset && vr > out.best_feasible_value) {
      out.best_feasible_value = vr;
      out.best_feasible = sol.policy;
    }
    lambda = std::max(0.0, lambda - eta * (vg - m.offset));
    out.lambda.push_back(lambda);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Conservative constraint

/// Problem with the tightened offset b + delta and the widened dual cap 4/((1-gamma) xi).
struct ConservativeProblem {
  Cmdp cmdp;
  double delta = 0.0;
  double lambda_cap = 0.0;
};

inline ConservativeProblem conservative_wrap(const Cmdp& m, double delta, double xi) {
  if (delta < 0.0) throw Error("conservative_wrap: delta must be non-negative");
  if (!(delta < xi / 2.0)) throw Error("conservative_wrap: delta must be below xi/2");
  ConservativeProblem out{m, delta, dual_cap(m.discount, xi, 4.0)};
  out.cmdp.offset = m.offset + delta;
  return out;
}

// ---------------------------------------------------------------------------
// Iterate logs

struct IterateRecord {
  int t = 0;
  double v_r = 0.0;
  double v_g = 0.0;
  double lambda = 0.0;
  double avg_v_r = 0.0;
  double avg_v_g = 0.0;
  double gap = 0.0;        // v_r_star - avg_v_r
  double violation = 0.0;  // [b - avg_v_g]_+
  double iterate_violation = 0.0;
  // NPG-PD only.
  double log_z_min = std::numeric_limits<double>::quiet_NaN();
  // Function approximation diagnostics.
  double eps_bias_r = std::numeric_limits<double>::quiet_NaN();
  double eps_bias_g = std::numeric_limits<double>::quiet_NaN();
  double kappa = std::numeric_limits<double>::quiet_NaN();
  // Sample-based runs.
  long long rollout_steps_total = 0;
};

/// Per-iterate trace with running averages against a fixed reference (V_r^*, b).
class IterateLog {
 public:
  IterateLog() = default;
  IterateLog(double v_r_star, double offset) : v_r_star_(v_r_star), offset_(offset) {}

  IterateRecord& push(double v_r, double v_g, double lambda) {
    IterateRecord rec;
    rec.t = static_cast<int>(records_.size());
    rec.v_r = v_r;
    rec.v_g = v_g;
    rec.lambda = lambda;
    sum_r_ += v_r;
    sum_g_ += v_g;
    const double n = static_cast<double>(records_.size() + 1);
    rec.avg_v_r = sum_r_ / n;
    rec.avg_v_g = sum_g_ / n;
    rec.gap = v_r_star_ - rec.avg_v_r;
    rec.violation = std::max(0.0, offset_ - rec.avg_v_g);
    rec.iterate_violation = std::max(0.0, offset_ - v_g);
    records_.push_back(rec);
    return records_.back();
  }

  const std::vector<IterateRecord>& records() const { return records_; }
  std::vector<IterateRecord>& records() { return records_; }
  bool empty() const { return records_.empty(); }
  const IterateRecord& back() const { return records_.back(); }
  double v_r_star() const { return v_r_star_; }
  double offset() const { return offset_; }

  // Extra CSV column groups.
  bool fa_columns = false;
  bool sample_columns = false;
  int sample_k = 0;
  unsigned long long seed = 0;

 private:
  std::vector<IterateRecord> records_;
  double v_r_star_ = 0.0;
  double offset_ = 0.0;
  double sum_r_ = 0.0;
  double sum_g_ = 0.0;
};

// ---------------------------------------------------------------------------
// Solver driver

enum class ExactAlgorithm { npg_pd, pg_pd, primal, dual };

inline const char* to_string(ExactAlgorithm a) {
  switch (a) {
    case ExactAlgorithm::npg_pd: return "npg_pd";
    case ExactAlgorithm::pg_pd: return "pg_pd";
    case ExactAlgorithm::primal: return "primal";
    case ExactAlgorithm::dual: return "dual";
  }
  return "?";
}

struct SolverConfig {
  int T = 1000;
  std::optional<double> eta1;  // NPG-PD: 2 log|A|; PG-PD: (1-gamma)^3/(2 gamma |A|); primal/dual: 1
  std::optional<double> eta2;  // 2(1-gamma)/sqrt(T)
  std::optional<double> xi;    // Slater slack override
  double eps_b = 0.0;
  double delta = 0.0;  // conservative tightening
  std::optional<Matrix> theta0;
  double lambda0 = 0.0;
  bool check_improvement = false;  // evaluate the per-step improvement inequality
};

/// Per-step improvement inequality, evaluated once V^{(t+1)} is known.
struct ImprovementCheck {
  int t = 0;
  double lhs = 0.0;  // V_r^{t+1}(mu) - V_r^t(mu) + lambda^t (V_g^{t+1}(mu) - V_g^t(mu))
  double rhs = 0.0;  // (1-gamma)/eta1 E_mu log Z^t
  std::string measure;
};

struct SolverRun {
  IterateLog log;
  TabularPolicy mixture;  // policy whose occupancy is the average of the iterates'
  LpSolution oracle;
  double xi = 0.0;
  double eta1 = 0.0;
  double eta2 = 0.0;
  double lambda_cap = 0.0;
  std::vector<ImprovementCheck> improvement;
  double min_log_z = std::numeric_limits<double>::infinity();
};

inline double default_eta1(const Cmdp& m, ExactAlgorithm algo) {
  switch (algo) {
    case ExactAlgorithm::npg_pd: return 2.0 * std::log(static_cast<double>(m.n_actions));
    case ExactAlgorithm::pg_pd:
      return m.discount > 0.0 ? std::pow(1.0 - m.discount, 3) / (2.0 * m.discount * m.n_actions) : 1.0;
    default: return 1.0;
  }
}

inline double default_eta2(const Cmdp& m, int T) { return 2.0 * (1.0 - m.discount) / std::sqrt(static_cast<double>(T)); }

/// Initial point for PG-PD: the unconstrained greedy optimum mixed with 1e-6 uniform mass,
/// so that V_r^{(0)}(rho) >= V_r^*(rho).
inline DirectParams pgpd_initial_policy(const Cmdp& m, double mix = 1e-6) {
  auto greedy = value_iteration_scalarized(m, 0.0).policy;
  return {(1.0 - mix) * greedy.prob + mix * TabularPolicy::uniform(m.n_states, m.n_actions).prob};
}

/// Runs T steps of the chosen exact method, logging every iterate against the LP oracle.
///
/// With delta > 0 the run targets the conservative offset b + delta with dual cap
/// 4/((1-gamma) xi), while the log still measures gap and violation for the original problem.
inline SolverRun run_solver(const Cmdp& m, ExactAlgorithm algo, const SolverConfig& cfg) {
  if (cfg.T < 1) throw Error("run_solver: T must be at least 1");
  SolverRun run;
  run.oracle = solve_lp(m);
  if (run.oracle.status != LpStatus::optimal) throw Error("run_solver: CMDP is infeasible");
  run.xi = cfg.xi.value_or(run.oracle.slater_slack);
  if (!(run.xi > 0.0)) throw Error("run_solver: Slater slack must be positive");

  Cmdp target = m;
  run.lambda_cap = dual_cap(m.discount, run.xi);
  if (cfg.delta > 0.0) {
    auto wrapped = conservative_wrap(m, cfg.delta, run.xi);
    target = wrapped.cmdp;
    run.lambda_cap = wrapped.lambda_cap;
  }
  run.eta1 = cfg.eta1.value_or(default_eta1(m, algo));
  run.eta2 = cfg.eta2.value_or(default_eta2(m, cfg.T));
  if (run.eta1 < 0.0 || run.eta2 < 0.0) throw Error("run_solver: negative stepsize");

  run.log = IterateLog(run.oracle.v_r_star, m.offset);
  Matrix occupancy_sum = Matrix::Zero(m.n_states, m.n_actions);
  const Vector uniform = Vector::Constant(m.n_states, 1.0 / m.n_states);

  auto record = [&](const TabularPolicy& pi, const ValueBundle& vals, double lambda) -> IterateRecord& {
    occupancy_sum += policy_to_occupancy(m, pi).q;
    return run.log.push(vals.at(Channel::reward, m.initial_dist), vals.at(Channel::utility, m.initial_dist), lambda);
  };

  switch (algo) {
    case ExactAlgorithm::npg_pd: {
      PdState<SoftmaxParams> st;
      st.primal.theta = cfg.theta0.value_or(Matrix::Zero(m.n_states, m.n_actions));
      st.lambda = project_dual(cfg.lambda0, run.lambda_cap);
      st.eta1 = run.eta1;
      st.eta2 = run.eta2;
      st.xi = run.xi;
      st.lambda_cap = run.lambda_cap;
      struct Prev {
        ValueBundle vals;
        Vector log_z;
        double lambda;
      };
      std::optional<Prev> prev;
      for (int t = 0; t < cfg.T; ++t) {
        NpgStepTrace tr;
        TabularPolicy pi = softmax_policy(st.primal);
        auto next = npgpd_step(target, st, &tr);
        auto& rec = record(pi, tr.values, st.lambda);
        rec.log_z_min = tr.log_z.minCoeff();
        run.min_log_z = std::min(run.min_log_z, rec.log_z_min);
        if (cfg.check_improvement && prev && run.eta1 > 0.0) {
          for (const auto& [name, mu] : {std::pair<std::string, const Vector*>{"rho", &m.initial_dist},
                                         std::pair<std::string, const Vector*>{"uniform", &uniform}}) {
            ImprovementCheck c;
            c.t = t - 1;
            c.measure = name;
            c.lhs = mu->dot(tr.values.v_r - prev->vals.v_r) + prev->lambda * mu->dot(tr.values.v_g - prev->vals.v_g);
            c.rhs = (1.0 - m.discount) / run.eta1 * mu->dot(prev->log_z);
            run.improvement.push_back(c);
          }
        }
        if (cfg.check_improvement) prev = Prev{tr.values, tr.log_z, st.lambda};
        st = std::move(next);
      }
      break;
    }
    case ExactAlgorithm::pg_pd: {
      PdState<DirectParams> st;
      st.primal = cfg.theta0 ? DirectParams{*cfg.theta0} : pgpd_initial_policy(m);
      st.lambda = project_dual(cfg.lambda0, run.lambda_cap);
      st.eta1 = run.eta1;
      st.eta2 = run.eta2;
      st.xi = run.xi;
      st.lambda_cap = run.lambda_cap;
      for (int t = 0; t < cfg.T; ++t) {
        TabularPolicy pi = direct_policy(st.primal);
        record(pi, evaluate_policy(m, pi), st.lambda);
        st = pgpd_step(target, st);
      }
      break;
    }
    case ExactAlgorithm::primal: {
      SoftmaxParams theta{cfg.theta0.value_or(Matrix::Zero(m.n_states, m.n_actions))};
      for (int t = 0; t < cfg.T; ++t) {
        TabularPolicy pi = softmax_policy(theta);
        record(pi, evaluate_policy(m, pi), 0.0);
        theta = primal_feasibility_step(target, theta, run.eta1, cfg.eps_b);
      }
      break;
    }
    case ExactAlgorithm::dual: {
      double lambda = std::max(0.0, cfg.lambda0);
      for (int t = 0; t < cfg.T; ++t) {
        auto sol = value_iteration_scalarized(target, lambda);
        auto vals = evaluate_policy(m, sol.policy);
        record(sol.policy, vals, lambda);
        lambda = std::max(0.0, lambda - run.eta1 * (vals.at(Channel::utility, m.initial_dist) - target.offset));
      }
      break;
    }
  }

  run.mixture = occupancy_to_policy({occupancy_sum / cfg.T});
  return run;
}

}  // namespace cmdp
