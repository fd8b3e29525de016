#pragma once

#include "cmdp/exact_pd.hpp"

#include <Eigen/Eigenvalues>

#include <limits>

namespace cmdp {

/// Regression target: advantages against scores, or Q-values against features.
enum class TargetKind { advantage, q_value };

inline const char* to_string(TargetKind k) { return k == TargetKind::advantage ? "advantage" : "q_value"; }

struct CompatibleRegression {
  Vector w;
  double domain_radius = 0.0;
  TargetKind target_kind = TargetKind::advantage;
  Channel channel = Channel::reward;
  double residual = 0.0;
};

/// Quadratic E(w) = E_nu[(target - w^T x)^2] = c0 - 2 w^T c + w^T Sigma w.
struct RegressionProblem {
  Matrix sigma;
  Vector cross;
  double target_second_moment = 0.0;

  double objective(const Vector& w) const {
    return target_second_moment - 2.0 * w.dot(cross) + w.dot(sigma * w);
  }
};

/// Regressors x_{s,a}: scores for the advantage target, logit gradients (phi for log-linear) for Q.
template <SmoothPolicyClass P>
Matrix regressors(const P& cls, const Vector& theta, const TabularPolicy& pi, TargetKind kind) {
  return kind == TargetKind::advantage ? score_matrix(cls, theta, pi) : Matrix(cls.logit_jacobian(theta));
}

/// Second-moment matrix Sigma_nu = E_nu[x x^T] for a regressor matrix with one row per pair.
inline Matrix second_moment(const Matrix& x, const Matrix& nu) {
  const int A = static_cast<int>(nu.cols());
  Matrix out = Matrix::Zero(x.cols(), x.cols());
  for (int s = 0; s < nu.rows(); ++s)
    for (int a = 0; a < A; ++a)
      if (nu(s, a) != 0.0) out.noalias() += nu(s, a) * x.row(s * A + a).transpose() * x.row(s * A + a);
  return out;
}

inline RegressionProblem regression_problem(const Matrix& x, const Matrix& target, const Matrix& nu) {
  const int A = static_cast<int>(nu.cols());
  RegressionProblem p;
  p.sigma = second_moment(x, nu);
  p.cross = Vector::Zero(x.cols());
  for (int s = 0; s < nu.rows(); ++s)
    for (int a = 0; a < A; ++a) {
      p.cross += nu(s, a) * target(s, a) * x.row(s * A + a).transpose();
      p.target_second_moment += nu(s, a) * target(s, a) * target(s, a);
    }
  return p;
}

/// argmin over ||w|| <= W of the quadratic. The minimum-norm unconstrained minimizer is
/// used when it fits; otherwise the ridge multiplier mu with ||(Sigma + mu I)^{-1} c|| = W
/// is found by bisection (KKT).
inline Vector solve_norm_constrained(const RegressionProblem& p, double radius, double rel_cutoff = 1e-10) {
  const int d = static_cast<int>(p.cross.size());
  if (radius <= 0.0) return Vector::Zero(d);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (p.sigma + p.sigma.transpose()));
  const Vector ev = eig.eigenvalues().cwiseMax(0.0);
  const Vector proj = eig.eigenvectors().transpose() * p.cross;
  const double top = ev.maxCoeff();

  auto ridge = [&](double mu) {
    Vector coef(d);
    for (int i = 0; i < d; ++i) {
      const double denom = ev(i) + mu;
      coef(i) = (mu == 0.0 && ev(i) <= rel_cutoff * top) || denom <= 0.0 ? 0.0 : proj(i) / denom;
    }
    return Vector(eig.eigenvectors() * coef);
  };

  Vector w = ridge(0.0);
  if (w.norm() <= radius) return w;

  double lo = 0.0, hi = std::max(p.sigma.trace(), 1e-300) * 1e6;
  while (ridge(hi).norm() > radius) hi *= 2.0;
  for (int it = 0; it < 400 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ridge(mid).norm() > radius ? lo : hi) = mid;
  }
  return ridge(hi);
}

/// Exact compatible function approximation under a norm constraint.
template <SmoothPolicyClass P>
CompatibleRegression compatible_least_squares(const Cmdp& m, const P& cls, const Vector& theta, Channel channel,
                                              const Matrix& nu, double radius, TargetKind kind,
                                              const ValueBundle* precomputed = nullptr) {
  if (radius < 0.0) throw Error("compatible_least_squares: negative radius");
  if (nu.rows() != m.n_states || nu.cols() != m.n_actions || std::abs(nu.sum() - 1.0) > 1e-8 || (nu.array() < 0.0).any())
    throw Error("compatible_least_squares: nu is not a state-action distribution");
  TabularPolicy pi = class_policy(cls, theta);
  ValueBundle local;
  if (!precomputed) local = evaluate_policy(m, pi);
  const ValueBundle& vals = precomputed ? *precomputed : local;
  const Matrix& target = kind == TargetKind::advantage ? vals.adv(channel) : vals.q(channel);

  auto prob = regression_problem(regressors(cls, theta, pi, kind), target, nu);
  CompatibleRegression out;
  out.w = solve_norm_constrained(prob, radius);
  out.domain_radius = radius;
  out.target_kind = kind;
  out.channel = channel;
  out.residual = prob.objective(out.w);
  return out;
}

struct FaConfig {
  double eta1 = 0.0;
  double eta2 = 0.0;
  double radius = 1e6;  // W
  double lambda_cap = std::numeric_limits<double>::infinity();
  Matrix nu0;  // exploratory state-action distribution
  TargetKind target_kind = TargetKind::advantage;
};

struct FaStep {
  Vector theta;
  double lambda = 0.0;
  CompatibleRegression w_r, w_g;
  double v_r = 0.0;
  double v_g = 0.0;
};

/// theta += eta1/(1-gamma) (w_r + lambda w_g) with each w fitted on the on-policy nu^{(t)};
/// lambda takes the projected dual step with the exact V_g(rho).
template <SmoothPolicyClass P>
FaStep npgpd_fa_step(const Cmdp& m, const P& cls, const Vector& theta, double lambda, const FaConfig& cfg) {
  TabularPolicy pi = class_policy(cls, theta);
  ValueBundle vals = evaluate_policy(m, pi);
  Matrix nu = state_action_visitation(m, pi, cfg.nu0).nu;

  FaStep out;
  out.w_r = compatible_least_squares(m, cls, theta, Channel::reward, nu, cfg.radius, cfg.target_kind, &vals);
  out.w_g = compatible_least_squares(m, cls, theta, Channel::utility, nu, cfg.radius, cfg.target_kind, &vals);
  out.v_r = vals.at(Channel::reward, m.initial_dist);
  out.v_g = vals.at(Channel::utility, m.initial_dist);
  out.theta = theta + cfg.eta1 / (1.0 - m.discount) * (out.w_r.w + lambda * out.w_g.w);
  out.lambda = dual_update(m, lambda, cfg.eta2, out.v_g, cfg.lambda_cap);
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Comparator distribution: d_rho^{pi*}(s) times a uniform action, or times pi*(a|s).
enum class NuStarKind { uniform_action, on_policy };

inline const char* to_string(NuStarKind k) { return k == NuStarKind::uniform_action ? "uniform-action" : "on-policy"; }

inline Matrix nu_star(const Cmdp& m, const TabularPolicy& pi_star, NuStarKind kind) {
  Vector d = visitation(m, pi_star, m.initial_dist).d;
  if (kind == NuStarKind::uniform_action) return d * Eigen::RowVectorXd::Constant(m.n_actions, 1.0 / m.n_actions);
  return pi_star.prob.array().colwise() * d.array();
}

struct FaDiagnostics {
  double est_error = 0.0;
  double transfer_error = 0.0;
  double approx_error = 0.0;  // on-policy residual of the exact minimizer
  double kappa = 1.0;
  bool kappa_infinite = false;
  NuStarKind nu_star_kind = NuStarKind::uniform_action;
};

/// sup_w (w^T A w)/(w^T B w) via the generalized symmetric eigenproblem; B gets reg * I.
inline double relative_condition_number(const Matrix& numer, const Matrix& denom, double reg = 1e-12) {
  Matrix b = 0.5 * (denom + denom.transpose()) + reg * Matrix::Identity(denom.rows(), denom.cols());
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(0.5 * (numer + numer.transpose()), b);
  return ges.eigenvalues().maxCoeff();
}

struct DiagnosticsOptions {
  NuStarKind nu_star_kind = NuStarKind::uniform_action;
  TargetKind target_kind = TargetKind::q_value;
  double radius = 1e6;
  std::optional<Vector> approximate_w;  // for the estimation error
  double kappa_infinite_threshold = 1e10;
};

template <SmoothPolicyClass P>
FaDiagnostics fa_diagnostics(const Cmdp& m, const P& cls, const Vector& theta, Channel channel, const Matrix& nu0,
                             const TabularPolicy& pi_star, const DiagnosticsOptions& opt = {}) {
  TabularPolicy pi = class_policy(cls, theta);
  ValueBundle vals = evaluate_policy(m, pi);
  Matrix nu_t = state_action_visitation(m, pi, nu0).nu;
  Matrix nu_cmp = nu_star(m, pi_star, opt.nu_star_kind);
  const Matrix& target = opt.target_kind == TargetKind::advantage ? vals.adv(channel) : vals.q(channel);
  Matrix x = regressors(cls, theta, pi, opt.target_kind);

  auto on_policy = regression_problem(x, target, nu_t);
  auto comparator = regression_problem(x, target, nu_cmp);
  Vector w_star = solve_norm_constrained(on_policy, opt.radius);

  FaDiagnostics out;
  out.nu_star_kind = opt.nu_star_kind;
  out.approx_error = on_policy.objective(w_star);
  out.transfer_error = comparator.objective(w_star);
  out.est_error = opt.approximate_w ? on_policy.objective(*opt.approximate_w) - out.approx_error : 0.0;
  out.kappa = relative_condition_number(second_moment(x, nu_cmp), second_moment(x, nu0));
  if (!(out.kappa <= opt.kappa_infinite_threshold)) {
    out.kappa = std::numeric_limits<double>::infinity();
    out.kappa_infinite = true;
  }
  return out;
}

struct FaRunConfig {
  int T = 100;
  std::optional<double> eta1;  // 1/sqrt(T)
  std::optional<double> eta2;  // 1/sqrt(T)
  double radius = 1e6;
  std::optional<Matrix> nu0;   // uniform over pairs by default
  TargetKind target_kind = TargetKind::advantage;
  NuStarKind nu_star_kind = NuStarKind::uniform_action;
  int diagnostics_every = 1;   // 0 disables the diagnostic columns
};

struct FaRun {
  IterateLog log;
  Vector theta;
  double lambda = 0.0;
  double lambda_cap = 0.0;
  LpSolution oracle;
};

/// T steps of function-approximation NPG-PD from theta = 0, logging transfer errors and kappa.
template <SmoothPolicyClass P>
FaRun run_fa(const Cmdp& m, const P& cls, const FaRunConfig& cfg) {
  if (cfg.T < 1) throw Error("run_fa: T must be at least 1");
  FaRun run;
  run.oracle = solve_lp(m);
  if (run.oracle.status != LpStatus::optimal) throw Error("run_fa: CMDP is infeasible");
  run.lambda_cap = dual_cap(m.discount, run.oracle.slater_slack);

  FaConfig step_cfg;
  const double root_t = 1.0 / std::sqrt(static_cast<double>(cfg.T));
  step_cfg.eta1 = cfg.eta1.value_or(root_t);
  step_cfg.eta2 = cfg.eta2.value_or(root_t);
  step_cfg.radius = cfg.radius;
  step_cfg.lambda_cap = run.lambda_cap;
  step_cfg.nu0 = cfg.nu0.value_or(Matrix::Constant(m.n_states, m.n_actions, 1.0 / m.n_pairs()));
  step_cfg.target_kind = cfg.target_kind;

  DiagnosticsOptions diag;
  diag.nu_star_kind = cfg.nu_star_kind;
  diag.target_kind = cfg.target_kind;
  diag.radius = cfg.radius;

  run.log = IterateLog(run.oracle.v_r_star, m.offset);
  run.log.fa_columns = cfg.diagnostics_every > 0;
  run.theta = Vector::Zero(cls.dim());
  for (int t = 0; t < cfg.T; ++t) {
    FaStep st = npgpd_fa_step(m, cls, run.theta, run.lambda, step_cfg);
    auto& rec = run.log.push(st.v_r, st.v_g, run.lambda);
    if (cfg.diagnostics_every > 0 && t % cfg.diagnostics_every == 0) {
      auto dr = fa_diagnostics(m, cls, run.theta, Channel::reward, step_cfg.nu0, run.oracle.optimal_policy, diag);
      auto dg = fa_diagnostics(m, cls, run.theta, Channel::utility, step_cfg.nu0, run.oracle.optimal_policy, diag);
      rec.eps_bias_r = dr.transfer_error;
      rec.eps_bias_g = dg.transfer_error;
      rec.kappa = dr.kappa;
    }
    run.theta = std::move(st.theta);
    run.lambda = st.lambda;
  }
  return run;
}

}  // namespace cmdp
