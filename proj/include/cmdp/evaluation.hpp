#pragma once

#include "cmdp/model.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <limits>

namespace cmdp {

/// Exact value, action-value and advantage functions of one policy for both channels.
struct ValueBundle {
  Vector v_r, v_g;
  Matrix q_r, q_g;
  Matrix adv_r, adv_g;

  const Vector& v(Channel c) const { return c == Channel::reward ? v_r : v_g; }
  const Matrix& q(Channel c) const { return c == Channel::reward ? q_r : q_g; }
  const Matrix& adv(Channel c) const { return c == Channel::reward ? adv_r : adv_g; }

  /// Value under an initial distribution, e.g. V_r(rho).
  double at(Channel c, const Vector& dist) const { return dist.dot(v(c)); }
};

/// Discounted state visitation d_mu^pi together with the measure it started from.
struct VisitationDist {
  Vector d;
  Vector base_measure;
};

/// Discounted state-action visitation nu_{nu0}^pi; both matrices are S x A.
struct StateActionVisitation {
  Matrix nu;
  Matrix base_measure;
};

namespace detail {

inline Vector solve_guarded(const Matrix& lhs, const Vector& rhs) {
  Eigen::FullPivLU<Matrix> lu(lhs);
  if (!lu.isInvertible()) throw Error("singular linear system in policy evaluation");
  return lu.solve(rhs);
}

}  // namespace detail

/// State-to-state kernel P_pi(s, s') = sum_a pi(a|s) P(s'|s,a).
inline Matrix policy_transition(const Cmdp& m, const TabularPolicy& pi) {
  Matrix p = Matrix::Zero(m.n_states, m.n_states);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) p.row(s) += pi(s, a) * m.transition.row(m.sa(s, a));
  return p;
}

/// Per-state expected one-step payoff under pi for an arbitrary S x A payoff table.
inline Vector policy_payoff(const Matrix& payoff, const TabularPolicy& pi) {
  return (payoff.array() * pi.prob.array()).rowwise().sum();
}

/// Q(s,a) = payoff(s,a) + gamma * sum_s' P(s'|s,a) v(s').
inline Matrix backup(const Cmdp& m, const Matrix& payoff, const Vector& v) {
  Vector next = m.transition * v;
  Matrix q = payoff;
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) q(s, a) += m.discount * next(m.sa(s, a));
  return q;
}

/// Solves (I - gamma P_pi) v = payoff_pi by dense LU.
inline Vector evaluate_payoff(const Cmdp& m, const TabularPolicy& pi, const Matrix& payoff) {
  Matrix lhs = Matrix::Identity(m.n_states, m.n_states) - m.discount * policy_transition(m, pi);
  return detail::solve_guarded(lhs, policy_payoff(payoff, pi));
}

inline ValueBundle evaluate_policy(const Cmdp& m, const TabularPolicy& pi) {
  require_policy_shape(m, pi);
  Matrix lhs = Matrix::Identity(m.n_states, m.n_states) - m.discount * policy_transition(m, pi);
  Eigen::FullPivLU<Matrix> lu(lhs);
  if (!lu.isInvertible()) throw Error("singular linear system in policy evaluation");

  ValueBundle out;
  out.v_r = lu.solve(policy_payoff(m.reward, pi));
  out.v_g = lu.solve(policy_payoff(m.utility, pi));
  out.q_r = backup(m, m.reward, out.v_r);
  out.q_g = backup(m, m.utility, out.v_g);
  // Centering with sum_a pi q keeps sum_a pi A = 0 to rounding even where the solve is inexact.
  out.adv_r = out.q_r.colwise() - policy_payoff(out.q_r, pi);
  out.adv_g = out.q_g.colwise() - policy_payoff(out.q_g, pi);
  return out;
}

/// d = (1 - gamma) mu^T (I - gamma P_pi)^{-1}, renormalized to sum to one.
inline VisitationDist visitation(const Cmdp& m, const TabularPolicy& pi, const Vector& mu) {
  require_policy_shape(m, pi);
  if (mu.size() != m.n_states) throw Error("visitation: base measure has wrong size");
  Matrix lhs = Matrix::Identity(m.n_states, m.n_states) - m.discount * policy_transition(m, pi);
  Vector d = (1.0 - m.discount) * detail::solve_guarded(lhs.transpose(), mu);
  d = d.cwiseMax(0.0);
  d /= d.sum();
  return {d, mu};
}

/// nu(s,a) = (1 - gamma) E_{(s0,a0)~nu0} sum_t gamma^t P(s_t = s, a_t = a).
inline StateActionVisitation state_action_visitation(const Cmdp& m, const TabularPolicy& pi,
                                                     const Matrix& nu0) {
  require_policy_shape(m, pi);
  if (nu0.rows() != m.n_states || nu0.cols() != m.n_actions)
    throw Error("state_action_visitation: base measure has wrong shape");
  const int n = m.n_pairs();
  // Pair kernel M((s,a),(s',a')) = P(s'|s,a) pi(a'|s').
  Matrix kernel(n, n);
  for (int sa = 0; sa < n; ++sa)
    for (int s2 = 0; s2 < m.n_states; ++s2)
      for (int a2 = 0; a2 < m.n_actions; ++a2) kernel(sa, m.sa(s2, a2)) = m.transition(sa, s2) * pi(s2, a2);

  Vector base(n);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) base(m.sa(s, a)) = nu0(s, a);

  Matrix lhs = Matrix::Identity(n, n) - m.discount * kernel;
  Vector flat = (1.0 - m.discount) * detail::solve_guarded(lhs.transpose(), base);
  flat = flat.cwiseMax(0.0);
  flat /= flat.sum();

  Matrix nu(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) nu(s, a) = flat(m.sa(s, a));
  return {nu, nu0};
}

/// V_L(rho) = V_r(rho) + lambda (V_g(rho) - b).
inline double lagrangian(const Cmdp& m, const TabularPolicy& pi, double lambda) {
  if (lambda < 0.0) throw Error("lagrangian: negative multiplier");
  auto vals = evaluate_policy(m, pi);
  return vals.at(Channel::reward, m.initial_dist) +
         lambda * (vals.at(Channel::utility, m.initial_dist) - m.offset);
}

struct ScalarizedSolution {
  TabularPolicy policy;
  double dual_value = 0.0;  // V_D^lambda(rho)
  int sweeps = 0;
};

namespace detail {

// Lowest action index whose value is within `tie` of the row maximum.
inline std::vector<int> greedy_actions(const Matrix& q, double tie) {
  std::vector<int> act(q.rows());
  for (int s = 0; s < q.rows(); ++s) {
    const double best = q.row(s).maxCoeff();
    int a = 0;
    while (q(s, a) < best - tie) ++a;
    act[s] = a;
  }
  return act;
}

}  // namespace detail

/// Optimal policy for the scalar payoff r + lambda g and the dual function value.
///
/// Value iteration runs to a Bellman residual <= tol; the greedy policy is then
/// polished by exact policy iteration so the returned dual value is the exact
/// optimum. Ties go to the lowest action index.
inline ScalarizedSolution value_iteration_scalarized(const Cmdp& m, double lambda, double tol = 1e-10) {
  if (lambda < 0.0) throw Error("value_iteration_scalarized: negative multiplier");
  if (!(tol > 0.0)) throw Error("value_iteration_scalarized: tol must be positive");
  const Matrix payoff = m.reward + lambda * m.utility;
  const double tie = 1e-11 * (1.0 + lambda) * m.value_bound();

  ScalarizedSolution out;
  Vector v = Vector::Zero(m.n_states);
  const int max_sweeps = 1000000;
  for (; out.sweeps < max_sweeps; ++out.sweeps) {
    Vector next = backup(m, payoff, v).rowwise().maxCoeff();
    const double residual = (next - v).cwiseAbs().maxCoeff();
    v = std::move(next);
    if (residual <= tol) break;
  }

  auto actions = detail::greedy_actions(backup(m, payoff, v), tie);
  for (int iter = 0; iter <= m.n_pairs(); ++iter) {
    auto pi = TabularPolicy::deterministic(actions, m.n_actions);
    Vector vp = evaluate_payoff(m, pi, payoff);
    Matrix q = backup(m, payoff, vp);
    bool changed = false;
    for (int s = 0; s < m.n_states; ++s) {
      if (q.row(s).maxCoeff() > q(s, actions[s]) + tie) {
        Eigen::Index best;
        q.row(s).maxCoeff(&best);
        actions[s] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed) {
      actions = detail::greedy_actions(q, tie);
      break;
    }
  }
  out.policy = TabularPolicy::deterministic(actions, m.n_actions);
  out.dual_value = m.initial_dist.dot(evaluate_payoff(m, out.policy, payoff)) - lambda * m.offset;
  return out;
}

}  // namespace cmdp
