#pragma once

#include "cmdp/evaluation.hpp"
#include "cmdp/simplex.hpp"

namespace cmdp {

/// Unnormalized discounted state-action visit counts q(s,a); total mass 1/(1-gamma).
struct OccupancyMeasure {
  Matrix q;  // S x A

  double value(const Matrix& payoff) const { return (q.array() * payoff.array()).sum(); }
  double mass() const { return q.sum(); }
};

/// Ground truth for a CMDP, computed by linear programming over occupancy measures.
struct LpSolution {
  LpStatus status = LpStatus::infeasible;
  OccupancyMeasure q_star;
  TabularPolicy optimal_policy;
  double v_r_star = 0.0;
  double lambda_star = 0.0;
  double slater_slack = 0.0;  // xi = max_pi V_g(rho) - b
  TabularPolicy slater_policy;
  double max_utility = 0.0;
};

inline OccupancyMeasure policy_to_occupancy(const Cmdp& m, const TabularPolicy& pi) {
  require_policy_shape(m, pi);
  Matrix lhs = Matrix::Identity(m.n_states, m.n_states) - m.discount * policy_transition(m, pi);
  Vector state_mass = detail::solve_guarded(lhs.transpose(), m.initial_dist);
  return {pi.prob.array().colwise() * state_mass.array()};
}

/// pi(a|s) = q(s,a) / sum_a q(s,a); states with no mass get the uniform row.
inline TabularPolicy occupancy_to_policy(const OccupancyMeasure& occ, double mass_floor = 1e-12) {
  const auto& q = occ.q;
  Matrix p(q.rows(), q.cols());
  for (int s = 0; s < q.rows(); ++s) {
    const double mass = q.row(s).sum();
    if (mass < mass_floor)
      p.row(s).setConstant(1.0 / q.cols());
    else
      p.row(s) = q.row(s).cwiseMax(0.0) / q.row(s).cwiseMax(0.0).sum();
  }
  return TabularPolicy(std::move(p));
}

/// Residual of the flow constraints  sum_a (I - gamma P_a^T) q_a - rho.
inline Vector flow_residual(const Cmdp& m, const OccupancyMeasure& occ) {
  Vector res = -m.initial_dist;
  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      res(s) += occ.q(s, a);
      res -= m.discount * occ.q(s, a) * m.transition.row(m.sa(s, a)).transpose();
    }
  }
  return res;
}

namespace detail {

inline Matrix flow_matrix(const Cmdp& m) {
  Matrix a = Matrix::Zero(m.n_states, m.n_pairs());
  for (int s = 0; s < m.n_states; ++s) {
    for (int act = 0; act < m.n_actions; ++act) {
      const int col = m.sa(s, act);
      a(s, col) += 1.0;
      a.col(col) -= m.discount * m.transition.row(col).transpose();
    }
  }
  return a;
}

inline Vector flatten(const Matrix& sa_table) {
  Vector v(sa_table.size());
  for (int s = 0; s < sa_table.rows(); ++s)
    for (int a = 0; a < sa_table.cols(); ++a) v(s * sa_table.cols() + a) = sa_table(s, a);
  return v;
}

inline OccupancyMeasure unflatten(const Cmdp& m, const Vector& x) {
  Matrix q(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) q(s, a) = x(m.sa(s, a));
  return {q};
}

}  // namespace detail

/// max <q, payoff> over the occupancy polytope, with no utility constraint.
inline LpResult optimize_occupancy(const Cmdp& m, const Matrix& payoff) {
  return simplex_solve(detail::flatten(payoff), detail::flow_matrix(m), m.initial_dist, Matrix(0, m.n_pairs()),
                       Vector(0));
}

/// Solves the constrained problem exactly and derives lambda* and the Slater slack.
///
/// The slack xi comes from a second LP maximizing the utility; its maximizer is
/// the strictly feasible comparison policy. Status is infeasible iff xi < -margin.
inline LpSolution solve_lp(const Cmdp& m, double infeasibility_margin = 1e-8) {
  require_valid(m);
  LpSolution out;

  auto slack_lp = optimize_occupancy(m, m.utility);
  if (slack_lp.status != LpStatus::optimal) throw Error("solve_lp: utility LP failed");
  auto slack_occ = detail::unflatten(m, slack_lp.x);
  out.max_utility = slack_lp.objective;
  out.slater_slack = out.max_utility - m.offset;
  out.slater_policy = occupancy_to_policy(slack_occ);
  if (out.slater_slack < -infeasibility_margin) {
    out.status = LpStatus::infeasible;
    return out;
  }

  const double b = std::min(m.offset, out.max_utility);
  Matrix a_in = -detail::flatten(m.utility).transpose();
  Vector b_in = Vector::Constant(1, -b);
  auto lp = simplex_solve(detail::flatten(m.reward), detail::flow_matrix(m), m.initial_dist, a_in, b_in);
  if (lp.status != LpStatus::optimal) {
    out.status = lp.status;
    return out;
  }
  out.status = LpStatus::optimal;
  out.q_star = detail::unflatten(m, lp.x);
  out.optimal_policy = occupancy_to_policy(out.q_star);
  out.v_r_star = lp.objective;
  const bool active = out.q_star.value(m.utility) <= b + 1e-9 * m.value_bound();
  out.lambda_star = active ? lp.dual_ineq(0) : 0.0;
  return out;
}

}  // namespace cmdp
