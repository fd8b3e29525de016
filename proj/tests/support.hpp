#pragma once

#include "cmdp/model.hpp"

#include <Eigen/Eigenvalues>

#include <random>
#include <utility>

namespace testing_support {

using cmdp::Matrix;
using cmdp::Vector;

/// Random stochastic policy drawn with a generator independent of the library's RNG.
inline cmdp::TabularPolicy random_policy(std::mt19937_64& gen, int S, int A, double floor = 0.0) {
  std::exponential_distribution<double> ex(1.0);
  Matrix p(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) p(s, a) = ex(gen) + floor;
    p.row(s) /= p.row(s).sum();
  }
  return cmdp::TabularPolicy(p);
}

/// Independent random instance built here (not through the library generator).
inline cmdp::Cmdp small_cmdp(std::mt19937_64& gen, int S, int A, double gamma, double b = 0.5) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cmdp::Cmdp m = cmdp::Cmdp::zeros(S, A, gamma, b);
  for (int i = 0; i < S * A; ++i) {
    for (int t = 0; t < S; ++t) m.transition(i, t) = u(gen) + 1e-3;
    m.transition.row(i) /= m.transition.row(i).sum();
  }
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      m.reward(s, a) = u(gen);
      m.utility(s, a) = u(gen);
    }
  for (int s = 0; s < S; ++s) m.initial_dist(s) = u(gen) + 0.1;
  m.initial_dist /= m.initial_dist.sum();
  return m;
}

/// Truncated power series sum_{t<steps} gamma^t P_pi^t payoff_pi, by repeated multiplication.
inline Vector truncated_values(const cmdp::Cmdp& m, const cmdp::TabularPolicy& pi, const Matrix& payoff, int steps) {
  Matrix p_pi = Matrix::Zero(m.n_states, m.n_states);
  Vector r_pi = Vector::Zero(m.n_states);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) {
      p_pi.row(s) += pi(s, a) * m.transition.row(s * m.n_actions + a);
      r_pi(s) += pi(s, a) * payoff(s, a);
    }
  Vector term = r_pi, total = Vector::Zero(m.n_states);
  for (int t = 0; t < steps; ++t) {
    total += term;
    term = m.discount * (p_pi * term);
  }
  return total;
}

/// Every deterministic policy of a small model, by odometer enumeration.
inline std::vector<std::vector<int>> all_deterministic(int S, int A) {
  std::vector<std::vector<int>> out;
  std::vector<int> act(S, 0);
  for (;;) {
    out.push_back(act);
    int i = 0;
    while (i < S && ++act[i] == A) act[i++] = 0;
    if (i == S) break;
  }
  return out;
}

/// Least squares with a known minimizer: x uniform over the rows of `xs`, y = w_star.x + u with
/// u uniform on [-noise, noise]. The objective is noise^2/3 + (w - w_star)^T Sigma (w - w_star).
struct SyntheticRegression {
  Matrix xs;
  Vector w_star;
  double noise = 0.5;

  Matrix sigma() const { return xs.transpose() * xs / static_cast<double>(xs.rows()); }
  double sigma_f() const { return Eigen::SelfAdjointEigenSolver<Matrix>(sigma()).eigenvalues().minCoeff(); }
  double objective(const Vector& w) const {
    const Vector e = w - w_star;
    return noise * noise / 3.0 + e.dot(sigma() * e);
  }
  double excess(const Vector& w) const { return objective(w) - objective(w_star); }
  /// sup of ||G||^2 = 4 (w.x - y)^2 ||x||^2 over the ball of radius W.
  double g_squared(double radius) const {
    double g2 = 0.0;
    for (int i = 0; i < xs.rows(); ++i) {
      const double nx = xs.row(i).norm();
      const double r = radius * nx + std::abs(xs.row(i).dot(w_star)) + noise;
      g2 = std::max(g2, 4.0 * r * r * nx * nx);
    }
    return g2;
  }
  std::pair<Vector, double> draw(std::mt19937_64& gen) const {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(xs.rows()) - 1);
    std::uniform_real_distribution<double> u(-noise, noise);
    Vector x = xs.row(pick(gen)).transpose();
    return {x, x.dot(w_star) + u(gen)};
  }

  static SyntheticRegression standard() {
    SyntheticRegression r;
    r.xs.resize(4, 2);
    r.xs << 1.0, 0.0, 0.0, 1.0, 0.6, 0.8, -0.8, 0.6;
    r.w_star.resize(2);
    r.w_star << 0.7, -0.4;
    return r;
  }
};

}  // namespace testing_support
