#pragma once

#include "cmdp/evaluation.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <concepts>
#include <functional>
#include <numeric>

namespace cmdp {

/// theta_{s,a} for the tabular softmax policy, stored S x A.
struct SoftmaxParams {
  Matrix theta;
};

/// theta_s in the probability simplex for every state, stored S x A.
struct DirectParams {
  Matrix theta;
};

/// Feature vectors phi_{s,a} in R^d, one row per pair (row index s*A + a).
struct FeatureMap {
  int n_states = 0;
  int n_actions = 0;
  Matrix phi;
  double bound = 0.0;  // B >= max ||phi_{s,a}||

  int dim() const { return static_cast<int>(phi.cols()); }
  auto feature(int s, int a) const { return phi.row(s * n_actions + a); }

  static FeatureMap from_rows(int n_states, int n_actions, Matrix rows) {
    if (rows.rows() != n_states * n_actions) throw Error("FeatureMap: expected one row per state-action pair");
    FeatureMap f{n_states, n_actions, std::move(rows), 0.0};
    f.bound = f.phi.rowwise().norm().maxCoeff();
    return f;
  }

  /// Indicator features; the log-linear class then coincides with tabular softmax.
  static FeatureMap one_hot(int n_states, int n_actions) {
    return from_rows(n_states, n_actions, Matrix::Identity(n_states * n_actions, n_states * n_actions));
  }
};

struct LogLinearParams {
  Vector theta;
  FeatureMap features;
};

// ---------------------------------------------------------------------------
// Smooth policy classes
//
// A class maps theta in R^d to logits l_theta(s,a); the policy is the per-state
// softmax of the logits and the score is grad l(s,a) - E_{a'~pi}[grad l(s,a')].

template <class P>
concept SmoothPolicyClass = requires(const P& p, const Vector& theta) {
  { p.n_states() } -> std::convertible_to<int>;
  { p.n_actions() } -> std::convertible_to<int>;
  { p.dim() } -> std::convertible_to<int>;
  { p.logits(theta) } -> std::convertible_to<Matrix>;
  { p.logit_jacobian(theta) } -> std::convertible_to<Matrix>;
};

class SoftmaxClass {
 public:
  SoftmaxClass(int n_states, int n_actions) : s_(n_states), a_(n_actions) {}
  int n_states() const { return s_; }
  int n_actions() const { return a_; }
  int dim() const { return s_ * a_; }
  Matrix logits(const Vector& theta) const { return theta.reshaped<Eigen::RowMajor>(s_, a_); }
  Matrix logit_jacobian(const Vector&) const { return Matrix::Identity(dim(), dim()); }

  Vector flatten(const Matrix& theta) const { return theta.reshaped<Eigen::RowMajor>(); }

 private:
  int s_, a_;
};

class LogLinearClass {
 public:
  explicit LogLinearClass(FeatureMap f) : f_(std::move(f)) {}
  int n_states() const { return f_.n_states; }
  int n_actions() const { return f_.n_actions; }
  int dim() const { return f_.dim(); }
  const FeatureMap& features() const { return f_; }
  Matrix logits(const Vector& theta) const {
    if (theta.size() != dim()) throw Error("log-linear policy: parameter dimension does not match features");
    return (f_.phi * theta).reshaped<Eigen::RowMajor>(f_.n_states, f_.n_actions);
  }
  Matrix logit_jacobian(const Vector&) const { return f_.phi; }

 private:
  FeatureMap f_;
};

/// Nonlinear smooth class: l(s,a) = theta^T phi_{s,a} + eps * tanh(theta^T psi_{s,a}).
class PerturbedLogLinearClass {
 public:
  PerturbedLogLinearClass(FeatureMap phi, Matrix psi, double eps) : f_(std::move(phi)), psi_(std::move(psi)), eps_(eps) {
    if (psi_.rows() != f_.phi.rows() || psi_.cols() != f_.phi.cols()) throw Error("perturbation features mismatch");
  }
  int n_states() const { return f_.n_states; }
  int n_actions() const { return f_.n_actions; }
  int dim() const { return f_.dim(); }
  Matrix logits(const Vector& theta) const {
    Vector l = f_.phi * theta + eps_ * (psi_ * theta).array().tanh().matrix();
    return l.reshaped<Eigen::RowMajor>(f_.n_states, f_.n_actions);
  }
  Matrix logit_jacobian(const Vector& theta) const {
    Vector t = (psi_ * theta).array().tanh().matrix();
    Vector w = eps_ * (1.0 - t.array().square()).matrix();
    return f_.phi + w.asDiagonal() * psi_;
  }

 private:
  FeatureMap f_;
  Matrix psi_;
  double eps_;
};

// ---------------------------------------------------------------------------
// Policies from parameters

/// Row-wise softmax with max subtraction.
inline TabularPolicy softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (int s = 0; s < logits.rows(); ++s) {
    p.row(s) = (logits.row(s).array() - logits.row(s).maxCoeff()).exp().matrix();
    p.row(s) /= p.row(s).sum();
  }
  return TabularPolicy(std::move(p));
}

inline TabularPolicy softmax_policy(const SoftmaxParams& params) {
  if (!params.theta.allFinite()) throw Error("softmax_policy: non-finite parameters");
  return softmax_rows(params.theta);
}

inline TabularPolicy log_linear_policy(const LogLinearParams& params) {
  return softmax_rows(LogLinearClass(params.features).logits(params.theta));
}

inline TabularPolicy direct_policy(const DirectParams& params) { return TabularPolicy(params.theta); }

template <SmoothPolicyClass P>
TabularPolicy class_policy(const P& cls, const Vector& theta) {
  return softmax_rows(cls.logits(theta));
}

/// All scores at once, one row per pair: grad log pi_theta(a|s).
template <SmoothPolicyClass P>
Matrix score_matrix(const P& cls, const Vector& theta, const TabularPolicy& pi) {
  Matrix jac = cls.logit_jacobian(theta);
  const int A = cls.n_actions();
  for (int s = 0; s < cls.n_states(); ++s) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(jac.cols());
    for (int a = 0; a < A; ++a) mean += pi(s, a) * jac.row(s * A + a);
    for (int a = 0; a < A; ++a) jac.row(s * A + a) -= mean;
  }
  return jac;
}

template <SmoothPolicyClass P>
Matrix score_matrix(const P& cls, const Vector& theta) {
  return score_matrix(cls, theta, class_policy(cls, theta));
}

/// Softmax score: component (s',a') is 1{s=s'}(1{a=a'} - pi(a'|s)).
inline Vector score(const SoftmaxParams& params, int s, int a) {
  SoftmaxClass cls(static_cast<int>(params.theta.rows()), static_cast<int>(params.theta.cols()));
  TabularPolicy pi = softmax_policy(params);
  Vector g = Vector::Zero(cls.dim());
  for (int b = 0; b < cls.n_actions(); ++b) g(s * cls.n_actions() + b) = (a == b ? 1.0 : 0.0) - pi(s, b);
  return g;
}

/// Log-linear score: phi_{s,a} - E_{a'~pi(.|s)} phi_{s,a'}.
inline Vector score(const LogLinearParams& params, int s, int a) {
  TabularPolicy pi = log_linear_policy(params);
  Vector mean = Vector::Zero(params.features.dim());
  for (int b = 0; b < params.features.n_actions; ++b) mean += pi(s, b) * params.features.feature(s, b).transpose();
  return params.features.feature(s, a).transpose() - mean;
}

// ---------------------------------------------------------------------------
// Fisher information and policy gradients

/// Moore-Penrose inverse of a symmetric matrix; eigenvalues below rel_cutoff * max|eig| are dropped.
inline Matrix pseudo_inverse(const Matrix& sym, double rel_cutoff = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sym + sym.transpose()));
  const Vector& ev = eig.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  Vector inv = Vector::Zero(ev.size());
  for (int i = 0; i < ev.size(); ++i)
    if (std::abs(ev(i)) > rel_cutoff * top && top > 0.0) inv(i) = 1.0 / ev(i);
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

/// F_rho(theta) = E_{s~d_rho} E_{a~pi} [score score^T], computed exactly.
template <SmoothPolicyClass P>
Matrix fisher_matrix(const Cmdp& m, const P& cls, const Vector& theta, const Vector& rho) {
  TabularPolicy pi = class_policy(cls, theta);
  Matrix sc = score_matrix(cls, theta, pi);
  Vector d = visitation(m, pi, rho).d;
  Matrix f = Matrix::Zero(cls.dim(), cls.dim());
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) {
      const double w = d(s) * pi(s, a);
      if (w != 0.0) f.noalias() += w * sc.row(m.sa(s, a)).transpose() * sc.row(m.sa(s, a));
    }
  return f;
}

inline Matrix fisher_matrix(const Cmdp& m, const SoftmaxParams& params, const Vector& rho) {
  SoftmaxClass cls(m.n_states, m.n_actions);
  return fisher_matrix(m, cls, cls.flatten(params.theta), rho);
}

inline Matrix fisher_matrix(const Cmdp& m, const LogLinearParams& params, const Vector& rho) {
  return fisher_matrix(m, LogLinearClass(params.features), params.theta, rho);
}

/// grad V_L(rho) = 1/(1-gamma) E_{s~d_rho} E_{a~pi} [A_L(s,a) score(s,a)].
template <SmoothPolicyClass P>
Vector policy_gradient(const Cmdp& m, const P& cls, const Vector& theta, double lambda) {
  if (lambda < 0.0) throw Error("policy_gradient: negative multiplier");
  TabularPolicy pi = class_policy(cls, theta);
  Matrix sc = score_matrix(cls, theta, pi);
  auto vals = evaluate_policy(m, pi);
  Matrix adv = vals.adv_r + lambda * vals.adv_g;
  Vector d = visitation(m, pi, m.initial_dist).d;
  Vector g = Vector::Zero(cls.dim());
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) g += d(s) * pi(s, a) * adv(s, a) * sc.row(m.sa(s, a)).transpose();
  return g / (1.0 - m.discount);
}

inline Vector policy_gradient(const Cmdp& m, const SoftmaxParams& params, double lambda) {
  SoftmaxClass cls(m.n_states, m.n_actions);
  return policy_gradient(m, cls, cls.flatten(params.theta), lambda);
}

inline Vector policy_gradient(const Cmdp& m, const LogLinearParams& params, double lambda) {
  return policy_gradient(m, LogLinearClass(params.features), params.theta, lambda);
}

/// Direct parametrization: dV_L/dtheta_{s,a} = d_rho(s) Q_L(s,a) / (1-gamma), returned S x A.
inline Matrix policy_gradient(const Cmdp& m, const DirectParams& params, double lambda) {
  if (lambda < 0.0) throw Error("policy_gradient: negative multiplier");
  TabularPolicy pi = direct_policy(params);
  auto vals = evaluate_policy(m, pi);
  Vector d = visitation(m, pi, m.initial_dist).d;
  Matrix q = vals.q_r + lambda * vals.q_g;
  return (q.array().colwise() * d.array()).matrix() / (1.0 - m.discount);
}

/// Natural gradient F^dagger grad V_L through the Fisher pseudo-inverse.
template <SmoothPolicyClass P>
Vector natural_gradient(const Cmdp& m, const P& cls, const Vector& theta, double lambda, double rel_cutoff = 1e-10) {
  return pseudo_inverse(fisher_matrix(m, cls, theta, m.initial_dist), rel_cutoff) *
         policy_gradient(m, cls, theta, lambda);
}

// ---------------------------------------------------------------------------

/// Euclidean projection onto the probability simplex (sort-based).
inline Vector project_simplex(const Vector& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, tau = 0.0;
  for (int k = 0; k < n; ++k) {
    cumulative += u[k];
    const double t = (cumulative - 1.0) / (k + 1);
    if (u[k] - t > 0.0) tau = t;
  }
  return (v.array() - tau).cwiseMax(0.0).matrix();
}

}  // namespace cmdp
