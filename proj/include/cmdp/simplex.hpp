#pragma once

#include "cmdp/model.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace cmdp {

enum class LpStatus { optimal, infeasible, unbounded };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::optimal: return "optimal";
    case LpStatus::infeasible: return "infeasible";
    case LpStatus::unbounded: return "unbounded";
  }
  return "?";
}

/// Primal-dual solution of  max c'x  s.t.  A_eq x = b_eq,  A_ineq x <= b_ineq,  x >= 0.
struct LpResult {
  LpStatus status = LpStatus::infeasible;
  Vector x;
  Vector dual_eq;    // free
  Vector dual_ineq;  // >= 0
  double objective = 0.0;
  int pivots = 0;
};

struct SimplexOptions {
  double pivot_tol = 1e-9;
  double cost_tol = 1e-11;
  double feasibility_tol = 1e-8;
  int max_pivots = 200000;
};

namespace detail {

// Dense two-phase tableau with Bland's rule. Row `m` is the objective row and holds
// z_j - c_j; the last column is the right-hand side.
class Tableau {
 public:
  Tableau(int rows, int cols) : t_(Matrix::Zero(rows + 1, cols + 1)), basis_(rows, -1), m_(rows), n_(cols) {}

  double& at(int r, int c) { return t_(r, c); }
  double& rhs(int r) { return t_(r, n_); }
  double rhs(int r) const { return t_(r, n_); }
  double cost(int c) const { return t_(m_, c); }
  double value() const { return t_(m_, n_); }
  std::vector<int>& basis() { return basis_; }
  const std::vector<int>& basis() const { return basis_; }
  int rows() const { return m_; }

  void pivot(int r, int c) {
    t_.row(r) /= t_(r, c);
    for (int i = 0; i <= m_; ++i) {
      if (i == r) continue;
      const double f = t_(i, c);
      if (f != 0.0) t_.row(i) -= f * t_.row(r);
    }
    basis_[r] = c;
  }

  /// Loads a cost vector into the objective row and prices out the current basis.
  void set_objective(const Vector& c) {
    t_.row(m_).setZero();
    t_.row(m_).head(n_) = -c.transpose();
    for (int i = 0; i < m_; ++i)
      if (c(basis_[i]) != 0.0) t_.row(m_) += c(basis_[i]) * t_.row(i);
  }

  /// Maximizes the loaded objective over columns [0, allowed). Returns false if unbounded.
  bool run(int allowed, const SimplexOptions& opt, int& pivots) {
    for (;;) {
      int enter = -1;
      for (int j = 0; j < allowed; ++j) {
        if (t_(m_, j) < -opt.cost_tol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;

      int leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m_; ++i) {
        if (t_(i, enter) <= opt.pivot_tol) continue;
        const double ratio = rhs(i) / t_(i, enter);
        if (leave < 0 || ratio < best - 1e-12) {
          best = ratio;
          leave = i;
        } else if (ratio <= best + 1e-12 && basis_[i] < basis_[leave]) {
          best = std::min(best, ratio);
          leave = i;
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
      if (++pivots > opt.max_pivots) throw Error("simplex: pivot limit exceeded");
    }
  }

 private:
  Matrix t_;
  std::vector<int> basis_;
  int m_, n_;
};

}  // namespace detail

/// Dense two-phase simplex with Bland's anti-cycling rule.
///
/// Every row gets an artificial column so that B^{-1} can be read off the final
/// tableau; the optimal dual multipliers come from there.
inline LpResult simplex_solve(const Vector& c, const Matrix& a_eq, const Vector& b_eq, const Matrix& a_ineq,
                              const Vector& b_ineq, const SimplexOptions& opt = {}) {
  const int n = static_cast<int>(c.size());
  const int m_eq = static_cast<int>(b_eq.size());
  const int m_in = static_cast<int>(b_ineq.size());
  if ((m_eq > 0 && a_eq.cols() != n) || a_eq.rows() != m_eq || (m_in > 0 && a_ineq.cols() != n) ||
      a_ineq.rows() != m_in)
    throw Error("simplex_solve: dimension mismatch");

  const int m = m_eq + m_in;
  const int slack0 = n, art0 = n + m_in, cols = n + m_in + m;
  detail::Tableau tab(m, cols);
  std::vector<double> sign(m, 1.0);

  for (int i = 0; i < m; ++i) {
    const bool eq = i < m_eq;
    const double b = eq ? b_eq(i) : b_ineq(i - m_eq);
    sign[i] = b < 0.0 ? -1.0 : 1.0;
    for (int j = 0; j < n; ++j) tab.at(i, j) = sign[i] * (eq ? a_eq(i, j) : a_ineq(i - m_eq, j));
    if (!eq) tab.at(i, slack0 + (i - m_eq)) = sign[i];
    tab.at(i, art0 + i) = 1.0;
    tab.rhs(i) = sign[i] * b;
    tab.basis()[i] = art0 + i;
  }

  LpResult out;
  Vector phase1 = Vector::Zero(cols);
  phase1.tail(m).setConstant(-1.0);
  tab.set_objective(phase1);
  tab.run(art0, opt, out.pivots);
  double scale = 1.0;
  for (int i = 0; i < m; ++i) scale += std::abs(tab.rhs(i));
  if (tab.value() < -opt.feasibility_tol * scale) {
    out.status = LpStatus::infeasible;
    return out;
  }

  // Drive zero-level artificials out of the basis; rows where that is impossible are redundant.
  for (int i = 0; i < m; ++i) {
    if (tab.basis()[i] < art0) continue;
    for (int j = 0; j < art0; ++j) {
      if (std::abs(tab.at(i, j)) > opt.pivot_tol) {
        tab.pivot(i, j);
        break;
      }
    }
  }

  Vector phase2 = Vector::Zero(cols);
  phase2.head(n) = c;
  tab.set_objective(phase2);
  if (!tab.run(art0, opt, out.pivots)) {
    out.status = LpStatus::unbounded;
    return out;
  }

  out.status = LpStatus::optimal;
  out.x = Vector::Zero(n);
  for (int i = 0; i < m; ++i)
    if (tab.basis()[i] < n) out.x(tab.basis()[i]) = std::max(0.0, tab.rhs(i));
  out.objective = c.dot(out.x);
  out.dual_eq.resize(m_eq);
  out.dual_ineq.resize(m_in);
  for (int i = 0; i < m; ++i) {
    const double y = sign[i] * tab.cost(art0 + i);
    if (i < m_eq)
      out.dual_eq(i) = y;
    else
      out.dual_ineq(i - m_eq) = std::max(0.0, y);
  }
  return out;
}

}  // namespace cmdp
