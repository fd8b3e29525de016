#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmdp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a precondition of a library call is violated.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Channel { reward, utility };

inline const char* to_string(Channel c) { return c == Channel::reward ? "r" : "g"; }

/// A finite discounted constrained MDP: maximize V_r(rho) subject to V_g(rho) >= offset.
///
/// Transitions are stored as an (S*A) x S matrix whose row `sa(s, a)` is the
/// next-state distribution P(.|s,a). Reward and utility are S x A.
struct Cmdp {
  int n_states = 0;
  int n_actions = 0;
  Matrix transition;
  Matrix reward;
  Matrix utility;
  double offset = 0.0;
  double discount = 0.0;
  Vector initial_dist;

  int sa(int s, int a) const { return s * n_actions + a; }
  int n_pairs() const { return n_states * n_actions; }

  const Matrix& channel(Channel c) const { return c == Channel::reward ? reward : utility; }

  /// Upper bound 1/(1-gamma) on any value function.
  double value_bound() const { return 1.0 / (1.0 - discount); }

  /// Allocates a model with zero transitions and channels and a uniform rho.
  static Cmdp zeros(int n_states, int n_actions, double discount, double offset) {
    Cmdp m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.transition = Matrix::Zero(n_states * n_actions, n_states);
    m.reward = Matrix::Zero(n_states, n_actions);
    m.utility = Matrix::Zero(n_states, n_actions);
    m.offset = offset;
    m.discount = discount;
    m.initial_dist = Vector::Constant(n_states, 1.0 / n_states);
    return m;
  }
};

/// Stochastic stationary policy, one row per state.
struct TabularPolicy {
  Matrix prob;

  TabularPolicy() = default;
  explicit TabularPolicy(Matrix p) : prob(std::move(p)) {}

  static TabularPolicy uniform(int n_states, int n_actions) {
    return TabularPolicy(Matrix::Constant(n_states, n_actions, 1.0 / n_actions));
  }

  /// Deterministic policy from an action index per state.
  static TabularPolicy deterministic(const std::vector<int>& actions, int n_actions) {
    Matrix p = Matrix::Zero(static_cast<int>(actions.size()), n_actions);
    for (int s = 0; s < p.rows(); ++s) p(s, actions[s]) = 1.0;
    return TabularPolicy(std::move(p));
  }

  double operator()(int s, int a) const { return prob(s, a); }
  int n_states() const { return static_cast<int>(prob.rows()); }
  int n_actions() const { return static_cast<int>(prob.cols()); }
};

struct Violation {
  std::string what;
  int state = -1;
  int action = -1;
};

namespace detail {

inline std::string located(const std::string& what, int s, int a = -1) {
  std::ostringstream os;
  os << what << " at (s=" << s;
  if (a >= 0) os << ", a=" << a;
  os << ")";
  return os.str();
}

inline bool is_distribution(const Eigen::Ref<const Vector>& p, double tol) {
  return (p.array() >= 0.0).all() && std::abs(p.sum() - 1.0) <= tol;
}

}  // namespace detail

/// Checks every model invariant. Never throws; an empty result means valid.
inline std::vector<Violation> validate(const Cmdp& m, double tol = 1e-12) {
  std::vector<Violation> out;
  const int S = m.n_states, A = m.n_actions;
  if (S <= 0 || A <= 0) {
    out.push_back({"non-positive state or action count"});
    return out;
  }
  if (m.transition.rows() != S * A || m.transition.cols() != S || m.reward.rows() != S ||
      m.reward.cols() != A || m.utility.rows() != S || m.utility.cols() != A ||
      m.initial_dist.size() != S) {
    out.push_back({"dimension mismatch"});
    return out;
  }
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      auto row = m.transition.row(m.sa(s, a));
      if (!row.allFinite() || (row.array() < 0.0).any())
        out.push_back({detail::located("negative transition probability", s, a), s, a});
      else if (std::abs(row.sum() - 1.0) > tol)
        out.push_back({detail::located("transition row does not sum to 1", s, a), s, a});
      if (!(m.reward(s, a) >= 0.0 && m.reward(s, a) <= 1.0))
        out.push_back({detail::located("reward outside [0,1]", s, a), s, a});
      if (!(m.utility(s, a) >= 0.0 && m.utility(s, a) <= 1.0))
        out.push_back({detail::located("utility outside [0,1]", s, a), s, a});
    }
  }
  if (!(m.discount >= 0.0 && m.discount < 1.0)) {
    out.push_back({"discount outside [0,1)"});
  } else if (!(m.offset > 0.0 && m.offset <= m.value_bound())) {
    out.push_back({"offset out of range"});
  }
  if (!detail::is_distribution(m.initial_dist, tol)) out.push_back({"initial distribution is not a probability vector"});
  return out;
}

inline void require_valid(const Cmdp& m) {
  auto v = validate(m);
  if (!v.empty()) throw Error("invalid CMDP: " + v.front().what);
}

inline void require_policy_shape(const Cmdp& m, const TabularPolicy& pi) {
  if (pi.n_states() != m.n_states || pi.n_actions() != m.n_actions)
    throw Error("policy shape does not match the model");
}

}  // namespace cmdp
