#pragma once

#include "cmdp/fa_pd.hpp"

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace cmdp {

// ---------------------------------------------------------------------------
// Random numbers

/// Counter-based generator: draw i is a SplitMix64 finalization of (key + i * golden).
/// Streams are addressed by (seed, stream_id); replaying a stream reproduces it bit-exactly.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), key_(mix(seed ^ mix(stream_id + 0x632BE59BD9B4E019ULL))) {}

  /// Stream for a hierarchical address such as (t, k, purpose).
  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t id = 0x9E3779B97F4A7C15ULL;
    for (auto p : path) id = mix(id ^ (p + 0xD1B54A32D192ED03ULL));
    return RngStream(seed, id);
  }

  /// Independent child stream; does not advance this one.
  RngStream fork(std::uint64_t purpose) const { return RngStream(seed_, mix(stream_id_ ^ mix(purpose + counter_))); }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Index drawn from non-negative weights summing to (about) one.
  template <class Weights>
  int categorical(const Weights& w) {
    const double u = uniform();
    double acc = 0.0;
    const int n = static_cast<int>(w.size());
    for (int i = 0; i < n; ++i) {
      acc += w(i);
      if (u < acc) return i;
    }
    for (int i = n - 1; i >= 0; --i)
      if (w(i) > 0.0) return i;
    return n - 1;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Geometric-horizon rollouts

/// Undiscounted channel sums along one rollout that stops with probability 1-gamma after
/// every step. Its expectation is the discounted value of the start.
struct RolloutEstimate {
  double value_r = 0.0;
  double value_g = 0.0;
  long length = 0;
  int state = -1;
  int action = -1;  // -1 when anchored at a state only

  double value(Channel c) const { return c == Channel::reward ? value_r : value_g; }
};

/// Simulates from state s (action drawn from pi) or from the pair (s, a).
/// A positive `cap` truncates after that many steps, biasing by at most gamma^cap/(1-gamma).
inline RolloutEstimate rollout_geometric(const Cmdp& m, const TabularPolicy& pi, int s, int a, RngStream& rng,
                                         long cap = 0) {
  RolloutEstimate out;
  out.state = s;
  out.action = a;
  int act = a >= 0 ? a : rng.categorical(pi.prob.row(s));
  for (;;) {
    out.value_r += m.reward(s, act);
    out.value_g += m.utility(s, act);
    ++out.length;
    if (rng.uniform() >= m.discount) break;
    if (cap > 0 && out.length >= cap) break;
    s = rng.categorical(m.transition.row(m.sa(s, act)));
    act = rng.categorical(pi.prob.row(s));
  }
  return out;
}

enum class EstimateKind { V, Q, A };

/// One draw of a V-, Q- or A-estimator. For Q and A the anchor (state, action) is
/// distributed as nu_{nu0}^pi; for V it is s0 ~ rho and action is -1.
struct UnbiasedEstimate {
  EstimateKind kind = EstimateKind::V;
  int state = -1;
  int action = -1;
  double value_r = 0.0;
  double value_g = 0.0;
  RolloutEstimate q_rollout;  // Q and A
  RolloutEstimate v_rollout;  // V and A
  long steps = 0;             // environment steps, anchor search included

  double value(Channel c) const { return c == Channel::reward ? value_r : value_g; }
};

struct AnchorDraw {
  int state = 0;
  int action = 0;
  long steps = 0;
};

/// (s0, a0) ~ nu0, then keep following pi with probability gamma per step; accept otherwise.
inline AnchorDraw sample_anchor(const Cmdp& m, const TabularPolicy& pi, const Matrix& nu0, RngStream& rng) {
  const Vector flat = nu0.reshaped<Eigen::RowMajor>();
  const int idx = rng.categorical(flat);
  AnchorDraw out{idx / m.n_actions, idx % m.n_actions, 0};
  while (rng.uniform() < m.discount) {
    out.state = rng.categorical(m.transition.row(m.sa(out.state, out.action)));
    out.action = rng.categorical(pi.prob.row(out.state));
    ++out.steps;
  }
  return out;
}

/// Draws one estimate. Q and V rollouts of the A-estimator use independent child streams.
inline UnbiasedEstimate unbiased_estimate(EstimateKind kind, const Cmdp& m, const TabularPolicy& pi,
                                          const Matrix& nu0, RngStream& rng, long cap = 0) {
  UnbiasedEstimate out;
  out.kind = kind;
  if (kind == EstimateKind::V) {
    const int s0 = rng.categorical(m.initial_dist);
    out.v_rollout = rollout_geometric(m, pi, s0, -1, rng, cap);
    out.state = s0;
    out.value_r = out.v_rollout.value_r;
    out.value_g = out.v_rollout.value_g;
    out.steps = out.v_rollout.length;
    return out;
  }
  AnchorDraw anchor = sample_anchor(m, pi, nu0, rng);
  out.state = anchor.state;
  out.action = anchor.action;
  RngStream q_rng = rng.fork(1);
  out.q_rollout = rollout_geometric(m, pi, anchor.state, anchor.action, q_rng, cap);
  out.value_r = out.q_rollout.value_r;
  out.value_g = out.q_rollout.value_g;
  out.steps = anchor.steps + out.q_rollout.length;
  if (kind == EstimateKind::A) {
    RngStream v_rng = rng.fork(2);
    out.v_rollout = rollout_geometric(m, pi, anchor.state, -1, v_rng, cap);
    out.value_r -= out.v_rollout.value_r;
    out.value_g -= out.v_rollout.value_g;
    out.steps += out.v_rollout.length;
  }
  rng();  // advance past the forked children
  return out;
}

/// V-estimate of V_g(rho) from a single rollout with s0 ~ rho.
inline RolloutEstimate estimate_value(const Cmdp& m, const TabularPolicy& pi, RngStream& rng, long cap = 0) {
  const int s0 = rng.categorical(m.initial_dist);
  return rollout_geometric(m, pi, s0, -1, rng, cap);
}

// ---------------------------------------------------------------------------
// Projected SGD

struct SgdConfig {
  int K = 100;
  double radius = 1.0;   // W
  double sigma_f = 1.0;  // strong-convexity modulus

  double alpha(int k) const { return 2.0 / (sigma_f * (k + 1)); }

  void validate() const {
    if (K < 1) throw Error("SgdConfig: K must be at least 1");
    if (!(radius > 0.0)) throw Error("SgdConfig: W must be positive");
    if (!(sigma_f > 0.0)) throw Error("SgdConfig: sigma_F must be positive");
  }
};

inline Vector project_ball(Vector w, double radius) {
  const double n = w.norm();
  if (n > radius) w *= radius / n;
  return w;
}

/// w_{k+1} = P_W(w_k - alpha_k G_k), G_k = 2 (w_k^T x - y) x, starting from zero. Keeps the
/// weighted average w_hat = 2/(K(K+1)) sum_{k<K} (k+1) w_{k+1}.
class ProjectedSgd {
 public:
  ProjectedSgd(int dim, SgdConfig cfg) : cfg_(cfg), w_(Vector::Zero(dim)), acc_(Vector::Zero(dim)) { cfg_.validate(); }

  void step(const Vector& x, double target) {
    Vector grad = 2.0 * (w_.dot(x) - target) * x;
    w_ = project_ball(w_ - cfg_.alpha(k_) * grad, cfg_.radius);
    acc_ += static_cast<double>(k_ + 1) * w_;
    ++k_;
  }

  const Vector& iterate() const { return w_; }
  int steps() const { return k_; }
  Vector average() const {
    if (k_ == 0) return w_;
    return acc_ * (2.0 / (static_cast<double>(k_) * (k_ + 1)));
  }

 private:
  SgdConfig cfg_;
  Vector w_;
  Vector acc_;
  int k_ = 0;
};

struct CompatibleSgdResult {
  Vector w_r;
  Vector w_g;
  long steps = 0;
};

/// K projected-SGD steps on fresh estimator draws for both channels. The advantage target
/// pairs A-estimates with scores; the Q-value target pairs Q-estimates with features.
template <SmoothPolicyClass P>
CompatibleSgdResult sgd_compatible(const Cmdp& m, const P& cls, const Vector& theta, TargetKind kind,
                                   const SgdConfig& cfg, const Matrix& nu0, std::uint64_t seed, std::uint64_t t,
                                   long cap = 0) {
  TabularPolicy pi = class_policy(cls, theta);
  Matrix x = regressors(cls, theta, pi, kind);
  ProjectedSgd sgd_r(cls.dim(), cfg), sgd_g(cls.dim(), cfg);
  CompatibleSgdResult out;
  const EstimateKind est = kind == TargetKind::advantage ? EstimateKind::A : EstimateKind::Q;
  for (int k = 0; k < cfg.K; ++k) {
    RngStream rng = RngStream::derive(seed, {t, static_cast<std::uint64_t>(k), 0});
    auto draw = unbiased_estimate(est, m, pi, nu0, rng, cap);
    const Vector xs = x.row(m.sa(draw.state, draw.action)).transpose();
    sgd_r.step(xs, draw.value_r);
    sgd_g.step(xs, draw.value_g);
    out.steps += draw.steps;
  }
  out.w_r = sgd_r.average();
  out.w_g = sgd_g.average();
  return out;
}

// ---------------------------------------------------------------------------
// Sample-based NPG-PD

/// general: scores with A-estimates, primal step eta1 * w (as written);
/// loglinear: features with Q-estimates, primal step eta1/(1-gamma) * w.
enum class SampleMode { general, loglinear };

struct SampleConfig {
  int T = 100;
  int K = 100;
  double radius = 0.0;   // W; <= 0 selects 2/((1-gamma) sqrt(sigma_F))
  double sigma_f = 0.0;  // <= 0 selects the estimate at theta^{(0)}
  std::optional<double> eta1;  // 1/sqrt(T)
  std::optional<double> eta2;  // 1/sqrt(T)
  std::optional<double> xi;
  std::optional<Matrix> nu0;  // uniform over pairs by default
  /// Overrides the primal step factor; nullopt uses the factor of the chosen algorithm.
  std::optional<bool> divide_primal_by_one_minus_gamma;
  bool exact_regression = false;  // exact least squares and exact V_g instead of samples
  long rollout_cap = 0;
  int value_rollouts = 1;
};

struct SampleRun {
  IterateLog log;
  Vector theta;
  double lambda = 0.0;
  double sigma_f = 0.0;
  double radius = 0.0;
  double lambda_cap = 0.0;
  long long rollout_steps = 0;
};

/// Smallest eigenvalue of Sigma_nu^theta under nu = nu_{nu0}^{pi_theta}.
template <SmoothPolicyClass P>
double estimate_sigma_f(const Cmdp& m, const P& cls, const Vector& theta, const Matrix& nu0, TargetKind kind) {
  TabularPolicy pi = class_policy(cls, theta);
  Matrix nu = state_action_visitation(m, pi, nu0).nu;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(second_moment(regressors(cls, theta, pi, kind), nu));
  return eig.eigenvalues().minCoeff();
}

inline Matrix uniform_pairs(const Cmdp& m) {
  return Matrix::Constant(m.n_states, m.n_actions, 1.0 / m.n_pairs());
}

/// The algorithm touches the model only through rollouts; exact values are computed for the log.
template <SmoothPolicyClass P>
SampleRun sample_npgpd(const Cmdp& m, const P& cls, SampleMode mode, const SampleConfig& cfg, std::uint64_t seed,
                       const LpSolution* oracle_in = nullptr) {
  if (cfg.T < 1 || cfg.K < 1) throw Error("sample_npgpd: T and K must be at least 1");
  LpSolution oracle_local;
  if (!oracle_in) oracle_local = solve_lp(m);
  const LpSolution& oracle = oracle_in ? *oracle_in : oracle_local;
  if (oracle.status != LpStatus::optimal) throw Error("sample_npgpd: CMDP is infeasible");

  const TargetKind kind = mode == SampleMode::general ? TargetKind::advantage : TargetKind::q_value;
  const Matrix nu0 = cfg.nu0.value_or(uniform_pairs(m));
  const double root_t = std::sqrt(static_cast<double>(cfg.T));
  const double eta1 = cfg.eta1.value_or(1.0 / root_t);
  const double eta2 = cfg.eta2.value_or(1.0 / root_t);
  const bool divide = cfg.divide_primal_by_one_minus_gamma.value_or(mode == SampleMode::loglinear);
  const double primal_step = divide ? eta1 / (1.0 - m.discount) : eta1;

  SampleRun run;
  const double xi = cfg.xi.value_or(oracle.slater_slack);
  run.lambda_cap = dual_cap(m.discount, xi);
  run.theta = Vector::Zero(cls.dim());
  run.sigma_f = cfg.sigma_f > 0.0 ? cfg.sigma_f : estimate_sigma_f(m, cls, run.theta, nu0, kind);
  if (!cfg.exact_regression && !(run.sigma_f > 0.0))
    throw Error("sample_npgpd: sigma_F must be positive (supply it for rank-deficient regressors)");
  run.radius = cfg.radius > 0.0 ? cfg.radius : 2.0 / ((1.0 - m.discount) * std::sqrt(run.sigma_f));

  run.log = IterateLog(oracle.v_r_star, m.offset);
  run.log.fa_columns = false;
  run.log.sample_columns = true;
  run.log.sample_k = cfg.K;
  run.log.seed = seed;

  for (int t = 0; t < cfg.T; ++t) {
    TabularPolicy pi = class_policy(cls, run.theta);
    ValueBundle vals = evaluate_policy(m, pi);
    const double v_g_exact = vals.at(Channel::utility, m.initial_dist);

    Vector w_r, w_g;
    double v_g_used = v_g_exact;
    if (cfg.exact_regression) {
      Matrix nu = state_action_visitation(m, pi, nu0).nu;
      w_r = compatible_least_squares(m, cls, run.theta, Channel::reward, nu, run.radius, kind, &vals).w;
      w_g = compatible_least_squares(m, cls, run.theta, Channel::utility, nu, run.radius, kind, &vals).w;
    } else {
      SgdConfig sgd{cfg.K, run.radius, run.sigma_f};
      auto fit = sgd_compatible(m, cls, run.theta, kind, sgd, nu0, seed, static_cast<std::uint64_t>(t), cfg.rollout_cap);
      w_r = std::move(fit.w_r);
      w_g = std::move(fit.w_g);
      run.rollout_steps += fit.steps;
      double acc = 0.0;
      for (int i = 0; i < cfg.value_rollouts; ++i) {
        RngStream rng = RngStream::derive(seed, {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i), 1});
        auto est = estimate_value(m, pi, rng, cfg.rollout_cap);
        acc += est.value_g;
        run.rollout_steps += est.length;
      }
      v_g_used = acc / cfg.value_rollouts;
    }

    auto& rec = run.log.push(vals.at(Channel::reward, m.initial_dist), v_g_exact, run.lambda);
    rec.rollout_steps_total = run.rollout_steps;

    run.theta += primal_step * (w_r + run.lambda * w_g);
    run.lambda = dual_update(m, run.lambda, eta2, v_g_used, run.lambda_cap);
  }
  return run;
}

}  // namespace cmdp
