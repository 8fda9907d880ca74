#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstddef>

namespace dicekit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Tolerance used when validating that probability rows sum to one.
inline constexpr double kProbTolerance = 1e-12;

/// Tabular MDP. State-action pairs are flattened row-major, index = s * A + a,
/// everywhere in the library.
class FiniteMdp {
 public:
  /// `transition` has one row per state-action pair (N_sa x S), `reward` has
  /// length N_sa and `initial_dist` has length S. Throws InvalidArgument on
  /// any shape or probability violation.
  FiniteMdp(std::size_t n_states, std::size_t n_actions, MatrixXd transition,
            VectorXd reward, double gamma, VectorXd initial_dist);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  std::size_t n_pairs() const { return n_states_ * n_actions_; }
  std::size_t pair_index(std::size_t s, std::size_t a) const { return s * n_actions_ + a; }

  const MatrixXd& transition() const { return transition_; }
  double transition(std::size_t s, std::size_t a, std::size_t s_next) const {
    return transition_(pair_index(s, a), s_next);
  }
  const VectorXd& reward() const { return reward_; }
  double gamma() const { return gamma_; }
  const VectorXd& initial_dist() const { return initial_dist_; }

  FiniteMdp with_gamma(double gamma) const;
  FiniteMdp with_reward(VectorXd reward) const;

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  MatrixXd transition_;
  VectorXd reward_;
  double gamma_;
  VectorXd initial_dist_;
};

/// pi(a|s) as an S x A row-stochastic matrix.
class PolicyTable {
 public:
  explicit PolicyTable(MatrixXd probs);

  const MatrixXd& probs() const { return probs_; }
  double operator()(std::size_t s, std::size_t a) const { return probs_(s, a); }
  std::size_t n_states() const { return static_cast<std::size_t>(probs_.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(probs_.cols()); }

 private:
  MatrixXd probs_;
};

/// Everything derived from one (MDP, target policy, sampling distribution)
/// triple. D is kept implicitly as the vector d_mu.
struct OccupancyModel {
  double gamma = 0.0;
  VectorXd d_mu;
  VectorXd mu0;
  MatrixXd P_pi;
  VectorXd d_gamma;
  VectorXd tau_star;

  std::size_t n_pairs() const { return static_cast<std::size_t>(d_mu.size()); }
  MatrixXd D() const { return d_mu.asDiagonal(); }
};

/// Builds the state-action transition matrix
/// P_pi((s,a),(s',a')) = p(s'|s,a) pi(a'|s').
MatrixXd state_action_transition(const FiniteMdp& mdp, const PolicyTable& policy);

/// Irreducibility and aperiodicity of P restricted to the pairs that can be
/// entered (nonzero column). Pairs outside that support carry no stationary
/// mass.
struct ErgodicityReport {
  bool irreducible = false;
  std::size_t period = 0;
  bool ergodic() const { return irreducible && period == 1; }
};
ErgodicityReport check_ergodicity(const MatrixXd& P);

/// Throws NonErgodic when gamma = 1 and the induced chain is not ergodic,
/// SingularSystem if the discounted solve fails, InvalidArgument on bad d_mu.
OccupancyModel build_occupancy(const FiniteMdp& mdp, const PolicyTable& policy,
                               const VectorXd& d_mu);

/// (1 - gamma) mu0 + gamma P_pi^T D y.
VectorXd apply_T(const OccupancyModel& model, const VectorXd& y);

/// rho_gamma(pi) = d_gamma . r
double policy_value(const OccupancyModel& model, const FiniteMdp& mdp);

nlohmann::json mdp_to_json(const FiniteMdp& mdp);
FiniteMdp mdp_from_json(const nlohmann::json& doc);

}  // namespace dicekit
