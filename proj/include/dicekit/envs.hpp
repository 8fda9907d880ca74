#pragma once

#include "dicekit/mdp.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace dicekit {

enum class FeatureKind { Tabular, BoyanLinear, Custom };

/// Feature matrix X (N_sa x K). Construction enforces linearly independent
/// columns (smallest singular value > 1e-10) and throws
/// RankDeficientFeatures otherwise.
class FeatureMap {
 public:
  FeatureMap(MatrixXd X, FeatureKind kind);

  static FeatureMap tabular(std::size_t n_pairs);

  const MatrixXd& X() const { return X_; }
  FeatureKind kind() const { return kind_; }
  std::size_t n_pairs() const { return static_cast<std::size_t>(X_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(X_.cols()); }
  auto row(std::size_t pair) const { return X_.row(static_cast<Eigen::Index>(pair)).transpose(); }

 private:
  MatrixXd X_;
  FeatureKind kind_;
};

/// An environment ready for estimation: dynamics, target policy and the
/// sampling distribution d_mu over state-action pairs.
struct EnvInstance {
  std::string name;
  FiniteMdp mdp;
  PolicyTable policy;
  VectorXd d_mu;
};

enum class BoyanVariant { Episodic, Continuing };

inline constexpr std::size_t kBoyanStates = 13;
inline constexpr double kBoyanTargetA0 = 0.1;

/// 13-state chain with two actions. From s_i (i >= 2) a0 -> s_{i-1} and
/// a1 -> s_{i-2}; s_1 -> s_0 under both. s_0 is absorbing (Episodic) or
/// jumps uniformly over all states (Continuing). Uniform initial states,
/// pi(a0|s) = 0.1, d_mu uniform, zero rewards.
EnvInstance boyan_chain(BoyanVariant variant, double gamma);

/// Four-dimensional interpolating state features of the chain.
VectorXd boyan_state_feature(std::size_t state);

/// per_action: block layout x(s,a0) = [x(s); 0], x(s,a1) = [0; x(s)], K = 8.
/// Otherwise the 26-dimensional tabular map.
FeatureMap boyan_features(bool per_action);

/// Single state, two self-looping actions, gamma = 1, everything uniform.
EnvInstance hard_mdp();

/// Random dense MDP. Transition and initial rows are floored at 1e-3, policy
/// rows at 1e-2 and d_mu at 1e-3, so the chain is ergodic for any gamma.
/// Deterministic in `seed`.
EnvInstance random_mdp(std::uint64_t seed, std::size_t n_states, std::size_t n_actions, double gamma);

/// Resolves "boyan-episodic", "boyan-continuing", "hard" and
/// "random:<seed>:<S>:<A>". `gamma` overrides the environment default when set.
EnvInstance make_env(std::string_view name, std::optional<double> gamma = std::nullopt);

/// Tabular or Boyan features for a named environment.
FeatureMap make_features(const EnvInstance& env, FeatureKind kind);

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view name);

}  // namespace dicekit
