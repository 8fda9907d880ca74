#include "dicekit/envs.hpp"

#include "dicekit/errors.hpp"

#include <charconv>
#include <random>
#include <string>
#include <vector>

namespace dicekit {

namespace {

constexpr double kRankTolerance = 1e-10;

// Dirichlet(1, ..., 1) draw mixed with a uniform floor: every entry >= floor.
VectorXd floored_simplex(std::mt19937_64& rng, Eigen::Index n, double floor) {
  if (static_cast<double>(n) * floor >= 1.0) {
    throw InvalidArgument("random_mdp: dimension too large for the probability floor");
  }
  std::exponential_distribution<double> expo(1.0);
  VectorXd q(n);
  for (Eigen::Index i = 0; i < n; ++i) q(i) = expo(rng);
  q /= q.sum();
  VectorXd p = VectorXd::Constant(n, floor) + (1.0 - static_cast<double>(n) * floor) * q;
  return p / p.sum();
}

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw InvalidArgument("cannot parse " + std::string(what) + " from '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

FeatureMap::FeatureMap(MatrixXd X, FeatureKind kind) : X_(std::move(X)), kind_(kind) {
  if (X_.rows() == 0 || X_.cols() == 0 || X_.cols() > X_.rows()) {
    throw RankDeficientFeatures("FeatureMap: need 0 < K <= N_sa");
  }
  if (!X_.allFinite()) throw InvalidArgument("FeatureMap: non-finite feature entries");
  Eigen::JacobiSVD<MatrixXd> svd(X_);
  const double smallest = svd.singularValues()(svd.singularValues().size() - 1);
  if (smallest <= kRankTolerance) {
    throw RankDeficientFeatures("FeatureMap: columns are not linearly independent (sigma_min = " +
                                std::to_string(smallest) + ")");
  }
}

FeatureMap FeatureMap::tabular(std::size_t n_pairs) {
  const auto n = static_cast<Eigen::Index>(n_pairs);
  return FeatureMap(MatrixXd::Identity(n, n), FeatureKind::Tabular);
}

EnvInstance boyan_chain(BoyanVariant variant, double gamma) {
  constexpr std::size_t S = kBoyanStates;
  constexpr std::size_t A = 2;
  MatrixXd P = MatrixXd::Zero(S * A, S);
  for (std::size_t s = 0; s < S; ++s) {
    const auto a0 = static_cast<Eigen::Index>(s * A);
    const auto a1 = a0 + 1;
    if (s >= 2) {
      P(a0, static_cast<Eigen::Index>(s - 1)) = 1.0;
      P(a1, static_cast<Eigen::Index>(s - 2)) = 1.0;
    } else if (s == 1) {
      P(a0, 0) = 1.0;
      P(a1, 0) = 1.0;
    } else if (variant == BoyanVariant::Episodic) {
      P(a0, 0) = 1.0;
      P(a1, 0) = 1.0;
    } else {
      P.row(a0).setConstant(1.0 / static_cast<double>(S));
      P.row(a1).setConstant(1.0 / static_cast<double>(S));
    }
  }
  MatrixXd pi(S, A);
  pi.col(0).setConstant(kBoyanTargetA0);
  pi.col(1).setConstant(1.0 - kBoyanTargetA0);
  FiniteMdp mdp(S, A, std::move(P), VectorXd::Zero(S * A), gamma,
                VectorXd::Constant(S, 1.0 / static_cast<double>(S)));
  return EnvInstance{variant == BoyanVariant::Episodic ? "boyan-episodic" : "boyan-continuing",
                     std::move(mdp), PolicyTable(std::move(pi)),
                     VectorXd::Constant(S * A, 1.0 / static_cast<double>(S * A))};
}

VectorXd boyan_state_feature(std::size_t state) {
  if (state >= kBoyanStates) throw InvalidArgument("boyan_state_feature: state out of range");
  // s12 = [1,0,0,0], s8 = [0,1,0,0], s4 = [0,0,1,0], s0 = [0,0,0,1], linear in between.
  VectorXd x = VectorXd::Zero(4);
  const std::size_t from_top = kBoyanStates - 1 - state;
  const std::size_t block = from_top / 4;
  const double frac = static_cast<double>(from_top % 4) / 4.0;
  x(static_cast<Eigen::Index>(block)) = 1.0 - frac;
  if (frac > 0.0) x(static_cast<Eigen::Index>(block + 1)) = frac;
  return x;
}

FeatureMap boyan_features(bool per_action) {
  constexpr std::size_t A = 2;
  if (!per_action) return FeatureMap::tabular(kBoyanStates * A);
  MatrixXd X = MatrixXd::Zero(kBoyanStates * A, 8);
  for (std::size_t s = 0; s < kBoyanStates; ++s) {
    const VectorXd x = boyan_state_feature(s);
    X.block(static_cast<Eigen::Index>(s * A), 0, 1, 4) = x.transpose();
    X.block(static_cast<Eigen::Index>(s * A + 1), 4, 1, 4) = x.transpose();
  }
  return FeatureMap(std::move(X), FeatureKind::BoyanLinear);
}

EnvInstance hard_mdp() {
  MatrixXd P = MatrixXd::Ones(2, 1);
  MatrixXd pi = MatrixXd::Constant(1, 2, 0.5);
  FiniteMdp mdp(1, 2, std::move(P), VectorXd::Zero(2), 1.0, VectorXd::Ones(1));
  return EnvInstance{"hard", std::move(mdp), PolicyTable(std::move(pi)), VectorXd::Constant(2, 0.5)};
}

EnvInstance random_mdp(std::uint64_t seed, std::size_t n_states, std::size_t n_actions, double gamma) {
  if (n_states == 0 || n_actions == 0) throw InvalidArgument("random_mdp: sizes must be positive");
  std::mt19937_64 rng(seed);
  const auto S = static_cast<Eigen::Index>(n_states);
  const auto A = static_cast<Eigen::Index>(n_actions);
  MatrixXd P(S * A, S);
  for (Eigen::Index i = 0; i < S * A; ++i) P.row(i) = floored_simplex(rng, S, 1e-3).transpose();
  MatrixXd pi(S, A);
  for (Eigen::Index s = 0; s < S; ++s) pi.row(s) = floored_simplex(rng, A, 1e-2).transpose();
  VectorXd init = floored_simplex(rng, S, 1e-3);
  VectorXd d_mu = floored_simplex(rng, S * A, 1e-3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  VectorXd reward(S * A);
  for (Eigen::Index i = 0; i < S * A; ++i) reward(i) = unit(rng);
  FiniteMdp mdp(n_states, n_actions, std::move(P), std::move(reward), gamma, std::move(init));
  return EnvInstance{"random:" + std::to_string(seed) + ":" + std::to_string(n_states) + ":" +
                         std::to_string(n_actions),
                     std::move(mdp), PolicyTable(std::move(pi)), std::move(d_mu)};
}

EnvInstance make_env(std::string_view name, std::optional<double> gamma) {
  if (name == "boyan-episodic") return boyan_chain(BoyanVariant::Episodic, gamma.value_or(0.9));
  if (name == "boyan-continuing") return boyan_chain(BoyanVariant::Continuing, gamma.value_or(1.0));
  if (name == "hard") {
    auto env = hard_mdp();
    if (gamma) env.mdp = env.mdp.with_gamma(*gamma);
    return env;
  }
  if (name.starts_with("random:")) {
    std::vector<std::string_view> parts;
    std::string_view rest = name.substr(7);
    while (true) {
      const auto pos = rest.find(':');
      parts.push_back(rest.substr(0, pos));
      if (pos == std::string_view::npos) break;
      rest = rest.substr(pos + 1);
    }
    if (parts.size() != 3) throw InvalidArgument("expected random:<seed>:<S>:<A>, got '" + std::string(name) + "'");
    return random_mdp(parse_number<std::uint64_t>(parts[0], "seed"),
                      parse_number<std::size_t>(parts[1], "S"), parse_number<std::size_t>(parts[2], "A"),
                      gamma.value_or(0.9));
  }
  throw InvalidArgument("unknown environment '" + std::string(name) + "'");
}

FeatureMap make_features(const EnvInstance& env, FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Tabular:
      return FeatureMap::tabular(env.mdp.n_pairs());
    case FeatureKind::BoyanLinear:
      if (!env.name.starts_with("boyan")) throw InvalidArgument("BoyanLinear features need a Boyan chain");
      return boyan_features(true);
    case FeatureKind::Custom:
      break;
  }
  throw InvalidArgument("make_features: custom features must be constructed explicitly");
}

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Tabular: return "tabular";
    case FeatureKind::BoyanLinear: return "boyan-linear";
    case FeatureKind::Custom: return "custom";
  }
  return "unknown";
}

FeatureKind feature_kind_from_string(std::string_view name) {
  if (name == "tabular" || name == "Tabular") return FeatureKind::Tabular;
  if (name == "boyan-linear" || name == "BoyanLinear" || name == "linear") return FeatureKind::BoyanLinear;
  throw InvalidArgument("unknown feature kind '" + std::string(name) + "'");
}

}  // namespace dicekit
