#include "dicekit/mdp.hpp"

#include "dicekit/errors.hpp"

#include <cmath>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

namespace dicekit {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

bool is_probability_vector(const VectorXd& v) {
  if (v.size() == 0 || !v.allFinite()) return false;
  if ((v.array() < 0.0).any()) return false;
  return std::abs(v.sum() - 1.0) <= kProbTolerance;
}

// Breadth-first search over the nonzero pattern of P (or of P^T when
// `reverse`) restricted to `support`. Returns BFS levels, -1 if unreached.
std::vector<long> bfs_levels(const MatrixXd& P, const std::vector<bool>& support,
                             Eigen::Index root, bool reverse) {
  const Eigen::Index n = P.rows();
  std::vector<long> level(static_cast<std::size_t>(n), -1);
  std::queue<Eigen::Index> frontier;
  level[static_cast<std::size_t>(root)] = 0;
  frontier.push(root);
  while (!frontier.empty()) {
    const Eigen::Index u = frontier.front();
    frontier.pop();
    for (Eigen::Index v = 0; v < n; ++v) {
      const double weight = reverse ? P(v, u) : P(u, v);
      if (weight <= 0.0 || !support[static_cast<std::size_t>(v)]) continue;
      if (level[static_cast<std::size_t>(v)] >= 0) continue;
      level[static_cast<std::size_t>(v)] = level[static_cast<std::size_t>(u)] + 1;
      frontier.push(v);
    }
  }
  return level;
}

}  // namespace

FiniteMdp::FiniteMdp(std::size_t n_states, std::size_t n_actions, MatrixXd transition,
                     VectorXd reward, double gamma, VectorXd initial_dist)
    : n_states_(n_states),
      n_actions_(n_actions),
      transition_(std::move(transition)),
      reward_(std::move(reward)),
      gamma_(gamma),
      initial_dist_(std::move(initial_dist)) {
  require(n_states_ > 0 && n_actions_ > 0, "FiniteMdp: n_states and n_actions must be positive");
  const auto n_sa = static_cast<Eigen::Index>(n_pairs());
  const auto n_s = static_cast<Eigen::Index>(n_states_);
  require(transition_.rows() == n_sa && transition_.cols() == n_s,
          "FiniteMdp: transition must have shape [S*A, S]");
  require(reward_.size() == n_sa, "FiniteMdp: reward must have length S*A");
  require(reward_.allFinite(), "FiniteMdp: reward must be finite");
  require(initial_dist_.size() == n_s, "FiniteMdp: initial_dist must have length S");
  require(std::isfinite(gamma_) && gamma_ >= 0.0 && gamma_ <= 1.0,
          "FiniteMdp: gamma must lie in [0, 1]");
  for (Eigen::Index i = 0; i < n_sa; ++i) {
    require(is_probability_vector(transition_.row(i).transpose()),
            "FiniteMdp: transition row " + std::to_string(i) + " is not a probability vector");
  }
  require(is_probability_vector(initial_dist_), "FiniteMdp: initial_dist is not a probability vector");
}

FiniteMdp FiniteMdp::with_gamma(double gamma) const {
  return FiniteMdp(n_states_, n_actions_, transition_, reward_, gamma, initial_dist_);
}

FiniteMdp FiniteMdp::with_reward(VectorXd reward) const {
  return FiniteMdp(n_states_, n_actions_, transition_, std::move(reward), gamma_, initial_dist_);
}

PolicyTable::PolicyTable(MatrixXd probs) : probs_(std::move(probs)) {
  require(probs_.rows() > 0 && probs_.cols() > 0, "PolicyTable: empty table");
  for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
    require(is_probability_vector(probs_.row(s).transpose()),
            "PolicyTable: row " + std::to_string(s) + " is not a probability vector");
  }
}

MatrixXd state_action_transition(const FiniteMdp& mdp, const PolicyTable& policy) {
  require(policy.n_states() == mdp.n_states() && policy.n_actions() == mdp.n_actions(),
          "policy shape does not match the MDP");
  const std::size_t S = mdp.n_states();
  const std::size_t A = mdp.n_actions();
  MatrixXd P = MatrixXd::Zero(static_cast<Eigen::Index>(S * A), static_cast<Eigen::Index>(S * A));
  for (std::size_t i = 0; i < S * A; ++i) {
    for (std::size_t s2 = 0; s2 < S; ++s2) {
      const double p = mdp.transition()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s2));
      if (p == 0.0) continue;
      for (std::size_t a2 = 0; a2 < A; ++a2) {
        P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s2 * A + a2)) = p * policy(s2, a2);
      }
    }
  }
  return P;
}

ErgodicityReport check_ergodicity(const MatrixXd& P) {
  const Eigen::Index n = P.rows();
  std::vector<bool> support(static_cast<std::size_t>(n), false);
  Eigen::Index root = -1;
  for (Eigen::Index j = 0; j < n; ++j) {
    if ((P.col(j).array() > 0.0).any()) {
      support[static_cast<std::size_t>(j)] = true;
      if (root < 0) root = j;
    }
  }
  ErgodicityReport report;
  if (root < 0) return report;

  const auto forward = bfs_levels(P, support, root, false);
  const auto backward = bfs_levels(P, support, root, true);
  report.irreducible = true;
  for (Eigen::Index v = 0; v < n; ++v) {
    if (!support[static_cast<std::size_t>(v)]) continue;
    if (forward[static_cast<std::size_t>(v)] < 0 || backward[static_cast<std::size_t>(v)] < 0) {
      report.irreducible = false;
      return report;
    }
  }

  // Period = gcd over support edges (u, v) of level(u) + 1 - level(v).
  long period = 0;
  for (Eigen::Index u = 0; u < n; ++u) {
    if (!support[static_cast<std::size_t>(u)]) continue;
    for (Eigen::Index v = 0; v < n; ++v) {
      if (P(u, v) <= 0.0 || !support[static_cast<std::size_t>(v)]) continue;
      const long diff = forward[static_cast<std::size_t>(u)] + 1 - forward[static_cast<std::size_t>(v)];
      period = std::gcd(period, std::labs(diff));
    }
  }
  report.period = static_cast<std::size_t>(period);
  return report;
}

OccupancyModel build_occupancy(const FiniteMdp& mdp, const PolicyTable& policy,
                               const VectorXd& d_mu) {
  const auto n_sa = static_cast<Eigen::Index>(mdp.n_pairs());
  require(d_mu.size() == n_sa, "build_occupancy: d_mu must have length S*A");
  require(is_probability_vector(d_mu), "build_occupancy: d_mu is not a probability vector");
  require((d_mu.array() > 0.0).all(), "build_occupancy: d_mu must be strictly positive");

  OccupancyModel model;
  model.gamma = mdp.gamma();
  model.d_mu = d_mu;
  model.P_pi = state_action_transition(mdp, policy);
  model.mu0.resize(n_sa);
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      model.mu0(static_cast<Eigen::Index>(mdp.pair_index(s, a))) = mdp.initial_dist()(static_cast<Eigen::Index>(s)) * policy(s, a);
    }
  }

  const MatrixXd I = MatrixXd::Identity(n_sa, n_sa);
  if (mdp.gamma() < 1.0) {
    const MatrixXd M = I - mdp.gamma() * model.P_pi.transpose();
    Eigen::FullPivLU<MatrixXd> lu(M);
    if (!lu.isInvertible()) throw SingularSystem("build_occupancy: (I - gamma P^T) is singular");
    model.d_gamma = lu.solve((1.0 - mdp.gamma()) * model.mu0);
  } else {
    const auto report = check_ergodicity(model.P_pi);
    if (!report.ergodic()) {
      throw NonErgodic(report.irreducible
                           ? "build_occupancy: chain is periodic (period " + std::to_string(report.period) + ")"
                           : "build_occupancy: chain is reducible");
    }
    // Bordered system [(I - P^T); 1^T] v = [0; 1], solved in least squares.
    MatrixXd bordered(n_sa + 1, n_sa);
    bordered.topRows(n_sa) = I - model.P_pi.transpose();
    bordered.row(n_sa).setOnes();
    VectorXd rhs = VectorXd::Zero(n_sa + 1);
    rhs(n_sa) = 1.0;
    model.d_gamma = bordered.colPivHouseholderQr().solve(rhs);
  }
  if (!model.d_gamma.allFinite()) throw SingularSystem("build_occupancy: non-finite occupancy");
  model.tau_star = model.d_gamma.cwiseQuotient(model.d_mu);

  const double residual = (model.d_mu.cwiseProduct(model.tau_star) - apply_T(model, model.tau_star))
                              .lpNorm<Eigen::Infinity>();
  if (residual >= 1e-8 || std::abs(model.d_gamma.sum() - 1.0) > 1e-10) {
    throw SingularSystem("build_occupancy: fixed-point residual " + std::to_string(residual) +
                         " exceeds tolerance");
  }
  return model;
}

VectorXd apply_T(const OccupancyModel& model, const VectorXd& y) {
  return (1.0 - model.gamma) * model.mu0 +
         model.gamma * (model.P_pi.transpose() * model.d_mu.cwiseProduct(y));
}

double policy_value(const OccupancyModel& model, const FiniteMdp& mdp) {
  return model.d_gamma.dot(mdp.reward());
}

nlohmann::json mdp_to_json(const FiniteMdp& mdp) {
  const std::size_t S = mdp.n_states();
  const std::size_t A = mdp.n_actions();
  nlohmann::json transition = nlohmann::json::array();
  nlohmann::json reward = nlohmann::json::array();
  for (std::size_t s = 0; s < S; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    nlohmann::json reward_row = nlohmann::json::array();
    for (std::size_t a = 0; a < A; ++a) {
      std::vector<double> row(S);
      for (std::size_t s2 = 0; s2 < S; ++s2) row[s2] = mdp.transition(s, a, s2);
      per_action.push_back(row);
      reward_row.push_back(mdp.reward()(static_cast<Eigen::Index>(mdp.pair_index(s, a))));
    }
    transition.push_back(per_action);
    reward.push_back(reward_row);
  }
  std::vector<double> init(mdp.initial_dist().data(), mdp.initial_dist().data() + S);
  return {{"n_states", S},           {"n_actions", A}, {"transition", transition},
          {"reward", reward},        {"gamma", mdp.gamma()}, {"initial_dist", init}};
}

FiniteMdp mdp_from_json(const nlohmann::json& doc) {
  try {
    const auto S = doc.at("n_states").get<std::size_t>();
    const auto A = doc.at("n_actions").get<std::size_t>();
    require(S > 0 && A > 0, "mdp json: n_states and n_actions must be positive");
    const auto& transition = doc.at("transition");
    const auto& reward = doc.at("reward");
    require(transition.size() == S && reward.size() == S, "mdp json: expected S outer entries");
    MatrixXd P(static_cast<Eigen::Index>(S * A), static_cast<Eigen::Index>(S));
    VectorXd r(static_cast<Eigen::Index>(S * A));
    for (std::size_t s = 0; s < S; ++s) {
      require(transition[s].size() == A && reward[s].size() == A, "mdp json: expected A entries per state");
      for (std::size_t a = 0; a < A; ++a) {
        const auto row = transition[s][a].get<std::vector<double>>();
        require(row.size() == S, "mdp json: transition rows must have length S");
        for (std::size_t s2 = 0; s2 < S; ++s2) {
          P(static_cast<Eigen::Index>(s * A + a), static_cast<Eigen::Index>(s2)) = row[s2];
        }
        r(static_cast<Eigen::Index>(s * A + a)) = reward[s][a].get<double>();
      }
    }
    const auto init = doc.at("initial_dist").get<std::vector<double>>();
    require(init.size() == S, "mdp json: initial_dist must have length S");
    VectorXd mu(static_cast<Eigen::Index>(S));
    for (std::size_t s = 0; s < S; ++s) mu(static_cast<Eigen::Index>(s)) = init[s];
    return FiniteMdp(S, A, std::move(P), std::move(r), doc.at("gamma").get<double>(), std::move(mu));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("mdp json: ") + e.what());
  }
}

}  // namespace dicekit
