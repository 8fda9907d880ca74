#include "dicekit/envs.hpp"
#include "dicekit/errors.hpp"
#include "dicekit/mdp.hpp"

#include <doctest.h>

using namespace dicekit;

TEST_CASE("Boyan chain transitions") {
  const auto epi = boyan_chain(BoyanVariant::Episodic, 0.9);
  const auto con = boyan_chain(BoyanVariant::Continuing, 1.0);
  CHECK(epi.mdp.n_states() == 13);
  CHECK(epi.mdp.n_actions() == 2);
  CHECK(epi.mdp.transition(0, 0, 0) == 1.0);
  CHECK(epi.mdp.transition(0, 1, 0) == 1.0);
  for (std::size_t s = 0; s < 13; ++s) CHECK(con.mdp.transition(0, 1, s) == doctest::Approx(1.0 / 13));
  CHECK(con.mdp.transition(1, 0, 0) == 1.0);
  CHECK(con.mdp.transition(1, 1, 0) == 1.0);
  for (std::size_t s = 2; s < 13; ++s) {
    CHECK(epi.mdp.transition(s, 0, s - 1) == 1.0);
    CHECK(epi.mdp.transition(s, 1, s - 2) == 1.0);
  }
  for (std::size_t s = 0; s < 13; ++s) {
    CHECK(con.policy(s, 0) == doctest::Approx(0.1));
    CHECK(con.mdp.initial_dist()(s) == doctest::Approx(1.0 / 13));
  }
  CHECK(con.d_mu.size() == 26);
  CHECK(con.d_mu.minCoeff() == doctest::Approx(1.0 / 26));
  CHECK(con.d_mu.maxCoeff() == doctest::Approx(1.0 / 26));
  CHECK(con.d_mu.sum() == doctest::Approx(1.0));
  CHECK(con.mdp.reward().isZero());
}

TEST_CASE("Boyan features") {
  const auto x8 = boyan_state_feature(8);
  CHECK(x8 == (VectorXd(4) << 0, 1, 0, 0).finished());
  const auto x11 = boyan_state_feature(11);
  CHECK((x11 - (VectorXd(4) << 0.75, 0.25, 0, 0).finished()).norm() < 1e-15);
  CHECK(boyan_state_feature(12) == (VectorXd(4) << 1, 0, 0, 0).finished());
  CHECK(boyan_state_feature(0) == (VectorXd(4) << 0, 0, 0, 1).finished());

  const auto X = boyan_features(true);
  CHECK(X.dim() == 8);
  CHECK(X.n_pairs() == 26);
  CHECK(X.kind() == FeatureKind::BoyanLinear);
  const VectorXd x8a1 = X.row(8 * 2 + 1);
  CHECK(x8a1 == (VectorXd(8) << 0, 0, 0, 0, 0, 1, 0, 0).finished());
  const VectorXd x8a0 = X.row(8 * 2);
  CHECK(x8a0 == (VectorXd(8) << 0, 1, 0, 0, 0, 0, 0, 0).finished());

  const auto T = boyan_features(false);
  CHECK(T.kind() == FeatureKind::Tabular);
  CHECK(T.X() == MatrixXd::Identity(26, 26));
}

TEST_CASE("feature rank check") {
  MatrixXd X(3, 2);
  X << 1, 2, 2, 4, 3, 6;
  CHECK_THROWS_AS(FeatureMap(X, FeatureKind::Custom), RankDeficientFeatures);
  X(2, 1) = 7;
  CHECK_NOTHROW(FeatureMap(X, FeatureKind::Custom));
  CHECK_THROWS_AS(FeatureMap(MatrixXd::Ones(2, 3), FeatureKind::Custom), RankDeficientFeatures);
}

TEST_CASE("hard example MDP") {
  const auto env = hard_mdp();
  const auto m = build_occupancy(env.mdp, env.policy, env.d_mu);
  CHECK(env.mdp.gamma() == 1.0);
  CHECK(m.tau_star.isApprox(VectorXd::Ones(2), 1e-12));
  CHECK(m.P_pi.isApprox(MatrixXd::Constant(2, 2, 0.5)));
  CHECK(m.mu0.isApprox(VectorXd::Constant(2, 0.5)));
  CHECK(env.d_mu.isApprox(VectorXd::Constant(2, 0.5)));
  CHECK(env.mdp.reward().isZero());
}

TEST_CASE("random MDP generator") {
  const auto a = random_mdp(17, 6, 3, 1.0);
  const auto b = random_mdp(17, 6, 3, 1.0);
  CHECK(a.mdp.transition() == b.mdp.transition());
  CHECK(a.policy.probs() == b.policy.probs());
  CHECK(a.d_mu == b.d_mu);
  CHECK(a.mdp.reward() == b.mdp.reward());
  CHECK(random_mdp(18, 6, 3, 1.0).mdp.transition() != a.mdp.transition());
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto env = random_mdp(seed, 5, 3, 1.0);
    const auto& P = env.mdp.transition();
    CHECK((P.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(P.minCoeff() >= 1e-3);
    CHECK(env.policy.probs().minCoeff() >= 1e-2);
    CHECK(env.d_mu.minCoeff() >= 1e-3);
    CHECK(std::abs(env.d_mu.sum() - 1.0) < 1e-12);
    CHECK_NOTHROW(build_occupancy(env.mdp, env.policy, env.d_mu));
  }
}

TEST_CASE("named environments") {
  CHECK(make_env("boyan-episodic").mdp.gamma() == 0.9);
  CHECK(make_env("boyan-continuing").mdp.gamma() == 1.0);
  CHECK(make_env("hard").mdp.gamma() == 1.0);
  CHECK(make_env("hard", 0.5).mdp.gamma() == 0.5);
  const auto r = make_env("random:4:5:2", 0.3);
  CHECK(r.mdp.n_states() == 5);
  CHECK(r.mdp.n_actions() == 2);
  CHECK(r.mdp.transition() == random_mdp(4, 5, 2, 0.3).mdp.transition());
  CHECK_THROWS_AS(make_env("nope"), InvalidArgument);
  CHECK_THROWS_AS(make_env("random:1:2"), InvalidArgument);
  CHECK_THROWS_AS(make_features(hard_mdp(), FeatureKind::BoyanLinear), InvalidArgument);
  CHECK(feature_kind_from_string(to_string(FeatureKind::BoyanLinear)) == FeatureKind::BoyanLinear);
}
