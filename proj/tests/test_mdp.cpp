#include "dicekit/envs.hpp"
#include "dicekit/errors.hpp"
#include "dicekit/mdp.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace dicekit;

namespace {

OccupancyModel occupancy(const EnvInstance& env) { return build_occupancy(env.mdp, env.policy, env.d_mu); }

// Two states that swap deterministically: irreducible with period 2.
EnvInstance flip_chain() {
  MatrixXd P(2, 2);
  P << 0, 1, 1, 0;
  FiniteMdp mdp(2, 1, P, VectorXd::Zero(2), 1.0, VectorXd::Constant(2, 0.5));
  return {"flip", mdp, PolicyTable(MatrixXd::Ones(2, 1)), VectorXd::Constant(2, 0.5)};
}

}  // namespace

TEST_CASE("hard example ratio is [1, 1]") {
  const auto m = occupancy(hard_mdp());
  CHECK(m.tau_star(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.tau_star(1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gamma = 0 reduces the occupancy to mu0") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto env = random_mdp(seed, 4, 3, 0.0);
    const auto m = occupancy(env);
    CHECK((m.d_gamma - m.mu0).lpNorm<Eigen::Infinity>() < 1e-14);
    CHECK((m.tau_star - m.mu0.cwiseQuotient(m.d_mu)).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("state-action transition matches explicit loops") {
  const auto env = random_mdp(3, 5, 2, 0.7);
  CHECK((state_action_transition(env.mdp, env.policy) - oracle::sa_transition(env.mdp, env.policy)).norm() < 1e-15);
}

TEST_CASE("continuing Boyan stationary ratio matches power iteration") {
  const auto env = boyan_chain(BoyanVariant::Continuing, 1.0);
  const auto m = occupancy(env);
  const VectorXd d = oracle::stationary_power(oracle::sa_transition(env.mdp, env.policy), 1000000);
  CHECK((m.tau_star - d.cwiseQuotient(env.d_mu)).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("discounted occupancy matches the truncated series") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double g : {0.3, 0.9, 0.99}) {
      const auto env = random_mdp(seed, 5, 3, g);
      const auto m = occupancy(env);
      CHECK((m.d_gamma - oracle::discounted_occupancy_series(env.mdp, env.policy)).lpNorm<Eigen::Infinity>() <
            1e-10);
    }
  }
  for (double g : {0.1, 0.5, 0.9}) {
    const auto env = boyan_chain(BoyanVariant::Episodic, g);
    CHECK((occupancy(env).d_gamma - oracle::discounted_occupancy_series(env.mdp, env.policy))
              .lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("apply_T examples") {
  SUBCASE("gamma = 0 returns mu0") {
    const auto m = occupancy(random_mdp(11, 3, 2, 0.0));
    const VectorXd y = VectorXd::LinSpaced(6, -2.0, 3.0);
    CHECK((apply_T(m, y) - m.mu0).norm() < 1e-15);
  }
  SUBCASE("hard example fixed point") {
    const auto m = occupancy(hard_mdp());
    const VectorXd Ty = apply_T(m, VectorXd::Ones(2));
    CHECK(Ty(0) == doctest::Approx(0.5));
    CHECK(Ty(1) == doctest::Approx(0.5));
  }
  SUBCASE("episodic Boyan gamma = 0.5") {
    const auto m = occupancy(boyan_chain(BoyanVariant::Episodic, 0.5));
    CHECK((apply_T(m, m.tau_star) - m.d_mu.cwiseProduct(m.tau_star)).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("policy value") {
  SUBCASE("constant reward") {
    for (double g : {0.0, 0.5, 1.0}) {
      const auto env = random_mdp(5, 4, 2, g);
      const auto mdp = env.mdp.with_reward(VectorXd::Constant(8, 2.5));
      CHECK(policy_value(occupancy(env), mdp) == doctest::Approx(2.5).epsilon(1e-12));
    }
  }
  SUBCASE("gamma = 0 is mu0 . r") {
    const auto env = random_mdp(6, 4, 2, 0.0);
    const auto m = occupancy(env);
    CHECK(policy_value(m, env.mdp) == doctest::Approx(m.mu0.dot(env.mdp.reward())).epsilon(1e-12));
  }
  SUBCASE("continuing Boyan with r = state index against a long simulation") {
    const auto env = boyan_chain(BoyanVariant::Continuing, 1.0);
    VectorXd r(26);
    for (int i = 0; i < 26; ++i) r(i) = i / 2;
    const auto mdp = env.mdp.with_reward(r);
    const double exact = policy_value(occupancy(env), mdp);
    const double mc = oracle::mc_average_reward(mdp, env.policy, 10000000, 2024);
    CHECK(std::abs(exact - mc) < 1e-2);
  }
}

TEST_CASE("occupancy invariants on random and benchmark models") {
  std::vector<EnvInstance> envs = {hard_mdp(), boyan_chain(BoyanVariant::Continuing, 1.0),
                                   boyan_chain(BoyanVariant::Episodic, 0.9)};
  for (std::uint64_t seed = 0; seed < 20; ++seed) envs.push_back(random_mdp(seed, 6, 3, seed % 2 ? 1.0 : 0.8));
  for (const auto& env : envs) {
    const auto m = occupancy(env);
    CHECK((apply_T(m, m.tau_star) - m.d_mu.cwiseProduct(m.tau_star)).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK(std::abs(m.d_mu.dot(m.tau_star) - 1.0) < 1e-10);
    CHECK(std::abs(m.d_gamma.sum() - 1.0) < 1e-10);
    CHECK(m.d_gamma.minCoeff() > -1e-12);
  }
}

TEST_CASE("ratio is continuous as gamma approaches 1 on the continuing chain") {
  const auto t1 = occupancy(boyan_chain(BoyanVariant::Continuing, 1.0)).tau_star;
  const auto t0 = occupancy(boyan_chain(BoyanVariant::Continuing, 1.0 - 1e-6)).tau_star;
  CHECK((t1 - t0).lpNorm<Eigen::Infinity>() < 1e-3);
}

TEST_CASE("stationary distribution is the unique normalized fixed point") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto env = random_mdp(seed, 5, 2, 1.0);
    const auto m = occupancy(env);
    const MatrixXd M = m.P_pi.transpose() - MatrixXd::Identity(10, 10);
    Eigen::JacobiSVD<MatrixXd> svd(M, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    CHECK(sv(8) > 1e-8);  // one-dimensional kernel
    VectorXd v = svd.matrixV().col(9);
    v /= v.sum();
    CHECK(v.minCoeff() >= 0.0);
    CHECK((v - m.d_gamma).lpNorm<Eigen::Infinity>() < 1e-8);
  }
}

TEST_CASE("ergodicity check") {
  CHECK(check_ergodicity(occupancy(hard_mdp()).P_pi).ergodic());
  const auto flip = flip_chain();
  const auto rep = check_ergodicity(state_action_transition(flip.mdp, flip.policy));
  CHECK(rep.irreducible);
  CHECK(rep.period == 2);
  CHECK_THROWS_AS(build_occupancy(flip.mdp, flip.policy, flip.d_mu), NonErgodic);
  const auto epi = boyan_chain(BoyanVariant::Episodic, 1.0);
  CHECK_THROWS_AS(build_occupancy(epi.mdp, epi.policy, epi.d_mu), NonErgodic);
  // Reducible: two absorbing states.
  FiniteMdp two(2, 1, MatrixXd::Identity(2, 2), VectorXd::Zero(2), 1.0, VectorXd::Constant(2, 0.5));
  CHECK_FALSE(check_ergodicity(state_action_transition(two, PolicyTable(MatrixXd::Ones(2, 1)))).irreducible);
}

TEST_CASE("input validation") {
  MatrixXd P = MatrixXd::Constant(2, 2, 0.5);
  const VectorXd r = VectorXd::Zero(2);
  const VectorXd mu = VectorXd::Constant(2, 0.5);
  CHECK_NOTHROW(FiniteMdp(2, 1, P, r, 0.9, mu));
  MatrixXd bad = P;
  bad(0, 0) = 0.6;
  CHECK_THROWS_AS(FiniteMdp(2, 1, bad, r, 0.9, mu), InvalidArgument);
  bad(0, 0) = 1.5;
  bad(0, 1) = -0.5;
  CHECK_THROWS_AS(FiniteMdp(2, 1, bad, r, 0.9, mu), InvalidArgument);
  CHECK_THROWS_AS(FiniteMdp(2, 1, P, r, 1.1, mu), InvalidArgument);
  CHECK_THROWS_AS(FiniteMdp(2, 1, P, r, -0.1, mu), InvalidArgument);
  CHECK_THROWS_AS(FiniteMdp(2, 1, P, r, 0.9, VectorXd::Constant(2, 0.4)), InvalidArgument);
  CHECK_THROWS_AS(FiniteMdp(3, 1, P, r, 0.9, mu), InvalidArgument);
  CHECK_THROWS_AS(PolicyTable(MatrixXd::Constant(2, 2, 0.6)), InvalidArgument);

  const auto env = hard_mdp();
  CHECK_THROWS_AS(build_occupancy(env.mdp, env.policy, VectorXd(VectorXd::Unit(2, 0))), InvalidArgument);
  CHECK_THROWS_AS(build_occupancy(env.mdp, env.policy, VectorXd::Constant(3, 1.0 / 3)), InvalidArgument);
}

TEST_CASE("MDP JSON round trip") {
  const auto env = random_mdp(8, 3, 2, 0.75);
  const auto doc = mdp_to_json(env.mdp);
  const auto back = mdp_from_json(doc);
  CHECK(back.n_states() == 3);
  CHECK(back.n_actions() == 2);
  CHECK(back.gamma() == 0.75);
  CHECK(back.transition() == env.mdp.transition());
  CHECK(back.reward() == env.mdp.reward());
  CHECK(back.initial_dist() == env.mdp.initial_dist());

  auto broken = doc;
  broken["transition"][0][0][0] = 5.0;
  CHECK_THROWS_AS(mdp_from_json(broken), InvalidArgument);
}
