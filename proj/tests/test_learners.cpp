#include "dicekit/analytic.hpp"
#include "dicekit/envs.hpp"
#include "dicekit/errors.hpp"
#include "dicekit/harness.hpp"
#include "dicekit/learners.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <random>

using namespace dicekit;

namespace {

struct Fixture {
  EnvInstance env;
  OccupancyModel model;
  FeatureMap X;
};

Fixture make(EnvInstance env, FeatureKind kind = FeatureKind::Tabular) {
  auto model = build_occupancy(env.mdp, env.policy, env.d_mu);
  auto X = make_features(env, kind);
  return {std::move(env), std::move(model), std::move(X)};
}

VectorXd randn(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

VectorXd flat(const Direction& d) {
  VectorXd v(d.w.size() + d.kappa.size() + 1);
  v << d.w, d.kappa, d.eta;
  return v;
}

LearnerState random_state(std::mt19937_64& rng, const Fixture& f, double lambda, double xi) {
  auto s = LearnerState::zeros(f.X.dim(), f.env.mdp.n_actions(), f.model.gamma, lambda, xi, LrSchedule::constant(0.1));
  s.w = randn(rng, static_cast<Eigen::Index>(f.X.dim()));
  s.kappa = randn(rng, static_cast<Eigen::Index>(f.X.dim()));
  s.eta = randn(rng, 1)(0);
  return s;
}

constexpr std::array<Algo, 3> kAlgos = {Algo::GradientDICE, Algo::GenDICE, Algo::DualDICE};

}  // namespace

TEST_CASE("learning-rate schedules") {
  CHECK(LrSchedule::constant(0.3).at(1000) == 0.3);
  const auto rm = LrSchedule::robbins_monro(0.5, 0.75);
  CHECK(rm.at(0) == 0.5);
  CHECK(rm.at(15) == doctest::Approx(0.5 / 8.0));
  CHECK_THROWS_AS(LrSchedule::robbins_monro(0.5, 0.5), InvalidArgument);
  CHECK_THROWS_AS(LrSchedule::robbins_monro(0.5, 1.1), InvalidArgument);
  CHECK_THROWS_AS(LrSchedule::constant(0.0), InvalidArgument);
  CHECK_THROWS_AS(LearnerState::zeros(2, 1, 1.0, 0.0, 0.0, rm), InvalidArgument);
  CHECK_THROWS_AS(LearnerState::zeros(2, 1, 1.0, 1.0, -1.0, rm), InvalidArgument);
}

TEST_CASE("GradientDICE single steps") {
  SUBCASE("hard example from zero") {
    const auto f = make(hard_mdp());
    auto s = LearnerState::zeros(2, 2, 1.0, 1.0, 0.0, LrSchedule::constant(0.1));
    const auto ds = sample_dataset(f.env, f.model, 1, 0);
    gradientdice_step(s, ds.samples[0], f.X);
    CHECK(s.kappa.isZero());
    CHECK(s.w.isZero());
    CHECK(s.eta == doctest::Approx(-0.1));
    CHECK(s.t == 1);
  }
  SUBCASE("gamma = 0 from zero moves kappa to alpha x0") {
    const auto f = make(random_mdp(4, 3, 2, 0.0));
    const auto ds = sample_dataset(f.env, f.model, 5, 1);
    for (const auto& x : ds.samples) {
      auto s = LearnerState::zeros(6, 2, 0.0, 1.0, 0.0, LrSchedule::constant(0.1));
      gradientdice_step(s, x, f.X);
      CHECK((s.kappa - 0.1 * VectorXd(f.X.row(pair_indices(x, 2).init))).norm() < 1e-15);
    }
  }
}

TEST_CASE("GradientDICE updates are simultaneous") {
  const auto f = make(boyan_chain(BoyanVariant::Continuing, 1.0), FeatureKind::BoyanLinear);
  std::mt19937_64 rng(10);
  const auto ds = sample_dataset(f.env, f.model, 20, 2);
  for (const auto& x : ds.samples) {
    const auto pre = random_state(rng, f, 1.0, 0.01);
    auto stepped = pre;
    gradientdice_step(stepped, x, f.X);

    const auto idx = pair_indices(x, 2);
    const VectorXd x0 = f.X.row(idx.init), xc = f.X.row(idx.cur), xn = f.X.row(idx.next);
    const double a = 0.1, g = 1.0, lam = 1.0, xi = 0.01;
    // Apply the four block updates in every order, always reading the pre-step snapshot.
    std::array<int, 3> order = {0, 1, 2};
    do {
      auto s = pre;
      for (int block : order) {
        if (block == 0) {
          const VectorXd delta = (1 - g) * x0 + g * xc.dot(pre.w) * xn - xc.dot(pre.w) * xc;
          s.kappa = pre.kappa + a * (delta - xc.dot(pre.kappa) * xc);
        } else if (block == 1) {
          s.eta = pre.eta + a * lam * (xc.dot(pre.w) - 1 - pre.eta);
        } else {
          s.w = pre.w - a * (g * xn.dot(pre.kappa) * xc - xc.dot(pre.kappa) * xc + lam * pre.eta * xc + xi * pre.w);
        }
      }
      CHECK((s.kappa - stepped.kappa).norm() < 1e-14);
      CHECK((s.w - stepped.w).norm() < 1e-14);
      CHECK(std::abs(s.eta - stepped.eta) < 1e-14);
    } while (std::next_permutation(order.begin(), order.end()));
  }
}

TEST_CASE("GradientDICE direction is affine in the parameters") {
  const auto f = make(random_mdp(7, 4, 2, 0.8));
  std::mt19937_64 rng(11);
  const auto ds = sample_dataset(f.env, f.model, 10, 3);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  for (const auto& x : ds.samples) {
    const auto p = random_state(rng, f, 1.0, 0.1);
    const auto q = random_state(rng, f, 1.0, 0.1);
    const double t = U(rng);
    auto mix = p;
    mix.w = t * p.w + (1 - t) * q.w;
    mix.kappa = t * p.kappa + (1 - t) * q.kappa;
    mix.eta = t * p.eta + (1 - t) * q.eta;
    const VectorXd lhs = flat(gradientdice_direction(mix, x, f.X));
    const VectorXd rhs = t * flat(gradientdice_direction(p, x, f.X)) + (1 - t) * flat(gradientdice_direction(q, x, f.X));
    CHECK((lhs - rhs).norm() < 1e-12 * (1 + rhs.norm()));
  }
}

TEST_CASE("per-sample directions are unbiased for the analytic gradients") {
  std::vector<Fixture> fixtures;
  fixtures.push_back(make(boyan_chain(BoyanVariant::Continuing, 1.0), FeatureKind::BoyanLinear));
  fixtures.push_back(make(boyan_chain(BoyanVariant::Episodic, 0.5)));
  fixtures.push_back(make(random_mdp(12, 3, 2, 0.7)));
  std::mt19937_64 rng(12);
  for (const auto& f : fixtures) {
    for (Algo algo : kAlgos) {
      for (int k = 0; k < 3; ++k) {
        const auto st = random_state(rng, f, 0.8, 0.05);
        const VectorXd exact = flat(expected_direction(algo, st, f.model, f.X));
        const VectorXd mean = oracle::enumerate_expectation(
            f.env, f.model, VectorXd(VectorXd::Zero(exact.size())),
            [&](const TransitionSample& x) { return flat(sample_direction(algo, st, x, f.X)); });
        CHECK((mean - exact).norm() < 1e-10 * (1 + exact.norm()));
      }
    }
  }
}

TEST_CASE("sample-average directions match the analytic gradients on the hard example") {
  for (double g : {1.0, 0.5}) {
    const auto f = make(make_env("hard", g));
    const auto ds = sample_dataset(f.env, f.model, 100000, 42);
    std::mt19937_64 rng(13);
    for (Algo algo : kAlgos) {
      for (int k = 0; k < 10; ++k) {
        const auto st = random_state(rng, f, 1.0, 0.01);
        const VectorXd exact = flat(expected_direction(algo, st, f.model, f.X));
        VectorXd mean = VectorXd::Zero(exact.size());
        for (const auto& x : ds.samples) mean += flat(sample_direction(algo, st, x, f.X));
        mean /= static_cast<double>(ds.size());
        CHECK((mean - exact).norm() / exact.norm() < 5e-3);
      }
    }
  }
}

TEST_CASE("batch step averages the per-sample directions") {
  const auto f = make(random_mdp(14, 3, 2, 0.9));
  const auto ds = sample_dataset(f.env, f.model, 8, 4);
  std::mt19937_64 rng(14);
  for (Algo algo : kAlgos) {
    const auto st = random_state(rng, f, 1.0, 0.0);
    auto batched = st;
    batch_step(algo, batched, ds.samples, f.X);
    Direction mean{VectorXd::Zero(6), VectorXd::Zero(6), 0.0};
    for (const auto& x : ds.samples) {
      const auto d = sample_direction(algo, st, x, f.X);
      mean.w += d.w / 8.0;
      mean.kappa += d.kappa / 8.0;
      mean.eta += d.eta / 8.0;
    }
    auto manual = st;
    apply_direction(manual, mean);
    CHECK((manual.w - batched.w).norm() < 1e-14);
    CHECK((manual.kappa - batched.kappa).norm() < 1e-14);
  }
  auto st = LearnerState::zeros(6, 2, 0.9, 1.0, 0.0, LrSchedule::constant(0.1));
  CHECK_THROWS_AS(batch_step(Algo::ProjectedGradientDICE, st, ds.samples, f.X), InvalidArgument);
}

TEST_CASE("exact-gradient GradientDICE converges to the expected-update limit") {
  const auto f = make(boyan_chain(BoyanVariant::Continuing, 1.0));
  auto st = LearnerState::zeros(26, 2, 1.0, 1.0, 0.01, LrSchedule::constant(0.25));
  for (int t = 0; t < 20000; ++t) expected_step(Algo::GradientDICE, st, f.model, f.X);
  const auto eu = expected_update(f.model, f.X, 1.0, 0.01);
  const VectorXd limit = -eu.G.fullPivLu().solve(eu.g);
  VectorXd d(53);
  d << st.kappa, st.w, st.eta;
  CHECK((d - limit).norm() < 1e-8);
}

TEST_CASE("divergence is detected") {
  const auto f = make(boyan_chain(BoyanVariant::Episodic, 0.9));
  const auto ds = sample_dataset(f.env, f.model, 1000, 5);
  auto st = LearnerState::zeros(26, 2, 0.9, 1.0, 0.0, LrSchedule::constant(50.0));
  CHECK_THROWS_AS(
      [&] {
        for (int rep = 0; rep < 100; ++rep)
          for (const auto& x : ds.samples) gradientdice_step(st, x, f.X);
      }(),
      Diverged);
  auto nan_state = LearnerState::zeros(26, 2, 0.9, 1.0, 0.0, LrSchedule::constant(0.1));
  nan_state.w(0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(gradientdice_step(nan_state, ds.samples[0], f.X), Diverged);
}

TEST_CASE("GenDICE on the hard example") {
  const auto f = make(hard_mdp());
  const auto ds = sample_dataset(f.env, f.model, 500, 6);
  SUBCASE("stuck at the spurious stationary point") {
    auto st = LearnerState::zeros(2, 2, 1.0, 1.0, 0.0, LrSchedule::constant(0.1));
    st.eta = -1.0;
    for (int t = 0; t < 100; ++t) expected_step(Algo::GenDICE, st, f.model, f.X);
    CHECK(st.w.isZero());
    CHECK(st.kappa.isZero());
    CHECK(st.eta == -1.0);
    for (const auto& x : ds.samples) gendice_step(st, x, f.X);
    CHECK(st.w.isZero());
    CHECK(st.kappa.isZero());
    CHECK(st.eta == -1.0);
  }
  SUBCASE("the true ratio is also stationary") {
    auto st = LearnerState::zeros(2, 2, 1.0, 1.0, 0.0, LrSchedule::constant(0.1));
    st.w = VectorXd::Ones(2);
    for (int t = 0; t < 100; ++t) expected_step(Algo::GenDICE, st, f.model, f.X);
    CHECK((st.w - VectorXd::Ones(2)).norm() < 1e-14);
    CHECK(st.kappa.norm() < 1e-14);
    CHECK(std::abs(st.eta) < 1e-14);
  }
  SUBCASE("theta = 0 predicts zero and pushes eta toward -1") {
    const auto r = make(random_mdp(15, 3, 2, 0.5));
    std::mt19937_64 rng(15);
    auto st = random_state(rng, r, 2.0, 0.0);
    st.w.setZero();
    CHECK(predict_tau(st, r.X, Algo::GenDICE).isZero());
    CHECK(r.model.d_mu.dot(predict_tau(st, r.X, Algo::GenDICE)) == 0.0);
    const auto rds = sample_dataset(r.env, r.model, 10, 7);
    for (const auto& x : rds.samples) CHECK(gendice_direction(st, x, r.X).eta == doctest::Approx(2.0 * (-1.0 - st.eta)));
  }
}

TEST_CASE("DualDICE") {
  SUBCASE("zeta ascent direction at zeta = 0 and gamma = 0") {
    const auto f = make(random_mdp(16, 3, 2, 0.0));
    std::mt19937_64 rng(16);
    auto st = random_state(rng, f, 1.0, 0.0);
    st.kappa.setZero();
    for (const auto& x : sample_dataset(f.env, f.model, 10, 8).samples) {
      const VectorXd xc = f.X.row(pair_indices(x, 2).cur);
      CHECK((dualdice_direction(st, x, f.X).kappa - xc.dot(st.w) * xc).norm() < 1e-15);
    }
  }
  SUBCASE("tuned DualDICE on the episodic chain at gamma = 0.1") {
    ExperimentConfig c;
    c.env = "boyan-episodic";
    c.gamma = 0.1;
    c.algo = Algo::DualDICE;
    c.lr = LrSchedule::constant(1.0 / 64.0);
    c.seeds = default_seeds(3);
    double mean = 0.0;
    for (const auto& r : run_experiment(c)) mean += r.final_mse() / 3.0;
    CHECK(mean < 0.05);
  }
}

TEST_CASE("predict_tau") {
  const auto f = make(boyan_chain(BoyanVariant::Continuing, 1.0));
  auto st = LearnerState::zeros(26, 2, 1.0, 1.0, 0.0, LrSchedule::constant(0.1));
  st.w = f.model.tau_star;
  CHECK(predict_tau(st, f.X, Algo::GradientDICE) == f.model.tau_star);
  st.kappa = f.model.tau_star;
  CHECK(predict_tau(st, f.X, Algo::DualDICE) == f.model.tau_star);

  const auto h = make(hard_mdp());
  auto g = LearnerState::zeros(2, 2, 1.0, 1.0, 0.0, LrSchedule::constant(0.1));
  g.w << -1, 1;
  CHECK(predict_tau(g, h.X, Algo::GenDICE) == VectorXd::Ones(2));

  const auto lin = make(boyan_chain(BoyanVariant::Continuing, 1.0), FeatureKind::BoyanLinear);
  auto z = LearnerState::zeros(8, 2, 1.0, 1.0, 0.0, LrSchedule::constant(0.1));
  const VectorXd pred = predict_tau(z, lin.X, Algo::GradientDICE);
  CHECK(pred.isZero());
  CHECK(mse_tau(pred, lin.model) == doctest::Approx(lin.model.tau_star.squaredNorm() / 26));
}

TEST_CASE("projected GradientDICE blocks match the full per-sample update") {
  MatrixXd F(4, 2);
  F << 1.0, 0.5, -0.3, 2.0, 0.7, -1.1, 0.2, 0.9;
  const FeatureMap X(F, FeatureKind::Custom);
  const auto env = random_mdp(17, 2, 2, 0.6);
  const auto m = build_occupancy(env.mdp, env.policy, env.d_mu);
  for (const auto& x : sample_dataset(env, m, 10, 9).samples) {
    const auto b = projected_blocks(x, X, 2, 0.6, 0.8, 0.05);
    const auto idx = pair_indices(x, 2);
    auto [G, g] = oracle::per_sample_G(X.row(idx.init), X.row(idx.cur), X.row(idx.next), 0.6, 0.8, 0.05);
    // Oracle ordering is [kappa(0..1); w(2..3); eta(4)], y = [kappa; eta].
    const std::array<int, 3> y_idx = {0, 1, 4};
    const std::array<int, 2> w_idx = {2, 3};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(b.G1(i, j) == doctest::Approx(G(y_idx[i], y_idx[j])));
      for (int j = 0; j < 2; ++j) CHECK(b.G2(i, j) == doctest::Approx(G(y_idx[i], w_idx[j])));
      CHECK(b.G5(i) == doctest::Approx(g(y_idx[i])));
    }
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(b.G3(i, j) == doctest::Approx(G(w_idx[i], y_idx[j])));
      for (int j = 0; j < 2; ++j) CHECK(b.G4(i, j) == doctest::Approx(G(w_idx[i], w_idx[j])));
    }
  }
}

TEST_CASE("projected GradientDICE") {
  const auto f = make(boyan_chain(BoyanVariant::Continuing, 1.0));
  SUBCASE("learning rate") {
    ProjectedConfig pc;
    pc.c = 3.0;
    pc.m_star = 2.0;
    pc.n = 400;
    CHECK(pc.alpha() == doctest::Approx(2.0 * 3.0 / (2.0 * 20.0)));
  }
  SUBCASE("iterates stay in the balls") {
    ProjectedConfig pc;
    pc.radius_w = 0.7;
    pc.radius_y = 0.3;
    pc.c = 20.0;
    pc.n = 3000;
    pc.xi = 0.01;
    ProjectedGradientDice learner(f.X, 2, 1.0, pc);
    const auto ds = sample_dataset(f.env, f.model, 3000, 10);
    for (const auto& x : ds.samples) {
      learner.step(x);
      CHECK(learner.state().w.norm() <= pc.radius_w * (1 + 1e-14));
      CHECK(learner.y().norm() <= pc.radius_y * (1 + 1e-14));
    }
    CHECK(learner.avg_w().norm() <= pc.radius_w * (1 + 1e-12));
  }
  SUBCASE("a vanishing feasible set pins the output at zero") {
    ProjectedConfig pc;
    pc.radius_w = 1e-300;
    pc.radius_y = 1e-300;
    pc.n = 500;
    const auto ds = sample_dataset(f.env, f.model, 500, 11);
    const auto out = projected_gradientdice_run(ds, f.X, 1.0, pc);
    CHECK(out.avg_w.norm() <= 1e-300);
    CHECK(out.avg_y.norm() <= 1e-300);
  }
  SUBCASE("optimality gap shrinks with n") {
    const double xi = 0.01;
    const auto eu = expected_update(f.model, f.X, 1.0, xi);
    const auto sp = saddle_point(eu);
    ProjectedConfig pc;
    pc.xi = xi;
    pc.radius_w = sp.w.norm() + 5;
    pc.radius_y = sp.y.norm() + 5;
    auto gap = [&](std::size_t n) {
      double total = 0.0;
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        pc.n = n;
        const auto ds = sample_dataset(f.env, f.model, n, 1000 + seed);
        const auto out = projected_gradientdice_run(ds, f.X, 1.0, pc);
        total += epsilon_opt(eu, out.avg_w, out.avg_y, pc.radius_w, pc.radius_y) / 5.0;
      }
      return total;
    };
    const double e1 = gap(1000), e2 = gap(4000), e3 = gap(16000);
    CHECK(e2 <= e1);
    CHECK(e3 <= e2);
    CHECK(gap(40000) / gap(10000) <= 0.7);
  }
  CHECK_THROWS_AS(ProjectedGradientDice(f.X, 2, 1.0, ProjectedConfig{1.0, 0.0, -1.0, 1.0, 1.0, 1.0, 10}),
                  InvalidArgument);
}
