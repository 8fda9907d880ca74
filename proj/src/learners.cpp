#include "dicekit/learners.hpp"

#include "dicekit/analytic.hpp"
#include "dicekit/errors.hpp"

#include <cmath>

namespace dicekit {

namespace {

void check_finite(const LearnerState& s) {
  auto bad = [](const VectorXd& v) {
    return !v.allFinite() || (v.size() > 0 && v.cwiseAbs().maxCoeff() > kDivergenceBound);
  };
  if (bad(s.w) || bad(s.kappa) || !std::isfinite(s.eta) || std::abs(s.eta) > kDivergenceBound) {
    throw Diverged("learner diverged at step " + std::to_string(s.t));
  }
}

}  // namespace

std::string to_string(Algo algo) {
  switch (algo) {
    case Algo::GradientDICE: return "GradientDICE";
    case Algo::ProjectedGradientDICE: return "ProjectedGradientDICE";
    case Algo::GenDICE: return "GenDICE";
    case Algo::DualDICE: return "DualDICE";
  }
  return "unknown";
}

Algo algo_from_string(std::string_view name) {
  if (name == "GradientDICE" || name == "gradientdice") return Algo::GradientDICE;
  if (name == "ProjectedGradientDICE" || name == "projected-gradientdice") return Algo::ProjectedGradientDICE;
  if (name == "GenDICE" || name == "gendice") return Algo::GenDICE;
  if (name == "DualDICE" || name == "dualdice") return Algo::DualDICE;
  throw InvalidArgument("unknown algorithm '" + std::string(name) + "'");
}

LrSchedule LrSchedule::constant(double alpha) {
  if (!(alpha > 0.0)) throw InvalidArgument("learning rate must be positive");
  return {Kind::Constant, alpha, 0.0};
}

LrSchedule LrSchedule::robbins_monro(double alpha0, double power) {
  if (!(alpha0 > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(power > 0.5 && power <= 1.0)) throw InvalidArgument("Robbins-Monro power must lie in (0.5, 1]");
  return {Kind::RobbinsMonro, alpha0, power};
}

double LrSchedule::at(std::int64_t t) const {
  if (kind == Kind::Constant) return alpha;
  return alpha / std::pow(static_cast<double>(t + 1), power);
}

LearnerState LearnerState::zeros(std::size_t dim, std::size_t n_actions, double gamma, double lambda, double xi,
                                 LrSchedule lr) {
  if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  if (!(xi >= 0.0)) throw InvalidArgument("xi must be non-negative");
  LearnerState s;
  const auto K = static_cast<Eigen::Index>(dim);
  s.w = VectorXd::Zero(K);
  s.kappa = VectorXd::Zero(K);
  s.avg_w = VectorXd::Zero(K);
  s.avg_y = VectorXd::Zero(K + 1);
  s.lr = lr;
  s.lambda = lambda;
  s.xi = xi;
  s.gamma = gamma;
  s.n_actions = n_actions;
  return s;
}

Direction gradientdice_direction(const LearnerState& st, const TransitionSample& sample, const FeatureMap& X) {
  const auto idx = pair_indices(sample, st.n_actions);
  const auto x0 = X.row(idx.init);
  const auto x = X.row(idx.cur);
  const auto xn = X.row(idx.next);
  const double g = st.gamma;
  const double tau = x.dot(st.w);
  const double f = x.dot(st.kappa);
  const double f_next = xn.dot(st.kappa);

  Direction d;
  // delta = (1-g) x0 + g tau x' - tau x
  d.kappa = (1.0 - g) * x0 + (g * tau) * xn - (tau + f) * x;
  d.eta = st.lambda * (tau - 1.0 - st.eta);
  d.w = -((g * f_next - f + st.lambda * st.eta) * x + st.xi * st.w);
  return d;
}

Direction gendice_direction(const LearnerState& st, const TransitionSample& sample, const FeatureMap& X) {
  const auto idx = pair_indices(sample, st.n_actions);
  const auto x0 = X.row(idx.init);
  const auto x = X.row(idx.cur);
  const auto xn = X.row(idx.next);
  const double g = st.gamma;
  const double u = x.dot(st.w);
  const double tau = u * u;
  const double f = x.dot(st.kappa);
  const double f_next = xn.dot(st.kappa);

  Direction d;
  d.kappa = (1.0 - g) * x0 + (g * tau) * xn - (tau * (1.0 + 0.5 * f)) * x;
  d.eta = st.lambda * (tau - 1.0 - st.eta);
  d.w = -((2.0 * u * (g * f_next - chi2_conjugate(f) + st.lambda * st.eta)) * x + st.xi * st.w);
  return d;
}

Direction dualdice_direction(const LearnerState& st, const TransitionSample& sample, const FeatureMap& X) {
  const auto idx = pair_indices(sample, st.n_actions);
  const auto x0 = X.row(idx.init);
  const auto x = X.row(idx.cur);
  const auto xn = X.row(idx.next);
  const double g = st.gamma;
  const double nu = x.dot(st.w);
  const double nu_next = xn.dot(st.w);
  const double zeta = x.dot(st.kappa);

  Direction d;
  d.kappa = (nu - g * nu_next - zeta * std::abs(zeta)) * x;
  d.eta = 0.0;
  d.w = -(zeta * (x - g * xn) - (1.0 - g) * x0 + st.xi * st.w);
  return d;
}

Direction sample_direction(Algo algo, const LearnerState& state, const TransitionSample& sample, const FeatureMap& X) {
  switch (algo) {
    case Algo::GradientDICE:
    case Algo::ProjectedGradientDICE:
      return gradientdice_direction(state, sample, X);
    case Algo::GenDICE:
      return gendice_direction(state, sample, X);
    case Algo::DualDICE:
      return dualdice_direction(state, sample, X);
  }
  throw InvalidArgument("sample_direction: unknown algorithm");
}

Direction expected_direction(Algo algo, const LearnerState& st, const OccupancyModel& model, const FeatureMap& X) {
  Direction d;
  switch (algo) {
    case Algo::GradientDICE:
    case Algo::ProjectedGradientDICE: {
      const auto grad = saddle_L_gradient(model, X, st.w, st.kappa, st.eta, st.lambda, st.xi);
      d.w = -grad.w;
      d.kappa = grad.kappa;
      d.eta = grad.eta;
      return d;
    }
    case Algo::GenDICE: {
      const auto grad = J_gradient(model, X, st.w, st.kappa, st.eta, st.lambda);
      d.w = -(grad.w + st.xi * st.w);
      d.kappa = grad.kappa;
      d.eta = grad.eta;
      return d;
    }
    case Algo::DualDICE: {
      const auto grad = dualdice_gradient(model, X, st.w, st.kappa, st.xi);
      d.w = -grad.w;
      d.kappa = grad.kappa;
      d.eta = 0.0;
      return d;
    }
  }
  throw InvalidArgument("expected_direction: unknown algorithm");
}

void apply_direction(LearnerState& st, const Direction& dir) {
  const double alpha = st.lr.at(st.t);
  const double dual = alpha * st.dual_lr_scale;
  st.w += alpha * dir.w;
  st.kappa += dual * dir.kappa;
  st.eta += dual * dir.eta;
  ++st.t;
  check_finite(st);
}

void gradientdice_step(LearnerState& state, const TransitionSample& sample, const FeatureMap& X) {
  apply_direction(state, gradientdice_direction(state, sample, X));
}

void gendice_step(LearnerState& state, const TransitionSample& sample, const FeatureMap& X) {
  apply_direction(state, gendice_direction(state, sample, X));
}

void dualdice_step(LearnerState& state, const TransitionSample& sample, const FeatureMap& X) {
  apply_direction(state, dualdice_direction(state, sample, X));
}

void batch_step(Algo algo, LearnerState& state, std::span<const TransitionSample> batch, const FeatureMap& X) {
  if (algo == Algo::ProjectedGradientDICE) {
    throw InvalidArgument("batch_step: use ProjectedGradientDice for the projected variant");
  }
  if (batch.empty()) throw InvalidArgument("batch_step: empty batch");
  if (batch.size() == 1) {
    apply_direction(state, sample_direction(algo, state, batch.front(), X));
    return;
  }
  Direction mean = sample_direction(algo, state, batch.front(), X);
  for (std::size_t i = 1; i < batch.size(); ++i) {
    const auto d = sample_direction(algo, state, batch[i], X);
    mean.w += d.w;
    mean.kappa += d.kappa;
    mean.eta += d.eta;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  mean.w *= inv;
  mean.kappa *= inv;
  mean.eta *= inv;
  apply_direction(state, mean);
}

void expected_step(Algo algo, LearnerState& state, const OccupancyModel& model, const FeatureMap& X) {
  apply_direction(state, expected_direction(algo, state, model, X));
}

VectorXd predict_tau(const LearnerState& state, const FeatureMap& X, Algo algo) {
  switch (algo) {
    case Algo::GradientDICE:
      return X.X() * state.w;
    case Algo::ProjectedGradientDICE:
      return X.X() * (state.avg_weight > 0.0 ? state.avg_w : state.w);
    case Algo::DualDICE:
      return X.X() * state.kappa;
    case Algo::GenDICE:
      return (X.X() * state.w).cwiseAbs2();
  }
  throw InvalidArgument("predict_tau: unknown algorithm");
}

double ProjectedConfig::alpha() const {
  return 2.0 * c / (m_star * std::sqrt(static_cast<double>(n)));
}

VectorXd project_ball(const VectorXd& v, double radius) {
  const double norm = v.norm();
  if (norm <= radius) return v;
  return v * (radius / norm);
}

ProjectedBlocks projected_blocks(const TransitionSample& sample, const FeatureMap& X, std::size_t n_actions,
                                 double gamma, double lambda, double xi) {
  const auto K = static_cast<Eigen::Index>(X.dim());
  const auto idx = pair_indices(sample, n_actions);
  const VectorXd x0 = X.row(idx.init);
  const VectorXd x = X.row(idx.cur);
  const VectorXd xn = X.row(idx.next);
  ProjectedBlocks b;
  b.G1 = MatrixXd::Zero(K + 1, K + 1);
  b.G1.topLeftCorner(K, K) = -x * x.transpose();
  b.G1(K, K) = -lambda;
  b.G2 = MatrixXd::Zero(K + 1, K);
  b.G2.topRows(K) = -(x - gamma * xn) * x.transpose();
  b.G2.row(K) = lambda * x.transpose();
  b.G3 = MatrixXd::Zero(K, K + 1);
  b.G3.leftCols(K) = x * (x - gamma * xn).transpose();
  b.G3.col(K) = -lambda * x;
  b.G4 = -xi * MatrixXd::Identity(K, K);
  b.G5 = VectorXd::Zero(K + 1);
  b.G5.head(K) = (1.0 - gamma) * x0;
  b.G5(K) = -lambda;
  return b;
}

ProjectedGradientDice::ProjectedGradientDice(const FeatureMap& X, std::size_t n_actions, double gamma,
                                             ProjectedConfig config)
    : X_(&X), config_(config) {
  if (!(config.radius_w > 0.0) || !(config.radius_y > 0.0)) throw InvalidArgument("projection radii must be positive");
  if (config.n == 0) throw InvalidArgument("projected run needs n >= 1");
  if (!(config.c > 0.0) || !(config.m_star > 0.0)) throw InvalidArgument("c and m_star must be positive");
  state_ = LearnerState::zeros(X.dim(), n_actions, gamma, config.lambda, config.xi,
                               LrSchedule::constant(config.alpha()));
}

VectorXd ProjectedGradientDice::y() const {
  VectorXd y(state_.kappa.size() + 1);
  y << state_.kappa, state_.eta;
  return y;
}

void ProjectedGradientDice::step(const TransitionSample& sample) {
  // Same per-sample algebra as GradientDICE: y-direction = G1 y + G2 w + G5,
  // w-direction = G3 y + G4 w.
  const Direction d = gradientdice_direction(state_, sample, *X_);
  const double alpha = state_.lr.at(state_.t);
  const auto K = static_cast<Eigen::Index>(state_.w.size());

  VectorXd y_next(K + 1);
  y_next << state_.kappa + alpha * d.kappa, state_.eta + alpha * d.eta;
  y_next = project_ball(y_next, config_.radius_y);
  const VectorXd w_next = project_ball(state_.w + alpha * d.w, config_.radius_w);

  state_.kappa = y_next.head(K);
  state_.eta = y_next(K);
  state_.w = w_next;
  ++state_.t;
  check_finite(state_);

  const double total = state_.avg_weight + alpha;
  state_.avg_w += (alpha / total) * (w_next - state_.avg_w);
  state_.avg_y += (alpha / total) * (y_next - state_.avg_y);
  state_.avg_weight = total;
}

ProjectedResult projected_gradientdice_run(const Dataset& ds, const FeatureMap& X, double gamma,
                                           const ProjectedConfig& config) {
  ProjectedGradientDice learner(X, ds.n_actions, gamma, config);
  MinibatchStream stream(ds, 1);
  for (std::size_t t = 0; t < config.n; ++t) learner.step(stream.next().front());
  return {learner.avg_w(), learner.avg_y()};
}

}  // namespace dicekit
