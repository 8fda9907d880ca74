#pragma once

#include "dicekit/data.hpp"
#include "dicekit/envs.hpp"
#include "dicekit/mdp.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace dicekit {

enum class Algo { GradientDICE, ProjectedGradientDICE, GenDICE, DualDICE };

std::string to_string(Algo algo);
Algo algo_from_string(std::string_view name);

/// alpha_t = alpha (constant) or alpha / (t + 1)^power (Robbins-Monro,
/// power in (0.5, 1]).
struct LrSchedule {
  enum class Kind { Constant, RobbinsMonro };
  Kind kind = Kind::Constant;
  double alpha = 0.01;
  double power = 1.0;

  static LrSchedule constant(double alpha);
  static LrSchedule robbins_monro(double alpha0, double power);
  double at(std::int64_t t) const;
};

/// Parameters of a DICE learner. For GenDICE `w` holds theta (tau = (X theta)^2);
/// for DualDICE `w` holds nu and `kappa` holds zeta, the ratio estimate.
struct LearnerState {
  VectorXd w;
  VectorXd kappa;
  double eta = 0.0;
  std::int64_t t = 0;
  VectorXd avg_w;
  VectorXd avg_y;
  double avg_weight = 0.0;
  LrSchedule lr;
  double lambda = 1.0;
  double xi = 0.0;
  double gamma = 0.0;
  /// Step-size multiplier on the ascent blocks (kappa, eta).
  double dual_lr_scale = 1.0;
  std::size_t n_actions = 1;

  static LearnerState zeros(std::size_t dim, std::size_t n_actions, double gamma, double lambda, double xi,
                            LrSchedule lr);
};

/// Parameters whose magnitude exceeds this abort the run as Diverged.
inline constexpr double kDivergenceBound = 1e8;

/// Signed update direction: each block moves by +alpha * direction.
struct Direction {
  VectorXd w;
  VectorXd kappa;
  double eta = 0.0;
};

Direction gradientdice_direction(const LearnerState& state, const TransitionSample& sample, const FeatureMap& X);
Direction gendice_direction(const LearnerState& state, const TransitionSample& sample, const FeatureMap& X);
Direction dualdice_direction(const LearnerState& state, const TransitionSample& sample, const FeatureMap& X);
Direction sample_direction(Algo algo, const LearnerState& state, const TransitionSample& sample, const FeatureMap& X);

/// Full-expectation direction from the analytic gradients.
Direction expected_direction(Algo algo, const LearnerState& state, const OccupancyModel& model, const FeatureMap& X);

/// Applies alpha_t * direction (dual blocks scaled by dual_lr_scale), then
/// advances t. Throws Diverged if any parameter is non-finite or too large.
void apply_direction(LearnerState& state, const Direction& dir);

void gradientdice_step(LearnerState& state, const TransitionSample& sample, const FeatureMap& X);
void gendice_step(LearnerState& state, const TransitionSample& sample, const FeatureMap& X);
void dualdice_step(LearnerState& state, const TransitionSample& sample, const FeatureMap& X);

/// One step on the batch-averaged direction. Projected GradientDICE is not
/// handled here; use ProjectedGradientDice.
void batch_step(Algo algo, LearnerState& state, std::span<const TransitionSample> batch, const FeatureMap& X);
void expected_step(Algo algo, LearnerState& state, const OccupancyModel& model, const FeatureMap& X);

/// Xw for GradientDICE, X avg_w for the projected variant once averaging has
/// started, X kappa for DualDICE, (X theta)^2 for GenDICE.
VectorXd predict_tau(const LearnerState& state, const FeatureMap& X, Algo algo);

// ---------------------------------------------------------------------------
// Projected GradientDICE: y = [kappa; eta] and w are projected onto balls
// after every step; the output is the alpha-weighted average of the iterates.
// ---------------------------------------------------------------------------

struct ProjectedConfig {
  double lambda = 1.0;
  double xi = 0.0;
  double radius_w = 10.0;
  double radius_y = 10.0;
  double c = 1.0;
  /// Stand-in for the gradient-moment constant in alpha = 2c / (m_star sqrt(n)).
  double m_star = 1.0;
  std::size_t n = 1000;

  double alpha() const;
};

/// Euclidean projection onto the origin-centred ball of the given radius.
VectorXd project_ball(const VectorXd& v, double radius);

struct ProjectedBlocks {
  MatrixXd G1, G2, G3, G4;
  VectorXd G5;
};
/// Per-sample block matrices of the projected update.
ProjectedBlocks projected_blocks(const TransitionSample& sample, const FeatureMap& X, std::size_t n_actions,
                                 double gamma, double lambda, double xi);

class ProjectedGradientDice {
 public:
  ProjectedGradientDice(const FeatureMap& X, std::size_t n_actions, double gamma, ProjectedConfig config);

  void step(const TransitionSample& sample);

  const LearnerState& state() const { return state_; }
  VectorXd y() const;
  const VectorXd& avg_w() const { return state_.avg_w; }
  const VectorXd& avg_y() const { return state_.avg_y; }
  const ProjectedConfig& config() const { return config_; }

 private:
  const FeatureMap* X_;
  ProjectedConfig config_;
  LearnerState state_;
};

struct ProjectedResult {
  VectorXd avg_w;
  VectorXd avg_y;
};

/// Runs config.n steps over the dataset (shuffled epochs, batch size 1).
ProjectedResult projected_gradientdice_run(const Dataset& ds, const FeatureMap& X, double gamma,
                                           const ProjectedConfig& config);

}  // namespace dicekit
