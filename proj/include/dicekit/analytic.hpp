#pragma once

#include "dicekit/data.hpp"
#include "dicekit/envs.hpp"
#include "dicekit/mdp.hpp"

#include <array>
#include <span>
#include <vector>

namespace dicekit {

using Eigen::VectorXcd;

// ---------------------------------------------------------------------------
// Objectives evaluated exactly under the occupancy model.
// ---------------------------------------------------------------------------

/// 1/2 ||T tau - D tau||^2_{D^-1} + lambda/2 (d_mu . tau - 1)^2
double eval_L(const OccupancyModel& model, const VectorXd& tau, double lambda);

/// Gradient of a three-block objective, w.r.t. (w, kappa, eta). For GenDICE
/// the `w` block holds the gradient w.r.t. theta.
struct BlockGradient {
  VectorXd w;
  VectorXd kappa;
  double eta = 0.0;
};

/// GradientDICE saddle objective with tau = Xw, f = X kappa:
///   (1-g) E_mu0[f] + g E_p[tau f'] - E_dmu[tau f] - 1/2 E_dmu[f^2]
///   + lambda (eta (E_dmu[tau] - 1) - eta^2 / 2) + xi/2 ||w||^2
double eval_saddle_L(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w,
                     const VectorXd& kappa, double eta, double lambda, double xi);
BlockGradient saddle_L_gradient(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w,
                                const VectorXd& kappa, double eta, double lambda, double xi);

/// chi-square conjugate phi*(u) = u + u^2 / 4.
inline double chi2_conjugate(double u) { return u + 0.25 * u * u; }

/// GenDICE objective J with tau = (X theta)^2 and f = X kappa.
double eval_J(const OccupancyModel& model, const FeatureMap& X, const VectorXd& theta,
              const VectorXd& kappa, double eta, double lambda);
BlockGradient J_gradient(const OccupancyModel& model, const FeatureMap& X, const VectorXd& theta,
                         const VectorXd& kappa, double eta, double lambda);

/// Conjugate of (2/3)|x|^{3/2}: |y|^3 / 3.
inline double dualdice_conjugate(double y) { return std::abs(y) * y * y / 3.0; }

/// DualDICE saddle objective with nu = Xw, zeta = X kappa:
///   E_p[(nu - g nu') zeta - f*(zeta)] - (1-g) E_mu0[nu] + xi/2 ||w||^2
double eval_dualdice(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w,
                     const VectorXd& kappa, double xi);
BlockGradient dualdice_gradient(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w,
                                const VectorXd& kappa, double xi);

/// Closed-form partials of J for the single-state example with
/// tau = (tau1^2, tau2^2): returns d/d(tau1, tau2, f1, f2, eta).
std::array<double, 5> hardexample_gradient(double tau1, double tau2, double f1, double f2, double eta);

// ---------------------------------------------------------------------------
// Expected GradientDICE update d' = d + alpha (G d + g), d = [kappa; w; eta].
// ---------------------------------------------------------------------------

struct ExpectedUpdate {
  MatrixXd A;  ///< X^T (I - gamma P^T) D X
  MatrixXd C;  ///< X^T D X
  MatrixXd G;  ///< [-C, -A, 0; A^T, -xi I, -lambda X^T d_mu; 0, lambda d_mu^T X, -lambda]
  VectorXd g;  ///< [(1-gamma) X^T mu0; 0; -lambda]
  VectorXd x_dmu;
  VectorXd x_mu0;
  double gamma = 0.0;
  double lambda = 1.0;
  double xi = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(A.rows()); }
};

ExpectedUpdate expected_update(const OccupancyModel& model, const FeatureMap& X, double lambda, double xi);

/// Per-sample G_{t+1}, g_{t+1}.
struct SampleUpdate {
  MatrixXd G;
  VectorXd g;
};
SampleUpdate sample_update(const TransitionSample& sample, const FeatureMap& X, std::size_t n_actions,
                           double gamma, double lambda, double xi);

/// Dataset average of the per-sample G_{t+1}, g_{t+1}.
SampleUpdate empirical_update(const Dataset& ds, const FeatureMap& X, double gamma, double lambda, double xi);

struct EigenCertificate {
  double max_real_part = 0.0;
  bool det_nonzero = false;
  double det = 0.0;
  VectorXcd eigenvalues;
};

/// Throws AssumptionViolated when xi = 0 and A is singular.
EigenCertificate eigen_certificate(const ExpectedUpdate& eu);

struct ClosedForm {
  MatrixXd Xi_mat;   ///< (xi I + A^T C^-1 A)^-1
  VectorXd z;        ///< Xi X^T d_mu
  double beta = 0.0; ///< 1 + lambda d_mu^T X Xi X^T d_mu
  VectorXd w_inf;    ///< block-inversion formula
  MatrixXd A_star;
  VectorXd b_star;
  VectorXd w_kkt;    ///< A_star^-1 b_star
  VectorXd limit;    ///< -G^-1 g, ordered [kappa; w; eta]
  VectorXd w_limit;  ///< w block of `limit`
};

/// Throws SingularSystem if xi I + A^T C^-1 A is singular.
ClosedForm closed_form(const ExpectedUpdate& eu);

struct PathPoint {
  double xi = 0.0;
  double L1_direct = 0.0;
  double L1_spectral = 0.0;
  double L2_direct = 0.0;
  double L2_spectral = 0.0;
  VectorXd w_inf;
};

struct RegularizationPath {
  std::vector<PathPoint> points;
  std::size_t rank = 0;        ///< rank of A^T C^-1 A
  double u_null_norm = 0.0;    ///< || u_{r+1:} ||
  bool kernel_pd = false;      ///< X C^-1 X^T positive definite
};

/// gamma = 1 only. Throws AssumptionViolated if u has no mass on the null
/// space of A^T C^-1 A.
RegularizationPath regularization_path(const OccupancyModel& model, const FeatureMap& X, double lambda,
                                       std::span<const double> xi_list);

// ---------------------------------------------------------------------------
// Ball-constrained saddle problem min_{|w|<=RW} max_{|y|<=RY} L(w, y),
// y = [kappa; eta], L(w, y) = y^T B w + b^T y - 1/2 y^T H y + xi/2 |w|^2.
// ---------------------------------------------------------------------------

struct SaddleQuadratic {
  MatrixXd H;  ///< blockdiag(C, lambda)
  MatrixXd B;  ///< [-A; lambda d_mu^T X]
  VectorXd b;  ///< [(1-gamma) X^T mu0; -lambda]
  double xi = 0.0;

  double value(const VectorXd& w, const VectorXd& y) const;
};
SaddleQuadratic saddle_quadratic(const ExpectedUpdate& eu);

/// The unconstrained saddle point (w*, y*) read off -G^-1 g.
struct SaddlePoint {
  VectorXd w;
  VectorXd y;
};
SaddlePoint saddle_point(const ExpectedUpdate& eu);

/// argmin 1/2 x^T H x - c^T x subject to |x| <= radius, H symmetric PSD.
/// Interior solutions are returned directly; boundary solutions come from
/// bisection on the secular equation |x(mu)| = radius.
VectorXd minimize_quadratic_on_ball(const MatrixXd& H, const VectorXd& c, double radius);

/// max_{|y'|<=RY} L(w, y') - min_{|w'|<=RW} L(w', y).
double epsilon_opt(const ExpectedUpdate& eu, const VectorXd& w, const VectorXd& y, double radius_w,
                   double radius_y);
double epsilon_opt(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w, const VectorXd& y,
                   double lambda, double xi, double radius_w, double radius_y);

}  // namespace dicekit
