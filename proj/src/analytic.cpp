#include "dicekit/analytic.hpp"

#include "dicekit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dicekit {

namespace {

void check_dims(const FeatureMap& X, const VectorXd& a, const VectorXd& b) {
  const auto K = static_cast<Eigen::Index>(X.dim());
  if (a.size() != K || b.size() != K) throw InvalidArgument("parameter length does not match feature dimension");
}

void check_model(const OccupancyModel& model, const FeatureMap& X) {
  if (X.n_pairs() != model.n_pairs()) throw InvalidArgument("feature map rows do not match N_sa");
}

bool is_singular(const MatrixXd& M) {
  Eigen::JacobiSVD<MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  return sv(sv.size() - 1) <= 1e-10 * std::max(sv(0), 1e-300);
}

}  // namespace

double eval_L(const OccupancyModel& model, const VectorXd& tau, double lambda) {
  const VectorXd residual = apply_T(model, tau) - model.d_mu.cwiseProduct(tau);
  const double bellman = 0.5 * residual.cwiseAbs2().cwiseQuotient(model.d_mu).sum();
  const double norm_gap = model.d_mu.dot(tau) - 1.0;
  return bellman + 0.5 * lambda * norm_gap * norm_gap;
}

double eval_saddle_L(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w,
                     const VectorXd& kappa, double eta, double lambda, double xi) {
  check_model(model, X);
  check_dims(X, w, kappa);
  const double g = model.gamma;
  const VectorXd tau = X.X() * w;
  const VectorXd f = X.X() * kappa;
  const VectorXd d_tau = model.d_mu.cwiseProduct(tau);
  const double value = (1.0 - g) * model.mu0.dot(f) + g * (model.P_pi.transpose() * d_tau).dot(f) -
                       d_tau.dot(f) - 0.5 * model.d_mu.dot(f.cwiseAbs2()) +
                       lambda * (eta * (model.d_mu.dot(tau) - 1.0) - 0.5 * eta * eta);
  return value + 0.5 * xi * w.squaredNorm();
}

BlockGradient saddle_L_gradient(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w,
                                const VectorXd& kappa, double eta, double lambda, double xi) {
  check_model(model, X);
  check_dims(X, w, kappa);
  const double g = model.gamma;
  const VectorXd tau = X.X() * w;
  const VectorXd f = X.X() * kappa;
  const VectorXd d_tau = model.d_mu.cwiseProduct(tau);
  const VectorXd d_f = model.d_mu.cwiseProduct(f);

  const VectorXd dL_dtau = g * model.d_mu.cwiseProduct(model.P_pi * f) - d_f + lambda * eta * model.d_mu;
  const VectorXd dL_df = (1.0 - g) * model.mu0 + g * (model.P_pi.transpose() * d_tau) - d_tau - d_f;
  BlockGradient grad;
  grad.w = X.X().transpose() * dL_dtau + xi * w;
  grad.kappa = X.X().transpose() * dL_df;
  grad.eta = lambda * (model.d_mu.dot(tau) - 1.0 - eta);
  return grad;
}

double eval_J(const OccupancyModel& model, const FeatureMap& X, const VectorXd& theta,
              const VectorXd& kappa, double eta, double lambda) {
  check_model(model, X);
  check_dims(X, theta, kappa);
  const double g = model.gamma;
  const VectorXd tau = (X.X() * theta).cwiseAbs2();
  const VectorXd f = X.X() * kappa;
  const VectorXd d_tau = model.d_mu.cwiseProduct(tau);
  const VectorXd conj = f.unaryExpr([](double u) { return chi2_conjugate(u); });
  return (1.0 - g) * model.mu0.dot(f) + g * (model.P_pi.transpose() * d_tau).dot(f) - d_tau.dot(conj) +
         lambda * (eta * model.d_mu.dot(tau) - eta - 0.5 * eta * eta);
}

BlockGradient J_gradient(const OccupancyModel& model, const FeatureMap& X, const VectorXd& theta,
                         const VectorXd& kappa, double eta, double lambda) {
  check_model(model, X);
  check_dims(X, theta, kappa);
  const double g = model.gamma;
  const VectorXd u = X.X() * theta;
  const VectorXd tau = u.cwiseAbs2();
  const VectorXd f = X.X() * kappa;
  const VectorXd d_tau = model.d_mu.cwiseProduct(tau);
  const VectorXd conj = f.unaryExpr([](double v) { return chi2_conjugate(v); });
  const VectorXd conj_slope = (1.0 + 0.5 * f.array()).matrix();

  const VectorXd dJ_dtau =
      g * model.d_mu.cwiseProduct(model.P_pi * f) - model.d_mu.cwiseProduct(conj) + lambda * eta * model.d_mu;
  const VectorXd dJ_df = (1.0 - g) * model.mu0 + g * (model.P_pi.transpose() * d_tau) - d_tau.cwiseProduct(conj_slope);
  BlockGradient grad;
  grad.w = X.X().transpose() * (2.0 * u.cwiseProduct(dJ_dtau));
  grad.kappa = X.X().transpose() * dJ_df;
  grad.eta = lambda * (model.d_mu.dot(tau) - 1.0 - eta);
  return grad;
}

double eval_dualdice(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w,
                     const VectorXd& kappa, double xi) {
  check_model(model, X);
  check_dims(X, w, kappa);
  const double g = model.gamma;
  const VectorXd nu = X.X() * w;
  const VectorXd zeta = X.X() * kappa;
  const VectorXd residual = nu - g * (model.P_pi * nu);
  const VectorXd conj = zeta.unaryExpr([](double y) { return dualdice_conjugate(y); });
  return model.d_mu.dot(residual.cwiseProduct(zeta) - conj) - (1.0 - g) * model.mu0.dot(nu) +
         0.5 * xi * w.squaredNorm();
}

BlockGradient dualdice_gradient(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w,
                                const VectorXd& kappa, double xi) {
  check_model(model, X);
  check_dims(X, w, kappa);
  const double g = model.gamma;
  const VectorXd nu = X.X() * w;
  const VectorXd zeta = X.X() * kappa;
  const VectorXd d_zeta = model.d_mu.cwiseProduct(zeta);
  const VectorXd residual = nu - g * (model.P_pi * nu);
  const VectorXd conj_slope = zeta.cwiseProduct(zeta.cwiseAbs());
  BlockGradient grad;
  grad.w = X.X().transpose() * (d_zeta - g * (model.P_pi.transpose() * d_zeta) - (1.0 - g) * model.mu0) + xi * w;
  grad.kappa = X.X().transpose() * model.d_mu.cwiseProduct(residual - conj_slope);
  grad.eta = 0.0;
  return grad;
}

std::array<double, 5> hardexample_gradient(double tau1, double tau2, double f1, double f2, double eta) {
  const double t1 = tau1 * tau1;
  const double t2 = tau2 * tau2;
  return {
      0.5 * tau1 * f1 + 0.5 * tau1 * f2 - tau1 * (f1 + 0.25 * f1 * f1) + eta * tau1,
      0.5 * tau2 * f1 + 0.5 * tau2 * f2 - tau2 * (f2 + 0.25 * f2 * f2) + eta * tau2,
      0.25 * t1 + 0.25 * t2 - 0.5 * t1 * (1.0 + 0.5 * f1),
      // the f2 partial carries tau2^2 in its last term (symmetric to f1)
      0.25 * t1 + 0.25 * t2 - 0.5 * t2 * (1.0 + 0.5 * f2),
      0.5 * t1 + 0.5 * t2 - 1.0 - eta,
  };
}

ExpectedUpdate expected_update(const OccupancyModel& model, const FeatureMap& X, double lambda, double xi) {
  check_model(model, X);
  if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  if (!(xi >= 0.0)) throw InvalidArgument("xi must be non-negative");
  const auto K = static_cast<Eigen::Index>(X.dim());
  const auto n = static_cast<Eigen::Index>(model.n_pairs());
  const MatrixXd& F = X.X();
  const MatrixXd DX = model.d_mu.asDiagonal() * F;

  ExpectedUpdate eu;
  eu.gamma = model.gamma;
  eu.lambda = lambda;
  eu.xi = xi;
  eu.A = F.transpose() * (MatrixXd::Identity(n, n) - model.gamma * model.P_pi.transpose()) * DX;
  eu.C = F.transpose() * DX;
  eu.x_dmu = F.transpose() * model.d_mu;
  eu.x_mu0 = F.transpose() * model.mu0;

  eu.G = MatrixXd::Zero(2 * K + 1, 2 * K + 1);
  eu.G.block(0, 0, K, K) = -eu.C;
  eu.G.block(0, K, K, K) = -eu.A;
  eu.G.block(K, 0, K, K) = eu.A.transpose();
  eu.G.block(K, K, K, K) = -xi * MatrixXd::Identity(K, K);
  eu.G.block(K, 2 * K, K, 1) = -lambda * eu.x_dmu;
  eu.G.block(2 * K, K, 1, K) = lambda * eu.x_dmu.transpose();
  eu.G(2 * K, 2 * K) = -lambda;

  eu.g = VectorXd::Zero(2 * K + 1);
  eu.g.head(K) = (1.0 - model.gamma) * eu.x_mu0;
  eu.g(2 * K) = -lambda;
  return eu;
}

SampleUpdate sample_update(const TransitionSample& sample, const FeatureMap& X, std::size_t n_actions,
                           double gamma, double lambda, double xi) {
  const auto K = static_cast<Eigen::Index>(X.dim());
  const auto idx = pair_indices(sample, n_actions);
  const VectorXd x0 = X.row(idx.init);
  const VectorXd x = X.row(idx.cur);
  const VectorXd xn = X.row(idx.next);

  SampleUpdate su;
  su.G = MatrixXd::Zero(2 * K + 1, 2 * K + 1);
  su.G.block(0, 0, K, K) = -x * x.transpose();
  su.G.block(0, K, K, K) = -(x - gamma * xn) * x.transpose();
  su.G.block(K, 0, K, K) = x * (x - gamma * xn).transpose();
  su.G.block(K, K, K, K) = -xi * MatrixXd::Identity(K, K);
  su.G.block(K, 2 * K, K, 1) = -lambda * x;
  su.G.block(2 * K, K, 1, K) = lambda * x.transpose();
  su.G(2 * K, 2 * K) = -lambda;
  su.g = VectorXd::Zero(2 * K + 1);
  su.g.head(K) = (1.0 - gamma) * x0;
  su.g(2 * K) = -lambda;
  return su;
}

SampleUpdate empirical_update(const Dataset& ds, const FeatureMap& X, double gamma, double lambda, double xi) {
  if (ds.size() == 0) throw InvalidArgument("empirical_update: empty dataset");
  const auto K = static_cast<Eigen::Index>(X.dim());
  SampleUpdate mean{MatrixXd::Zero(2 * K + 1, 2 * K + 1), VectorXd::Zero(2 * K + 1)};
  for (const auto& sample : ds.samples) {
    const auto su = sample_update(sample, X, ds.n_actions, gamma, lambda, xi);
    mean.G += su.G;
    mean.g += su.g;
  }
  mean.G /= static_cast<double>(ds.size());
  mean.g /= static_cast<double>(ds.size());
  return mean;
}

EigenCertificate eigen_certificate(const ExpectedUpdate& eu) {
  if (eu.xi == 0.0 && is_singular(eu.A)) {
    throw AssumptionViolated("eigen_certificate: xi = 0 and A is singular");
  }
  EigenCertificate cert;
  Eigen::EigenSolver<MatrixXd> solver(eu.G, false);
  if (solver.info() != Eigen::Success) throw SingularSystem("eigen_certificate: eigensolver failed");
  cert.eigenvalues = solver.eigenvalues();
  cert.max_real_part = cert.eigenvalues.real().maxCoeff();
  Eigen::FullPivLU<MatrixXd> lu(eu.G);
  cert.det = lu.determinant();
  cert.det_nonzero = lu.isInvertible() && cert.det != 0.0;
  return cert;
}

ClosedForm closed_form(const ExpectedUpdate& eu) {
  const auto K = static_cast<Eigen::Index>(eu.dim());
  Eigen::LLT<MatrixXd> c_chol(eu.C);
  if (c_chol.info() != Eigen::Success) throw SingularSystem("closed_form: C is not positive definite");
  const MatrixXd Cinv_A = c_chol.solve(eu.A);
  const VectorXd Cinv_xmu0 = c_chol.solve(eu.x_mu0);
  const MatrixXd AtCinvA = eu.A.transpose() * Cinv_A;
  const VectorXd h = (1.0 - eu.gamma) * (eu.A.transpose() * Cinv_xmu0);

  ClosedForm cf;
  const MatrixXd M = eu.xi * MatrixXd::Identity(K, K) + AtCinvA;
  if (is_singular(M)) throw SingularSystem("closed_form: xi I + A^T C^-1 A is singular");
  cf.Xi_mat = M.fullPivLu().inverse();
  cf.z = cf.Xi_mat * eu.x_dmu;
  cf.beta = 1.0 + eu.lambda * eu.x_dmu.dot(cf.z);
  cf.w_inf = cf.Xi_mat * h + (eu.lambda / cf.beta) * cf.z * (1.0 - cf.z.dot(h));

  cf.A_star = M + eu.lambda * eu.x_dmu * eu.x_dmu.transpose();
  cf.b_star = h + eu.lambda * eu.x_dmu;
  cf.w_kkt = cf.A_star.fullPivLu().solve(cf.b_star);

  Eigen::FullPivLU<MatrixXd> g_lu(eu.G);
  if (!g_lu.isInvertible()) throw SingularSystem("closed_form: G is singular");
  cf.limit = g_lu.solve(-eu.g);
  cf.w_limit = cf.limit.segment(K, K);
  return cf;
}

RegularizationPath regularization_path(const OccupancyModel& model, const FeatureMap& X, double lambda,
                                       std::span<const double> xi_list) {
  check_model(model, X);
  if (model.gamma != 1.0) throw InvalidArgument("regularization_path requires gamma = 1");
  if (xi_list.empty()) throw InvalidArgument("regularization_path: empty xi list");
  for (double xi : xi_list) {
    if (!(xi > 0.0)) throw InvalidArgument("regularization_path: every xi must be positive");
  }

  const auto base = expected_update(model, X, lambda, 0.0);
  Eigen::LLT<MatrixXd> c_chol(base.C);
  const MatrixXd AtCinvA = base.A.transpose() * c_chol.solve(base.A);
  const MatrixXd sym = 0.5 * (AtCinvA + AtCinvA.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sym);
  const VectorXd spectrum = eig.eigenvalues();  // ascending
  const double top = std::max(spectrum.cwiseAbs().maxCoeff(), 1e-300);
  std::vector<bool> in_range(static_cast<std::size_t>(spectrum.size()));
  RegularizationPath path;
  for (Eigen::Index i = 0; i < spectrum.size(); ++i) {
    in_range[static_cast<std::size_t>(i)] = spectrum(i) > 1e-10 * top;
    if (in_range[static_cast<std::size_t>(i)]) ++path.rank;
  }
  // Q = V^T, so u = Q X^T d_mu.
  const VectorXd u = eig.eigenvectors().transpose() * base.x_dmu;
  double null_sq = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (!in_range[static_cast<std::size_t>(i)]) null_sq += u(i) * u(i);
  }
  path.u_null_norm = std::sqrt(null_sq);
  if (path.u_null_norm <= 1e-12 * std::max(u.norm(), 1e-300)) {
    throw AssumptionViolated("regularization_path: u has no component in the null space of A^T C^-1 A");
  }

  const MatrixXd F = X.X();
  const MatrixXd kernel = F * c_chol.solve(F.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> kernel_eig(0.5 * (kernel + kernel.transpose()), Eigen::EigenvaluesOnly);
  path.kernel_pd = kernel_eig.eigenvalues()(0) > 1e-12 * std::max(kernel_eig.eigenvalues().maxCoeff(), 1e-300);

  for (double xi : xi_list) {
    PathPoint pt;
    pt.xi = xi;
    const auto eu = expected_update(model, X, lambda, xi);
    pt.w_inf = closed_form(eu).w_inf;

    pt.L1_direct = eu.x_dmu.dot(pt.w_inf) - 1.0;
    const VectorXd dxw = model.d_mu.cwiseProduct(F * pt.w_inf);
    const VectorXd residual = dxw - model.P_pi.transpose() * dxw;
    const VectorXd xr = F.transpose() * residual;
    pt.L2_direct = xr.dot(c_chol.solve(xr));

    double s = 0.0;
    double q = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      const double inv = in_range[static_cast<std::size_t>(i)] ? 1.0 / (xi + spectrum(i)) : 1.0 / xi;
      s += u(i) * u(i) * inv;
      q += u(i) * u(i) * inv * inv;
    }
    const double denom = 1.0 + lambda * s;
    pt.L1_spectral = lambda * s / denom - 1.0;
    pt.L2_spectral = lambda * lambda * (s - xi * q) / (denom * denom);
    path.points.push_back(std::move(pt));
  }
  return path;
}

double SaddleQuadratic::value(const VectorXd& w, const VectorXd& y) const {
  return y.dot(B * w) + b.dot(y) - 0.5 * y.dot(H * y) + 0.5 * xi * w.squaredNorm();
}

SaddleQuadratic saddle_quadratic(const ExpectedUpdate& eu) {
  const auto K = static_cast<Eigen::Index>(eu.dim());
  SaddleQuadratic sq;
  sq.H = MatrixXd::Zero(K + 1, K + 1);
  sq.H.topLeftCorner(K, K) = eu.C;
  sq.H(K, K) = eu.lambda;
  sq.B = MatrixXd::Zero(K + 1, K);
  sq.B.topRows(K) = -eu.A;
  sq.B.row(K) = eu.lambda * eu.x_dmu.transpose();
  sq.b = VectorXd::Zero(K + 1);
  sq.b.head(K) = (1.0 - eu.gamma) * eu.x_mu0;
  sq.b(K) = -eu.lambda;
  sq.xi = eu.xi;
  return sq;
}

SaddlePoint saddle_point(const ExpectedUpdate& eu) {
  const auto K = static_cast<Eigen::Index>(eu.dim());
  Eigen::FullPivLU<MatrixXd> lu(eu.G);
  if (!lu.isInvertible()) throw SingularSystem("saddle_point: G is singular");
  const VectorXd d = lu.solve(-eu.g);
  SaddlePoint sp;
  sp.w = d.segment(K, K);
  sp.y.resize(K + 1);
  sp.y.head(K) = d.head(K);
  sp.y(K) = d(2 * K);
  return sp;
}

VectorXd minimize_quadratic_on_ball(const MatrixXd& H, const VectorXd& c, double radius) {
  if (!(radius > 0.0)) throw InvalidArgument("minimize_quadratic_on_ball: radius must be positive");
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (H + H.transpose()));
  const VectorXd h = eig.eigenvalues().cwiseMax(0.0);
  const MatrixXd& V = eig.eigenvectors();
  const VectorXd ct = V.transpose() * c;
  const double zero_tol = 1e-14 * std::max(1.0, h.maxCoeff());

  auto solution = [&](double mu) {
    VectorXd x(ct.size());
    for (Eigen::Index i = 0; i < ct.size(); ++i) {
      const double denom = h(i) + mu;
      x(i) = denom > zero_tol ? ct(i) / denom : 0.0;
    }
    return x;
  };

  // Interior candidate: exists iff c has no component along zero curvature.
  bool interior_possible = true;
  for (Eigen::Index i = 0; i < ct.size(); ++i) {
    if (h(i) <= zero_tol && std::abs(ct(i)) > 1e-14 * std::max(1.0, ct.norm())) interior_possible = false;
  }
  if (interior_possible) {
    const VectorXd x0 = solution(0.0);
    if (x0.norm() <= radius) return V * x0;
  }
  if (ct.norm() == 0.0) return VectorXd::Zero(c.size());

  // |x(mu)| decreases in mu; |x(hi)| <= |c| / hi = radius.
  double lo = 0.0;
  double hi = ct.norm() / radius;
  for (int it = 0; it < 2000 && hi - lo > 1e-16 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (solution(mid).norm() > radius) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  VectorXd x = solution(hi);
  const double norm = x.norm();
  if (norm > radius) x *= radius / norm;
  return V * x;
}

double epsilon_opt(const ExpectedUpdate& eu, const VectorXd& w, const VectorXd& y, double radius_w,
                   double radius_y) {
  if (!(radius_w > 0.0) || !(radius_y > 0.0)) throw InvalidArgument("epsilon_opt: radii must be positive");
  const auto sq = saddle_quadratic(eu);
  const auto K = static_cast<Eigen::Index>(eu.dim());
  if (w.size() != K || y.size() != K + 1) throw InvalidArgument("epsilon_opt: parameter size mismatch");

  // max_y' L(w, y') = -min_y' [1/2 y'^T H y' - (B w + b)^T y'] + xi/2 |w|^2
  const VectorXd y_best = minimize_quadratic_on_ball(sq.H, sq.B * w + sq.b, radius_y);
  // min_w' L(w', y) = min_w' [xi/2 |w'|^2 + (B^T y)^T w'] + b^T y - 1/2 y^T H y
  const VectorXd w_best = minimize_quadratic_on_ball(eu.xi * MatrixXd::Identity(K, K), -(sq.B.transpose() * y),
                                                     radius_w);
  return sq.value(w, y_best) - sq.value(w_best, y);
}

double epsilon_opt(const OccupancyModel& model, const FeatureMap& X, const VectorXd& w, const VectorXd& y,
                   double lambda, double xi, double radius_w, double radius_y) {
  return epsilon_opt(expected_update(model, X, lambda, xi), w, y, radius_w, radius_y);
}

}  // namespace dicekit
