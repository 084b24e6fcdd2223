#pragma once

// Matrix Fisher-Gaussian distribution on SO(3) x R^n: parameters, density,
// conditionals, moments, maximum likelihood fitting, Gaussian approximation,
// canonical form, equivalence transforms, and sampling.

#include <mfg/matrix_fisher.hpp>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace mfg {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

struct MFGParams {
  VecX mu;      // n
  MatX Sigma;   // n x n
  MatX P;       // n x 3, correlation along the principal axes
  so3::ProperSvd svd;  // U, S, V and the sign convention

  MFGParams() = default;
  MFGParams(VecX mu_, MatX sigma_, MatX p_, so3::ProperSvd svd_)
      : mu(std::move(mu_)), Sigma(std::move(sigma_)), P(std::move(p_)),
        svd(std::move(svd_)) {}

  int n() const { return static_cast<int>(mu.size()); }
  Mat3 F() const { return svd.reconstruct(); }
  Mat3 mode() const { return svd.u * svd.v.transpose(); }

  Mat3 gamma() const {  // tr(S) I - S
    return (svd.s.sum() * Vec3::Ones() - svd.s).asDiagonal();
  }
  MatX sigma_c() const { return Sigma - P * gamma() * P.transpose(); }

  void validate() const {
    if (Sigma.rows() != n() || Sigma.cols() != n() || P.rows() != n() || P.cols() != 3)
      throw std::invalid_argument("MFGParams: inconsistent dimensions");
    if ((Sigma - Sigma.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + Sigma.norm()))
      throw std::invalid_argument("MFGParams: Sigma not symmetric");
    Eigen::LLT<MatX> llt(sigma_c());
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("MFGParams: conditional covariance not positive definite");
  }

  static MFGParams independent(VecX mu_, MatX sigma_, const Mat3& f,
                               so3::SvdConvention conv = so3::SvdConvention::def1) {
    const int n = static_cast<int>(mu_.size());
    return MFGParams(std::move(mu_), std::move(sigma_), MatX::Zero(n, 3),
                     so3::proper_svd(f, conv));
  }
};

// tangent deviation of R from the mode, expressed on the principal axes
inline Vec3 nu_R(const MFGParams& p, const Mat3& r) {
  const Mat3 q = p.svd.u.transpose() * r * p.svd.v;
  const Vec3& s = p.svd.s;
  return Vec3(q(2, 1) * s[1] - s[2] * q(1, 2),
              q(0, 2) * s[2] - s[0] * q(2, 0),
              q(1, 0) * s[0] - s[1] * q(0, 1));
}

struct ConditionalGaussian {
  VecX mu_c;
  MatX sigma_c;
};

inline ConditionalGaussian conditional(const MFGParams& p, const Mat3& r) {
  ConditionalGaussian c;
  c.mu_c = p.mu + p.P * nu_R(p, r);
  c.sigma_c = p.sigma_c();
  Eigen::LLT<MatX> llt(c.sigma_c);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("conditional: covariance not positive definite");
  return c;
}

inline double log_density(const MFGParams& p, const Mat3& r, const VecX& x,
                          const fisher::QuadratureOptions& opts = {}) {
  const double log_c = fisher::q_moments(p.svd.s, 1, opts).log_c();
  const MatX sc = p.sigma_c();
  Eigen::LLT<MatX> llt(sc);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("log_density: covariance not positive definite");
  const VecX dx = x - p.mu - p.P * nu_R(p, r);
  double log_det = 0.0;
  for (int i = 0; i < p.n(); ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  const double quad = dx.dot(llt.solve(dx));
  return (p.F().transpose() * r).trace() - log_c -
         0.5 * (p.n() * std::log(2.0 * M_PI) + log_det + quad);
}

// ---- moments (Theorem-4 style closed forms) -------------------------------

struct MFGMoments {
  Mat3 ER;
  VecX Ex;
  Vec3 Enu = Vec3::Zero();
  MatX Exx;
  MatX Exnu;   // n x 3
  Mat3 Enunu;  // diagonal
};

inline Mat3 nu_covariance(const Vec3& s, const fisher::QMomentTable& t) {
  Mat3 out = Mat3::Zero();
  for (int i = 0; i < 3; ++i) {
    const int j = (i + 1) % 3, k = (i + 2) % 3;
    out(i, i) = (s[j] * s[j] + s[k] * s[k]) * t.second(j, k, j, k) -
                2.0 * s[j] * s[k] * t.second(j, k, k, j);
  }
  return out;
}

inline MFGMoments moments(const MFGParams& p, const fisher::QuadratureOptions& opts = {}) {
  const fisher::QMomentTable t = fisher::q_moments(p.svd.s, 2, opts);
  MFGMoments m;
  Vec3 d;
  for (int i = 0; i < 3; ++i) d[i] = t.first(i, i);
  m.ER = p.svd.u * d.asDiagonal() * p.svd.v.transpose();
  m.Ex = p.mu;
  m.Enunu = nu_covariance(p.svd.s, t);
  m.Exnu = p.P * m.Enunu;
  m.Exx = p.sigma_c() + p.mu * p.mu.transpose() + p.P * m.Enunu * p.P.transpose();
  return m;
}

// ---- maximum likelihood ----------------------------------------------------

// Conditional stage: given the fitted (U, S, V) and empirical moments of
// (x, nu_R), recover P, mu, Sigma.
inline MFGParams mle_conditional(const so3::ProperSvd& svd, const VecX& ex,
                                 const MatX& exx, const Vec3& enu,
                                 const MatX& exnu, const Mat3& enunu) {
  const MatX cov_xnu = exnu - ex * enu.transpose();
  Mat3 cov_nunu = enunu - enu * enu.transpose();
  const double eps = 1e-12 * std::max(1.0, cov_nunu.trace());
  cov_nunu.diagonal().array() += eps;
  const MatX p = cov_xnu * cov_nunu.inverse();
  MFGParams out;
  out.svd = svd;
  out.P = p;
  out.mu = ex - p * enu;
  const MatX cov_xx = exx - ex * ex.transpose();
  const Mat3 gamma = (svd.s.sum() * Vec3::Ones() - svd.s).asDiagonal();
  MatX sigma = cov_xx - p * cov_xnu.transpose() + p * gamma * p.transpose();
  out.Sigma = 0.5 * (sigma + sigma.transpose());
  return out;
}

// Marginal stage: fit (U, S, V) from the sample mean rotation.
inline so3::ProperSvd fit_marginal(const Mat3& er, const fisher::QuadratureOptions& opts = {},
                                   const Vec3* warm_start = nullptr) {
  so3::ProperSvd psvd = so3::proper_svd(er, so3::SvdConvention::def1);
  const Vec3 d = psvd.s;
  if (d[0] >= 1.0 - 1e-14 || d[0] + d[1] + std::abs(d[2]) >= 3.0 - 1e-12)
    throw std::invalid_argument("fit_marginal: mean rotation outside the moment range");
  psvd.s = fisher::solve_s_from_d(d, opts, warm_start);
  return psvd;
}

inline MFGParams mle(const std::vector<Mat3>& rs, const std::vector<VecX>& xs,
                     const std::vector<double>& ws = {},
                     const fisher::QuadratureOptions& opts = {},
                     const Vec3* warm_start = nullptr) {
  const size_t n = rs.size();
  if (n == 0 || xs.size() != n || (!ws.empty() && ws.size() != n))
    throw std::invalid_argument("mle: inconsistent sample arrays");
  const int dim = static_cast<int>(xs[0].size());
  double wsum = 0.0;
  Mat3 er = Mat3::Zero();
  VecX ex = VecX::Zero(dim);
  for (size_t i = 0; i < n; ++i) {
    const double w = ws.empty() ? 1.0 : ws[i];
    wsum += w;
    er += w * rs[i];
    ex += w * xs[i];
  }
  if (wsum <= 0.0) throw std::invalid_argument("mle: non-positive total weight");
  er /= wsum;
  ex /= wsum;
  const so3::ProperSvd psvd = fit_marginal(er, opts, warm_start);
  MFGParams probe;
  probe.svd = psvd;
  probe.mu = VecX::Zero(dim);
  probe.P = MatX::Zero(dim, 3);
  probe.Sigma = MatX::Identity(dim, dim);
  MatX exx = MatX::Zero(dim, dim), exnu = MatX::Zero(dim, 3);
  Vec3 enu = Vec3::Zero();
  Mat3 enunu = Mat3::Zero();
  for (size_t i = 0; i < n; ++i) {
    const double w = (ws.empty() ? 1.0 : ws[i]) / wsum;
    const Vec3 nu = nu_R(probe, rs[i]);
    enu += w * nu;
    enunu += w * nu * nu.transpose();
    exnu += w * xs[i] * nu.transpose();
    exx += w * xs[i] * xs[i].transpose();
  }
  return mle_conditional(psvd, ex, exx, enu, exnu, enunu);
}

// ---- Gaussian approximation -------------------------------------------------

struct GaussianApprox {
  VecX mean;  // (x, eta)
  MatX cov;
};

inline GaussianApprox gaussian_approx(const MFGParams& p) {
  const Vec3& s = p.svd.s;
  const Vec3 pair(s[1] + s[2], s[0] + s[2], s[0] + s[1]);
  if (pair.minCoeff() <= 0.0)
    throw std::invalid_argument("gaussian_approx: tr(S)I - S not positive definite");
  const int n = p.n();
  GaussianApprox g;
  g.mean = VecX::Zero(n + 3);
  g.mean.head(n) = p.mu;
  g.cov = MatX::Zero(n + 3, n + 3);
  g.cov.topLeftCorner(n, n) = p.Sigma;
  g.cov.topRightCorner(n, 3) = p.P;
  g.cov.bottomLeftCorner(3, n) = p.P.transpose();
  g.cov.bottomRightCorner(3, 3) = pair.cwiseInverse().asDiagonal();
  return g;
}

// ---- canonical form ----------------------------------------------------------

inline MatX symmetric_sqrt(const MatX& a) {
  Eigen::SelfAdjointEigenSolver<MatX> es(a);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < 0.0)
    throw std::invalid_argument("symmetric_sqrt: matrix not positive semidefinite");
  return es.eigenvectors() *
         es.eigenvalues().cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

inline std::pair<Mat3, VecX> canonicalize(const MFGParams& p, const Mat3& r, const VecX& x) {
  const Mat3 q = p.svd.u.transpose() * r * p.svd.v;
  const MatX root = symmetric_sqrt(p.sigma_c());
  const VecX y = root.ldlt().solve(x - p.mu - p.P * nu_R(p, r));
  return {q, y};
}

inline std::pair<Mat3, VecX> decanonicalize(const MFGParams& p, const Mat3& q, const VecX& y) {
  const Mat3 r = p.svd.u * q * p.svd.v.transpose();
  const MatX root = symmetric_sqrt(p.sigma_c());
  const VecX x = root * y + p.mu + p.P * nu_R(p, r);
  return {r, x};
}

// ---- sampling -----------------------------------------------------------------

template <class Rng>
std::pair<Mat3, VecX> sample(const MFGParams& p, Rng& rng) {
  const Mat3 q = fisher::sample_canonical(p.svd.s, rng);
  const Mat3 r = p.svd.u * q * p.svd.v.transpose();
  Eigen::LLT<MatX> llt(p.sigma_c());
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("sample: covariance not positive definite");
  std::normal_distribution<double> nd(0.0, 1.0);
  VecX z(p.n());
  for (int i = 0; i < p.n(); ++i) z[i] = nd(rng);
  const VecX x = p.mu + p.P * nu_R(p, r) + llt.matrixL() * z;
  return {r, x};
}

// ---- equivalence transforms ------------------------------------------------

// Sign matrix with +1 at position i and -1 elsewhere (det +1).
inline Mat3 sign_matrix(int i) {
  Vec3 d = -Vec3::Ones();
  d[i] = 1.0;
  return d.asDiagonal();
}

// Simultaneous sign change of two columns of U and V.
inline MFGParams reparameterize_sign(const MFGParams& p, int i) {
  const Mat3 di = sign_matrix(i);
  MFGParams out = p;
  out.svd.u = p.svd.u * di;
  out.svd.v = p.svd.v * di;
  out.P = p.P * di;
  return out;
}

// Rotation of the principal axes, legal only for the multiplicity pattern of
// S; the transform follows the eight equivalence cases exactly.
inline MFGParams reparameterize(const MFGParams& p, const Mat3& t) {
  if (!so3::is_rotation(t, 1e-9))
    throw std::invalid_argument("reparameterize: transform must be a rotation");
  const Vec3& s = p.svd.s;
  const double tol = 1e-9 * (1.0 + s.cwiseAbs().maxCoeff());
  const bool def1 = p.svd.convention == so3::SvdConvention::def1;
  auto fixes_axis = [&](int i) {
    return (t.col(i) - Vec3::Unit(i)).norm() < 1e-9 &&
           (t.row(i).transpose() - Vec3::Unit(i)).norm() < 1e-9;
  };
  MFGParams out = p;

  if (s.cwiseAbs().maxCoeff() < tol) {
    // all zero: U, V, P arbitrary
    out.svd.u = p.svd.u * t;
    out.svd.v = p.svd.v * t;
    return out;
  }
  const bool eq12 = std::abs(s[0] - s[1]) < tol;
  const bool eq23 = std::abs(s[1] - s[2]) < tol;
  const bool neg23 = std::abs(s[1] + s[2]) < tol && std::abs(s[1]) >= tol;

  if ((eq12 && eq23) || (eq12 && std::abs(s[1]) < tol)) {
    // s1 = s2 = s3 != 0 (or s1 != 0 handled below): any rotation
    out.svd.u = p.svd.u * t;
    out.svd.v = p.svd.v * t;
    out.P = p.P * t;
    return out;
  }
  if (def1 && eq12 && neg23) {
    // s1 = s2 = -s3 != 0: any rotation, with the covariance correction
    const Mat3 d12 = Vec3(1, 1, -1).asDiagonal();
    out.svd.u = p.svd.u * t;
    out.svd.v = p.svd.v * d12 * t * d12;
    out.P = p.P * t;
    const Mat3 gamma = p.gamma();
    out.Sigma = p.Sigma + p.P * (t * gamma * t.transpose() - gamma) * p.P.transpose();
    out.Sigma = 0.5 * (out.Sigma + out.Sigma.transpose());
    return out;
  }
  if (def1 && neg23 && !eq12) {
    // s1 != s2 = -s3 != 0: rotation about e1, V gets the transpose
    if (!fixes_axis(0))
      throw std::invalid_argument("reparameterize: transform must fix the first axis");
    out.svd.u = p.svd.u * t;
    out.svd.v = p.svd.v * t.transpose();
    out.P = p.P * t;
    const Mat3 gamma = p.gamma();
    out.Sigma = p.Sigma + p.P * (t * gamma * t.transpose() - gamma) * p.P.transpose();
    out.Sigma = 0.5 * (out.Sigma + out.Sigma.transpose());
    return out;
  }
  if (eq23 && std::abs(s[1]) >= tol && !eq12) {
    // s1 != s2 = s3 != 0: rotation about e1
    if (!fixes_axis(0))
      throw std::invalid_argument("reparameterize: transform must fix the first axis");
    out.svd.u = p.svd.u * t;
    out.svd.v = p.svd.v * t;
    out.P = p.P * t;
    return out;
  }
  if (eq12 && !eq23 && !neg23) {
    // s1 = s2 != |s3|: rotation about e3
    if (!fixes_axis(2))
      throw std::invalid_argument("reparameterize: transform must fix the third axis");
    out.svd.u = p.svd.u * t;
    out.svd.v = p.svd.v * t;
    out.P = p.P * t;
    return out;
  }
  if (eq23 && std::abs(s[1]) < tol) {
    throw std::invalid_argument(
        "reparameterize: s2 = s3 = 0 requires two independent angles; use the two-angle overload");
  }
  // distinct singular values: only the identity is legal
  if ((t - Mat3::Identity()).norm() > 1e-9)
    throw std::invalid_argument("reparameterize: distinct singular values admit no rotation");
  return out;
}

// s1 != s2 = s3 = 0: independent rotations of U and V about the first axis.
inline MFGParams reparameterize(const MFGParams& p, double theta1, double theta2) {
  const Vec3& s = p.svd.s;
  const double tol = 1e-9 * (1.0 + s.cwiseAbs().maxCoeff());
  if (!(std::abs(s[1]) < tol && std::abs(s[2]) < tol && std::abs(s[0]) >= tol))
    throw std::invalid_argument("reparameterize: two-angle form requires s2 = s3 = 0 != s1");
  MFGParams out = p;
  out.svd.u = p.svd.u * so3::exp_so3(theta1 * Vec3::Unit(0));
  out.svd.v = p.svd.v * so3::exp_so3(theta2 * Vec3::Unit(0));
  Eigen::Matrix2d rot;
  rot << std::cos(theta1), -std::sin(theta1), std::sin(theta1), std::cos(theta1);
  out.P.rightCols(2) = p.P.rightCols(2) * rot;
  return out;
}

// Theorem-3 style conversion between the two sign conventions; identity when
// s3 >= 0.
inline MFGParams convert_convention(const MFGParams& p) {
  MFGParams out = p;
  out.svd.convention = (p.svd.convention == so3::SvdConvention::def1)
                           ? so3::SvdConvention::def2
                           : so3::SvdConvention::def1;
  if (p.svd.s[2] >= 0.0) return out;
  const Mat3 d3 = sign_matrix(2);  // diag(-1, -1, 1)
  const Vec3 s_new = p.svd.s.cwiseProduct(Vec3(-1, -1, 1));
  const Mat3 gamma_old = p.gamma();
  const Mat3 gamma_new = (s_new.sum() * Vec3::Ones() - s_new).asDiagonal();
  out.svd.s = s_new;
  out.svd.v = p.svd.v * d3;
  out.Sigma = p.Sigma - p.P * gamma_old * p.P.transpose() +
              p.P * gamma_new * p.P.transpose();
  out.Sigma = 0.5 * (out.Sigma + out.Sigma.transpose());
  return out;
}

// ---- diagnostics and algebra --------------------------------------------------

// Ratio of the Fisher information about s_1 carried by R versus by x | R, for
// the n = 1 family with S = sI and P = (rho sigma / sqrt(2 s)) [1, 1, 1].
inline double information_ratio(double s, double rho,
                                const fisher::QuadratureOptions& opts = {}) {
  if (!(s > 0.0)) throw std::invalid_argument("information_ratio: s must be positive");
  if (!(rho * rho > 0.0 && rho * rho < 1.0 / 3.0))
    throw std::invalid_argument("information_ratio: need 0 < rho^2 < 1/3");
  const fisher::NormalizerBundle nb = fisher::normalizer(Vec3::Constant(s), opts);
  const double d1 = nb.d[0], e11 = nb.d2r(0, 0), e12 = nb.d2r(0, 1);
  const double r = 2.0 * s * s * (e11 - d1 * d1) / (d1 + s * e11 - s * e12);
  return (1.0 - 3.0 * rho * rho) / (rho * rho) * r;
}

// The concentration-dependent factor of the information ratio.
inline double information_ratio_factor(double s, const fisher::QuadratureOptions& opts = {}) {
  const fisher::NormalizerBundle nb = fisher::normalizer(Vec3::Constant(s), opts);
  const double d1 = nb.d[0], e11 = nb.d2r(0, 0), e12 = nb.d2r(0, 1);
  return 2.0 * s * s * (e11 - d1 * d1) / (d1 + s * e11 - s * e12);
}

inline MFGParams add_independent_gaussian(const MFGParams& p, const VecX& mu2,
                                          const MatX& sigma2) {
  MFGParams out = p;
  out.mu += mu2;
  out.Sigma += sigma2;
  return out;
}

// ---- embedded (9+n)-dimensional Gaussian construction -------------------------

struct EmbeddedGaussian {
  VecX mu_R;          // 9
  MatX sigma_R_inv;   // 9 x 9 = I kron K
  MatX P_R;           // n x 9
  MatX tangent_basis; // 9 x 9, rows t_1..t_9
};

inline VecX vec_of(const Mat3& m) {
  VecX out(9);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) out[3 * j + i] = m(i, j);
  return out;
}

inline EmbeddedGaussian embed(const MFGParams& p) {
  const Mat3 m = p.mode();
  const Mat3 k = p.svd.v * p.svd.s.asDiagonal() * p.svd.v.transpose();
  EmbeddedGaussian e;
  e.mu_R = vec_of(m.transpose());
  e.sigma_R_inv = MatX::Zero(9, 9);
  for (int b = 0; b < 3; ++b) e.sigma_R_inv.block<3, 3>(3 * b, 3 * b) = k;
  MatX t = MatX::Zero(9, 9);
  for (int i = 0; i < 3; ++i) {
    const Mat3 ti = m * so3::hat(p.svd.v.col(i));
    t.row(i) = vec_of(ti.transpose()).transpose();
  }
  // complete t4..t9 by orthonormalizing against the tangent rows
  Eigen::HouseholderQR<MatX> qr(t.topRows(3).transpose());
  const MatX qfull = qr.householderQ();
  t.bottomRows(6) = qfull.rightCols(6).transpose();
  e.tangent_basis = t;
  MatX pr = MatX::Zero(p.n(), 9);
  pr.leftCols(3) = p.P;
  e.P_R = pr * t;
  return e;
}

// ---- flat numeric serialization ------------------------------------------------

inline VecX to_flat(const MFGParams& p) {
  const int n = p.n();
  VecX out(1 + n + n * n + 3 * n + 9 + 3 + 9 + 1);
  int at = 0;
  out[at++] = n;
  for (int i = 0; i < n; ++i) out[at++] = p.mu[i];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out[at++] = p.Sigma(i, j);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) out[at++] = p.P(i, j);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[at++] = p.svd.u(i, j);
  for (int i = 0; i < 3; ++i) out[at++] = p.svd.s[i];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[at++] = p.svd.v(i, j);
  out[at++] = (p.svd.convention == so3::SvdConvention::def1) ? 1.0 : 2.0;
  return out;
}

inline MFGParams from_flat(const VecX& v) {
  if (v.size() < 2) throw std::invalid_argument("from_flat: record too short");
  const int n = static_cast<int>(std::lround(v[0]));
  const int want = 1 + n + n * n + 3 * n + 9 + 3 + 9 + 1;
  if (n < 0 || v.size() != want)
    throw std::invalid_argument("from_flat: record length mismatch");
  MFGParams p;
  int at = 1;
  p.mu = v.segment(at, n);
  at += n;
  p.Sigma.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) p.Sigma(i, j) = v[at++];
  p.P.resize(n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) p.P(i, j) = v[at++];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p.svd.u(i, j) = v[at++];
  for (int i = 0; i < 3; ++i) p.svd.s[i] = v[at++];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p.svd.v(i, j) = v[at++];
  p.svd.convention = (v[at] == 2.0) ? so3::SvdConvention::def2 : so3::SvdConvention::def1;
  return p;
}

}  // namespace mfg
