#pragma once

// SO(3)/so(3) primitives: hat/vee maps, exponential and logarithm with
// small-angle series, proper singular value decomposition in the two sign
// conventions, and Haar-uniform sampling.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mfg {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

namespace so3 {

inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

inline Vec3 vee(const Mat3& a, double tol = 1e-9) {
  if ((a + a.transpose()).norm() >= tol)
    throw std::invalid_argument("vee: matrix is not antisymmetric within tolerance");
  return Vec3(a(2, 1), a(0, 2), a(1, 0));
}

// Rodrigues formula; coefficients switch to Taylor series below the
// small-angle threshold to avoid cancellation.
inline Mat3 exp_so3(const Vec3& v) {
  const double th2 = v.squaredNorm();
  const double th = std::sqrt(th2);
  double a, b;  // sin(th)/th and (1-cos(th))/th^2
  if (th < 1e-4) {
    a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0;
    b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0;
  } else {
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / th2;
  }
  const Mat3 k = hat(v);
  return Mat3::Identity() + a * k + b * (k * k);
}

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r.transpose() * r - Mat3::Identity()).norm() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

// Principal logarithm; ||result|| <= pi. Near a half turn the axis is taken
// from the dominant diagonal of (R + I)/2 with the sign of the first nonzero
// component fixed positive.
inline Vec3 log_so3(const Mat3& r) {
  const double tr = r.trace();
  const double c = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
  const double th = std::acos(c);
  const Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (th < 1e-4) {
    // w = 2 sin(th) * axis; th/(2 sin th) = 1/2 + th^2/12 + 7 th^4/720 + ...
    const double th2 = th * th;
    return (0.5 + th2 / 12.0 + 7.0 * th2 * th2 / 720.0) * w;
  }
  if (th < M_PI - 1e-6) {
    return (th / (2.0 * std::sin(th))) * w;
  }
  // Near pi: axis from B = (R + I)/2 whose diagonal holds axis_i^2.
  const Mat3 b = 0.5 * (r + Mat3::Identity());
  int k = 0;
  b.diagonal().maxCoeff(&k);
  Vec3 axis;
  axis[k] = std::sqrt(std::max(0.0, b(k, k)));
  for (int i = 0; i < 3; ++i)
    if (i != k) axis[i] = b(i, k) / axis[k];
  axis.normalize();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(axis[i]) > 1e-12) {
      if (axis[i] < 0.0) axis = -axis;
      break;
    }
  }
  // Refine the angle: |w| = 2 sin(th), th in (pi/2, pi].
  const double s = 0.5 * w.norm();
  const double theta = M_PI - std::asin(std::min(1.0, s));
  // Keep consistency of axis direction with w when not exactly at pi.
  if (s > 1e-12 && axis.dot(w) < 0.0) axis = -axis;
  return theta * axis;
}

enum class SvdConvention { def1, def2 };

struct ProperSvd {
  Mat3 u;
  Vec3 s;
  Mat3 v;
  SvdConvention convention = SvdConvention::def1;

  Mat3 reconstruct() const { return u * s.asDiagonal() * v.transpose(); }
};

// Proper SVD: standard SVD followed by sign surgery so U, V are rotations.
// def1 moves any sign onto s3 (s1 >= s2 >= |s3|); def2 flips the whole S
// (monotone, same sign). Columns of the raw U' are sign-fixed so their first
// nonzero element is positive (paired with the same flip on V'), which makes
// the factorization unique for distinct singular values.
inline ProperSvd proper_svd(const Mat3& f, SvdConvention conv = SvdConvention::def1) {
  Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 up = svd.matrixU();
  Mat3 vp = svd.matrixV();
  Vec3 sp = svd.singularValues();
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(up(i, j)) > 1e-12) {
        if (up(i, j) < 0.0) {
          up.col(j) *= -1.0;
          vp.col(j) *= -1.0;
        }
        break;
      }
    }
  }
  const double du = up.determinant() > 0.0 ? 1.0 : -1.0;
  const double dv = vp.determinant() > 0.0 ? 1.0 : -1.0;
  ProperSvd out;
  out.convention = conv;
  if (conv == SvdConvention::def1) {
    out.u = up;
    out.u.col(2) *= du;
    out.v = vp;
    out.v.col(2) *= dv;
    out.s = Vec3(sp[0], sp[1], du * dv * sp[2]);
  } else {
    out.u = du * up;
    out.v = dv * vp;
    out.s = du * dv * sp;
  }
  return out;
}

inline Mat3 quat_to_matrix(double q0, double q1, double q2, double q3) {
  Mat3 r;
  r << q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3, 2.0 * (q1 * q2 - q0 * q3), 2.0 * (q1 * q3 + q0 * q2),
       2.0 * (q1 * q2 + q0 * q3), q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3, 2.0 * (q2 * q3 - q0 * q1),
       2.0 * (q1 * q3 - q0 * q2), 2.0 * (q2 * q3 + q0 * q1), q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3;
  return r;
}

// Haar-uniform rotation from a normalized 4D Gaussian quaternion.
template <class Rng>
Mat3 uniform_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  double q0, q1, q2, q3, s2;
  do {
    q0 = n(rng); q1 = n(rng); q2 = n(rng); q3 = n(rng);
    s2 = q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3;
  } while (s2 < 1e-12);
  const double inv = 1.0 / std::sqrt(s2);
  return quat_to_matrix(q0 * inv, q1 * inv, q2 * inv, q3 * inv);
}

// Nearest rotation matrix (projection via proper SVD).
inline Mat3 project_to_so3(const Mat3& m) {
  const ProperSvd p = proper_svd(m);
  return p.u * p.v.transpose();
}

}  // namespace so3
}  // namespace mfg
