#pragma once

// Uncertainty propagation for the attitude + gyro-bias model
//   R_{k+1} = R_k exp{ h (Omega_k + x_k)^ + w_u^ },  w_u ~ N(0, h G_u)
//   x_{k+1} = x_k + w_v,                             w_v ~ N(0, h G_v)
// with two schemes: an analytical first-order moment propagation and a
// deterministic sigma-point (unscented) transform. Both refit the propagated
// moments to the closest distribution in the family by maximum likelihood.

#include <mfg/distribution.hpp>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mfg {

struct GyroNoiseModel {
  Mat3 Gu = Mat3::Zero();  // attitude diffusion (rad^2 / s)
  Mat3 Gv = Mat3::Zero();  // bias diffusion (rad^2 / s^3)
};

// One Euler-Maruyama step of the discretized kinematics.
template <class Rng>
std::pair<Mat3, Vec3> discrete_step(const Mat3& r, const Vec3& x, const Vec3& omega,
                                    double h, const GyroNoiseModel& noise, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const MatX lu = symmetric_sqrt(noise.Gu * h);
  const MatX lv = symmetric_sqrt(noise.Gv * h);
  const Vec3 z1(nd(rng), nd(rng), nd(rng));
  const Vec3 z2(nd(rng), nd(rng), nd(rng));
  const Vec3 wu = lu * z1;
  const Vec3 wv = lv * z2;
  return {r * so3::exp_so3(h * (omega + x) + wu), x + wv};
}

namespace detail {

// Affine function of the entries of Q: c0 + sum_ij a_ij Q_ij.
struct LinQ {
  double c0 = 0.0;
  Mat3 a = Mat3::Zero();
};

using Vec9 = Eigen::Matrix<double, 9, 1>;

// coefficients flattened in the moment-table index order (i * 3 + j)
inline Vec9 flat9(const Mat3& a) {
  Vec9 v;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v[i * 3 + j] = a(i, j);
  return v;
}

inline double e1(const LinQ& l, const fisher::QMomentTable& t) {
  double out = l.c0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (l.a(i, j) != 0.0) out += l.a(i, j) * t.first(i, j);
  return out;
}

inline double e2(const LinQ& f, const LinQ& g, const fisher::QMomentTable& t) {
  const Vec9 f9 = flat9(f.a), g9 = flat9(g.a);
  Eigen::Map<const Eigen::Matrix<double, 9, 9, Eigen::RowMajor>> m2(t.second_data());
  return f.c0 * g.c0 + f.c0 * (e1(g, t) - g.c0) + g.c0 * (e1(f, t) - f.c0) +
         f9.dot(m2 * g9);
}

inline double e3(const LinQ& f, const LinQ& g, const LinQ& u,
                 const fisher::QMomentTable& t) {
  const Vec9 f9 = flat9(f.a), g9 = flat9(g.a), u9 = flat9(u.a);
  const Vec9 d9 = flat9(t.first_matrix());
  Eigen::Map<const Eigen::Matrix<double, 9, 9, Eigen::RowMajor>> m2(t.second_data());
  Eigen::Map<const Eigen::Matrix<double, 9, 81, Eigen::RowMajor>> m3(t.third_data());
  // outer product of the second and third factors, row-major flattened to
  // match the trailing two indices of the third-moment tensor
  Eigen::Matrix<double, 9, 9, Eigen::RowMajor> gu = g9 * u9.transpose();
  Eigen::Map<const Eigen::Matrix<double, 81, 1>> gu81(gu.data());
  const double ef = f9.dot(d9), eg = g9.dot(d9), eu = u9.dot(d9);
  return f.c0 * g.c0 * u.c0 + f.c0 * g.c0 * eu + f.c0 * u.c0 * eg +
         g.c0 * u.c0 * ef + f.c0 * g9.dot(m2 * u9) + g.c0 * f9.dot(m2 * u9) +
         u.c0 * f9.dot(m2 * g9) + f9.dot(m3 * gu81);
}

// Components of (Q A^T - A Q^T)^vee as affine functions of Q, for a general
// 3 x 3 matrix A.
inline std::array<LinQ, 3> nu_forms(const Mat3& a) {
  std::array<LinQ, 3> out;
  for (int i = 0; i < 3; ++i) {
    const int j = (i + 1) % 3, k = (i + 2) % 3;
    for (int m = 0; m < 3; ++m) {
      out[i].a(k, m) += a(j, m);
      out[i].a(j, m) -= a(k, m);
    }
  }
  return out;
}

}  // namespace detail

// Linear-in-Q closed form of (tr(Q A^T) I - Q A^T) Q, valid on rotations.
inline std::array<std::array<detail::LinQ, 3>, 3> gamma_forms(const Mat3& a) {
  std::array<std::array<detail::LinQ, 3>, 3> g;
  for (int i = 0; i < 3; ++i) {
    const int p = (i + 1) % 3, q = (i + 2) % 3;
    for (int j = 0; j < 3; ++j) {
      const int r = (j + 1) % 3, t = (j + 2) % 3;
      // (i, j) entry: cofactor pairing of the complementary 2 x 2 blocks
      g[i][j].a(q, t) += a(p, r);
      g[i][j].a(p, r) += a(q, t);
      g[i][j].a(q, r) -= a(p, t);
      g[i][j].a(p, t) -= a(q, r);
    }
  }
  return g;
}

// Definitional (quadratic) form, used as a cross-check of the linear one.
inline Mat3 gamma_Q(const Mat3& a, const Mat3& q) {
  const Mat3 qa = q * a.transpose();
  return (qa.trace() * Mat3::Identity() - qa) * q;
}

// Analytical propagation: first-order moment expansion followed by the
// marginal and conditional maximum-likelihood refit.
inline MFGParams propagate_analytical(const MFGParams& p, const Vec3& omega, double h,
                                      const GyroNoiseModel& noise,
                                      const fisher::QuadratureOptions& opts = {}) {
  if (p.n() != 3)
    throw std::invalid_argument("propagate_analytical: requires a 3-dimensional linear part");
  using detail::LinQ;
  const Vec3& s = p.svd.s;
  const Mat3 u_k = p.svd.u, v_k = p.svd.v;
  const Mat3 gu = noise.Gu;
  const fisher::QMomentTable t3 = fisher::q_moments(s, 3, opts);
  Vec3 d;
  for (int i = 0; i < 3; ++i) d[i] = t3.first(i, i);

  // mean rotation after one step
  const Mat3 dr = so3::exp_so3(h * (omega + Vec3(p.mu)));
  const std::array<LinQ, 3> nu_k = detail::nu_forms(Mat3(s.asDiagonal()));
  std::array<LinQ, 3> w;  // components of P nu_R
  for (int c = 0; c < 3; ++c)
    for (int dd = 0; dd < 3; ++dd) {
      w[c].a += p.P(c, dd) * nu_k[dd].a;
    }
  // E[ Q V^T hat(P nu_R) ]
  Mat3 eqvh = Mat3::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int l = 0; l < 3; ++l) {
        // hat(w)(l, j) = -eps_{ljc} w_c
        const int c = 3 - l - j;
        if (l == j || c < 0 || c > 2) continue;
        const double sign = ((j - l + 3) % 3 == 1) ? -1.0 : 1.0;  // -eps_{ljc}
        LinQ row;  // (Q V^T)_{il} = sum_m Q_im V_lm
        for (int m = 0; m < 3; ++m) row.a(i, m) = v_k(l, m);
        acc += sign * detail::e2(row, w[c], t3);
      }
      eqvh(i, j) = acc;
    }
  const Mat3 er_k = u_k * d.asDiagonal() * v_k.transpose();
  const Mat3 er_next =
      (er_k * (Mat3::Identity() + 0.5 * h * (gu - gu.trace() * Mat3::Identity())) +
       h * u_k * eqvh) * dr;

  Vec3 warm = s;
  const so3::ProperSvd next = fit_marginal(er_next, opts, &warm);

  // frame-change matrices between the steps
  const Mat3 u_t = next.u.transpose() * u_k;
  const Mat3 v_t = next.v.transpose() * dr.transpose() * v_k;
  const Mat3 s_t = u_t.transpose() * next.s.asDiagonal() * v_t;
  const Mat3 v_tt = next.v.transpose() * dr.transpose() * gu.transpose() * v_k;
  const Mat3 s_tt = u_t.transpose() * s.asDiagonal() * v_tt;

  const std::array<LinQ, 3> nu_t = detail::nu_forms(s_t);
  const std::array<LinQ, 3> nu_tt = detail::nu_forms(s_tt);
  const auto gam = gamma_forms(s_t);
  const Mat3 pv = p.P.transpose() * v_k;  // P^T V
  const Mat3 vgv = v_k.transpose() * gu * v_k;
  const double tr_gu = gu.trace();

  // E[Gamma^T], E[nu~], E[nu~~]
  Mat3 egamma_t = Mat3::Zero();
  Vec3 enu_t, enu_tt;
  for (int i = 0; i < 3; ++i) {
    enu_t[i] = detail::e1(nu_t[i], t3);
    enu_tt[i] = detail::e1(nu_tt[i], t3);
    for (int j = 0; j < 3; ++j) egamma_t(i, j) = detail::e1(gam[j][i], t3);
  }

  // second-moment blocks
  Mat3 e_nu_nut = Mat3::Zero(), e_nu_nutt = Mat3::Zero(), e_nunu = Mat3::Zero();
  Mat3 e_nut_nut = Mat3::Zero(), e_nut_nutt = Mat3::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      e_nu_nut(i, j) = detail::e2(nu_k[i], nu_t[j], t3);
      e_nu_nutt(i, j) = detail::e2(nu_k[i], nu_tt[j], t3);
      e_nunu(i, j) = detail::e2(nu_k[i], nu_k[j], t3);
      e_nut_nut(i, j) = detail::e2(nu_t[i], nu_t[j], t3);
      e_nut_nutt(i, j) = detail::e2(nu_t[i], nu_tt[j], t3);
    }

  // row vector E[nu_R^T P^T V Gamma^T] and matrices with one extra nu factor
  Vec3 row3 = Vec3::Zero();
  Mat3 e_nu_nu_pvg = Mat3::Zero();   // E[nu nu^T P^T V Gamma^T]
  Mat3 e_nut_nu_pvg = Mat3::Zero();  // E[nu~ nu^T P^T V Gamma^T]
  for (int j = 0; j < 3; ++j)
    for (int m = 0; m < 3; ++m)
      for (int l = 0; l < 3; ++l) {
        if (pv(m, l) == 0.0) continue;
        row3[j] += pv(m, l) * detail::e2(nu_k[m], gam[j][l], t3);
        for (int i = 0; i < 3; ++i) {
          e_nu_nu_pvg(i, j) += pv(m, l) * detail::e3(nu_k[i], nu_k[m], gam[j][l], t3);
          e_nut_nu_pvg(i, j) += pv(m, l) * detail::e3(nu_t[i], nu_k[m], gam[j][l], t3);
        }
      }
  // E[Gamma V^T Gu V Gamma^T]
  Mat3 e_gvg = Mat3::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          if (vgv(a, b) != 0.0)
            e_gvg(i, j) += vgv(a, b) * detail::e2(gam[i][a], gam[j][b], t3);

  // assemble the cross moment E[x nu^T] at the next step
  const Mat3 sigma_c = p.sigma_c();
  Mat3 exnu = h * sigma_c * v_k * egamma_t * u_t.transpose();
  const Vec3 mu_row = enu_t + 0.5 * h * enu_tt - 0.5 * h * tr_gu * enu_t + h * row3;
  exnu += Vec3(p.mu) * mu_row.transpose() * u_t.transpose();
  const Mat3 p_block = e_nu_nut + 0.5 * h * e_nu_nutt - 0.5 * h * tr_gu * e_nu_nut +
                       h * e_nu_nu_pvg;
  exnu += p.P * p_block * u_t.transpose();

  // assemble E[nu nu^T] at the next step
  Mat3 inner = e_nut_nut * (1.0 - h * tr_gu) + 0.5 * h * (e_nut_nutt + e_nut_nutt.transpose()) +
               h * e_nut_nu_pvg + h * e_nut_nu_pvg.transpose() + h * e_gvg;
  Mat3 enunu_next = u_t * inner * u_t.transpose();
  enunu_next = 0.5 * (enunu_next + enunu_next.transpose());

  const MatX exx = p.sigma_c() + p.mu * p.mu.transpose() +
                   p.P * e_nunu * p.P.transpose() + h * noise.Gv;
  MFGParams out = mle_conditional(next, p.mu, exx, Vec3::Zero(), exnu, enunu_next);
  out.svd = next;
  return out;
}

// ---- sigma points --------------------------------------------------------------

struct SigmaPoint {
  Mat3 r;
  VecX x;
  double w;
};

struct SigmaPointOptions {
  double w_M = 0.5;  // total weight of the rotation pairs
  double w_G = 0.4;  // total weight of the linear pairs
  double cos_lower = -std::sqrt(3.0) / 2.0;
};

inline std::vector<SigmaPoint> sigma_points(const MFGParams& p,
                                            const SigmaPointOptions& spo = {},
                                            const fisher::QuadratureOptions& opts = {}) {
  const Vec3& s = p.svd.s;
  const fisher::NormalizerBundle nb = fisher::normalizer(s, opts);
  const double log_c = nb.log_c;
  auto cos_theta = [&](double sigma, int i) {
    const int j = (i + 1) % 3, k = (i + 2) % 3;
    const double pair = s[j] + s[k];
    if (pair >= 1.0) return sigma + (1.0 - sigma) * (log_c - s[i]) / pair;
    return (sigma + (1.0 - sigma) * (log_c - s[i]) + 0.5) * pair - 0.5;
  };
  auto weight = [&](double ct, int i) {
    const int j = (i + 1) % 3, k = (i + 2) % 3;
    return (nb.d[i] - nb.d[j] - nb.d[k] + 1.0) / (4.0 * (1.0 - std::min(ct, 1.0 - 1e-14)));
  };
  auto total = [&](double sigma) {
    double g = 0.0;
    for (int i = 0; i < 3; ++i) g += 2.0 * weight(cos_theta(sigma, i), i);
    return g;
  };
  // weights grow with sigma; solve 2 (w1 + w2 + w3) = w_M by bisection
  double lo = -8.0, hi = 1.0 - 1e-9;
  double sigma;
  if (total(hi) <= spo.w_M) {
    sigma = hi;
  } else if (total(lo) >= spo.w_M) {
    sigma = lo;
  } else {
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (total(mid) < spo.w_M ? lo : hi) = mid;
    }
    sigma = 0.5 * (lo + hi);
  }
  // keep the angles within the stability bound (cos theta is affine and
  // increasing in sigma)
  for (int i = 0; i < 3; ++i) {
    const double c0 = cos_theta(0.0, i), c1 = cos_theta(1.0, i);
    const double slope = c1 - c0;
    if (slope > 1e-14 && cos_theta(sigma, i) < spo.cos_lower)
      sigma = std::max(sigma, (spo.cos_lower - c0) / slope);
  }

  const int n = p.n();
  std::vector<SigmaPoint> pts;
  pts.reserve(7 + 2 * n);
  const MatX root = symmetric_sqrt(p.sigma_c());
  double wm_actual = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double ct = std::max(std::min(cos_theta(sigma, i), 1.0), -1.0);
    const double th = std::acos(ct);
    const double wi = weight(ct, i);
    wm_actual += 2.0 * wi;
    for (double sgn : {1.0, -1.0}) {
      SigmaPoint sp;
      const Mat3 q = so3::exp_so3(sgn * th * Vec3::Unit(i));
      sp.r = p.svd.u * q * p.svd.v.transpose();
      sp.x = p.mu + p.P * nu_R(p, sp.r);
      sp.w = wi;
      pts.push_back(sp);
    }
  }
  const double scale = std::sqrt(static_cast<double>(n) / spo.w_G);
  for (int j = 0; j < n; ++j)
    for (double sgn : {1.0, -1.0}) {
      SigmaPoint sp;
      sp.r = p.mode();
      sp.x = p.mu + sgn * scale * root.col(j);
      sp.w = spo.w_G / (2.0 * n);
      pts.push_back(sp);
    }
  SigmaPoint center;
  center.r = p.mode();
  center.x = p.mu;
  // the residual weight keeps the total at one even when the angle bound or
  // the weight equation is binding
  center.w = 1.0 - spo.w_G - wm_actual;
  pts.push_back(center);
  return pts;
}

// Deterministic points and weights for a zero-mean Gaussian with covariance c.
inline std::vector<std::pair<Vec3, double>> gaussian_sigma_points(const Mat3& c,
                                                                  double w0 = 1.0 / 3.0) {
  Eigen::LLT<Mat3> llt(c);
  const Mat3 root = (llt.info() == Eigen::Success) ? Mat3(llt.matrixL())
                                                   : Mat3(symmetric_sqrt(c));
  std::vector<std::pair<Vec3, double>> pts;
  pts.emplace_back(Vec3::Zero(), w0);
  const double scale = std::sqrt(3.0 / (1.0 - w0));
  const double wc = (1.0 - w0) / 6.0;
  for (int j = 0; j < 3; ++j)
    for (double sgn : {1.0, -1.0}) pts.emplace_back(sgn * scale * root.col(j), wc);
  return pts;
}

inline MFGParams propagate_unscented(const MFGParams& p, const Vec3& omega, double h,
                                     const GyroNoiseModel& noise,
                                     const SigmaPointOptions& spo = {},
                                     const fisher::QuadratureOptions& opts = {}) {
  if (p.n() != 3)
    throw std::invalid_argument("propagate_unscented: requires a 3-dimensional linear part");
  const std::vector<SigmaPoint> sps = sigma_points(p, spo, opts);
  const auto gpts = gaussian_sigma_points(h * noise.Gu);
  std::vector<Mat3> rs;
  std::vector<VecX> xs;
  std::vector<double> ws;
  rs.reserve(sps.size() * gpts.size());
  for (const auto& sp : sps)
    for (const auto& [wu, wj] : gpts) {
      rs.push_back(sp.r * so3::exp_so3(h * (omega + Vec3(sp.x)) + wu));
      xs.push_back(sp.x);
      ws.push_back(sp.w * wj);
    }
  Vec3 warm = p.svd.s;
  MFGParams out = mle(rs, xs, ws, opts, &warm);
  out.Sigma += h * noise.Gv;
  return out;
}

}  // namespace mfg
