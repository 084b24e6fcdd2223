#pragma once

// Measurement update: fusing full-attitude measurements (matrix Fisher
// distributed errors) and unit-vector direction measurements (von Mises-
// Fisher distributed errors) into the joint attitude/linear distribution.
// The posterior attitude marginal is conjugate; the linear part is refit by
// conditional maximum likelihood from the exact posterior moments.

#include <mfg/propagation.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace mfg {

// Full attitude measurement Z with error model R_true^T Z ~ M(Fz).
struct AttitudeMeasurement {
  Mat3 Z;
  Mat3 Fz;
};

// Direction measurement z of the reference vector a (inertial frame), with
// z | R ~ vMF(R^T B a, kappa); B is the constant sensor bias rotation.
struct VectorMeasurement {
  Vec3 a;
  Vec3 z;
  double kappa = 1.0;
  Mat3 B = Mat3::Identity();
};

// Natural-parameter fusion of all simultaneous measurements.
inline Mat3 posterior_F(const Mat3& f_prior,
                        const std::vector<AttitudeMeasurement>& atts,
                        const std::vector<VectorMeasurement>& vecs) {
  Mat3 f = f_prior;
  for (const auto& m : atts) f += m.Z * m.Fz.transpose();
  for (const auto& m : vecs) f += m.kappa * m.B * m.a * m.z.transpose();
  return f;
}

inline MFGParams update(const MFGParams& prior,
                        const std::vector<AttitudeMeasurement>& atts,
                        const std::vector<VectorMeasurement>& vecs,
                        const fisher::QuadratureOptions& opts = {}) {
  using detail::LinQ;
  const Mat3 f_post = posterior_F(prior.F(), atts, vecs);
  const so3::ProperSvd post = so3::proper_svd(f_post, prior.svd.convention);
  const fisher::QMomentTable t = fisher::q_moments(post.s, 2, opts);
  Vec3 d;
  for (int i = 0; i < 3; ++i) d[i] = t.first(i, i);

  // frame change between the prior and posterior principal axes
  const Mat3 u_t = prior.svd.u.transpose() * post.u;
  const Mat3 v_t = prior.svd.v.transpose() * post.v;
  const Mat3 s_t = u_t.transpose() * prior.svd.s.asDiagonal() * v_t;

  const std::array<LinQ, 3> nu_t = detail::nu_forms(s_t);                     // prior-axes deviation
  const std::array<LinQ, 3> nu_p = detail::nu_forms(Mat3(post.s.asDiagonal()));  // posterior-axes deviation

  // first moments
  const Mat3 eq = d.asDiagonal();
  const Vec3 enu_prior = u_t * so3::vee(eq * s_t.transpose() - s_t * eq.transpose());

  // second moments
  Mat3 e_ntnt = Mat3::Zero(), e_ntnp = Mat3::Zero(), e_npnp = Mat3::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      e_ntnt(i, j) = detail::e2(nu_t[i], nu_t[j], t);
      e_ntnp(i, j) = detail::e2(nu_t[i], nu_p[j], t);
      e_npnp(i, j) = detail::e2(nu_p[i], nu_p[j], t);
    }
  const Mat3 enunu_prior = u_t * e_ntnt * u_t.transpose();
  const Mat3 enu_cross = u_t * e_ntnp;  // E[nu_prior nu_post^T | Z]
  Vec3 enu_post;
  for (int i = 0; i < 3; ++i) enu_post[i] = detail::e1(nu_p[i], t);

  const MatX sigma_c = prior.sigma_c();
  const VecX ex = prior.mu + prior.P * enu_prior;
  const MatX exx = prior.mu * prior.mu.transpose() +
                   prior.mu * enu_prior.transpose() * prior.P.transpose() +
                   prior.P * enu_prior * prior.mu.transpose() +
                   prior.P * enunu_prior * prior.P.transpose() + sigma_c;
  const MatX exnu = prior.P * enu_cross;

  return mle_conditional(post, ex, exx, enu_post, exnu, e_npnp);
}

// ---- measurement generators -----------------------------------------------------

template <class Rng>
Mat3 sample_attitude_measurement(const Mat3& r_true, const Mat3& fz, Rng& rng) {
  const fisher::MatrixFisher mf{so3::proper_svd(fz, so3::SvdConvention::def1)};
  return r_true * fisher::sample(mf, rng);
}

// Exact inverse-CDF sampler for the von Mises-Fisher distribution on the
// 2-sphere with mean direction m and concentration kappa.
template <class Rng>
Vec3 sample_vmf(const Vec3& m, double kappa, Rng& rng) {
  if (!(kappa > 0.0)) throw std::invalid_argument("sample_vmf: kappa must be positive");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  // W = 1 + log(u + (1 - u) e^{-2 kappa}) / kappa, computed stably
  const double w = 1.0 + std::log(u + (1.0 - u) * std::exp(-2.0 * kappa)) / kappa;
  const double phi = 2.0 * M_PI * unif(rng);
  const Vec3 mhat = m.normalized();
  // orthonormal completion of the mean direction
  Vec3 e1 = mhat.cross((std::abs(mhat[0]) < 0.9) ? Vec3::UnitX() : Vec3::UnitY());
  e1.normalize();
  const Vec3 e2 = mhat.cross(e1);
  const double sroot = std::sqrt(std::max(0.0, 1.0 - w * w));
  return w * mhat + sroot * (std::cos(phi) * e1 + std::sin(phi) * e2);
}

template <class Rng>
Vec3 sample_vector_measurement(const Mat3& r_true, const VectorMeasurement& model,
                               Rng& rng) {
  const Vec3 mean = r_true.transpose() * model.B * model.a;
  return sample_vmf(mean, model.kappa, rng);
}

}  // namespace mfg
