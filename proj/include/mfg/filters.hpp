#pragma once

// Filter layer: the Bayesian attitude + gyro-bias estimator over the joint
// rotation/linear family with selectable propagation backend, a standard
// multiplicative EKF baseline, conversion between the two measurement-noise
// conventions, and error metrics.

#include <mfg/measurement.hpp>

#include <cstdint>
#include <stdexcept>

namespace mfg {

enum class Backend { analytical, unscented };

// Quadrature accuracy used inside the recursive filter: loose enough that the
// cached grid levels are trusted (one evaluation per call), still far below
// the statistical error of the estimation problem.
inline fisher::QuadratureOptions filter_quadrature_options() {
  fisher::QuadratureOptions o;
  o.rel_tol = 1e-7;
  return o;
}

struct MFGFilterState {
  MFGParams params;  // n = 3: gyro bias in rad/s
  double t = 0.0;
  long step = 0;

  Mat3 attitude_estimate() const { return params.mode(); }
  Vec3 bias_estimate() const { return Vec3(params.mu); }
};

inline void mfg_filter_step(MFGFilterState& state, const Vec3& omega, double h,
                            const GyroNoiseModel& noise, Backend backend,
                            const AttitudeMeasurement* meas = nullptr,
                            const SigmaPointOptions& spo = {},
                            const fisher::QuadratureOptions& opts =
                                filter_quadrature_options()) {
  try {
    state.params = (backend == Backend::analytical)
                       ? propagate_analytical(state.params, omega, h, noise, opts)
                       : propagate_unscented(state.params, omega, h, noise, spo, opts);
    if (meas) state.params = update(state.params, {*meas}, {}, opts);
  } catch (const std::exception& e) {
    throw std::runtime_error("filter step " + std::to_string(state.step + 1) +
                             ": " + e.what());
  }
  state.t += h;
  ++state.step;
}

// ---- multiplicative EKF baseline -------------------------------------------------

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

struct MEKFState {
  Mat3 r_hat = Mat3::Identity();
  Vec3 x_hat = Vec3::Zero();
  Mat6 pcov = Mat6::Identity();  // attitude-error block first
  double t = 0.0;
  long step = 0;
};

// Right-multiplicative error convention R_true = R_hat exp(dtheta^); the
// gyro reading relates to the true rate by omega_true = Omega + x.
inline void mekf_step(MEKFState& state, const Vec3& omega, double h,
                      const GyroNoiseModel& noise, const Mat3* z = nullptr,
                      const Mat3* sigma_m = nullptr) {
  const Mat3 a = so3::exp_so3(h * (omega + state.x_hat));
  state.r_hat = state.r_hat * a;
  Mat6 f = Mat6::Identity();
  f.topLeftCorner<3, 3>() = a.transpose();
  f.topRightCorner<3, 3>() = h * Mat3::Identity();
  Mat6 qd = Mat6::Zero();
  qd.topLeftCorner<3, 3>() = h * noise.Gu;
  qd.bottomRightCorner<3, 3>() = h * noise.Gv;
  state.pcov = f * state.pcov * f.transpose() + qd;

  if (z) {
    if (!sigma_m)
      throw std::invalid_argument("mekf_step: measurement requires its covariance");
    // innovation through the principal logarithm (no wrapping correction)
    const Vec3 y = so3::log_so3(state.r_hat.transpose() * (*z));
    const Mat3 s = state.pcov.topLeftCorner<3, 3>() + *sigma_m;
    const Eigen::Matrix<double, 6, 3> k = state.pcov.leftCols<3>() * s.inverse();
    const Vec6 dx = k * y;
    state.r_hat = state.r_hat * so3::exp_so3(dx.head<3>());
    state.x_hat += dx.tail<3>();
    Mat6 ikh = Mat6::Identity();
    ikh.leftCols<3>() -= k;
    state.pcov = ikh * state.pcov * ikh.transpose() + k * (*sigma_m) * k.transpose();
  }
  state.pcov = 0.5 * (state.pcov + state.pcov.transpose());
  Eigen::LLT<Mat6> llt(state.pcov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("mekf_step: covariance lost positive definiteness");
  state.t += h;
  ++state.step;
}

// ---- measurement-noise conversion -------------------------------------------------

struct MeasurementNoiseSpec {
  enum class Kind { matrix_fisher, gaussian_rotvec } kind;
  // matrix Fisher concentration parameter F (S_m on the diagonal) or the
  // rotation-vector covariance Sigma_m, depending on kind
  Mat3 param;
};

// Fixed seed: conversions must be deterministic so every trial and every
// filter sees the same converted noise model.
inline constexpr std::uint64_t kConversionSeed = 20200913ull;

// Sample-based refit of the error model into the other convention.
inline MeasurementNoiseSpec convert_measurement_noise(const MeasurementNoiseSpec& in,
                                                      int n_samples = 100000,
                                                      std::uint64_t seed = kConversionSeed) {
  std::mt19937_64 rng(seed);
  MeasurementNoiseSpec out;
  if (in.kind == MeasurementNoiseSpec::Kind::matrix_fisher) {
    // fit log(dR)^vee to a zero-mean Gaussian
    const fisher::MatrixFisher mf{so3::proper_svd(in.param)};
    Mat3 cov = Mat3::Zero();
    for (int k = 0; k < n_samples; ++k) {
      const Vec3 th = so3::log_so3(fisher::sample(mf, rng));
      cov += th * th.transpose();
    }
    out.kind = MeasurementNoiseSpec::Kind::gaussian_rotvec;
    out.param = cov / n_samples;
  } else {
    // fit exp(dtheta^) to a matrix Fisher distribution by its MLE
    const MatX root = symmetric_sqrt(in.param);
    std::normal_distribution<double> nd(0.0, 1.0);
    // for concentrated inputs, subtract the second-order expansion of the
    // exponential as a control variate (its Gaussian expectation is exact);
    // this removes most of the Monte-Carlo error without changing the fit
    const bool use_cv = in.param.trace() < 0.5;
    const Mat3 cv_mean = Mat3::Identity() +
                         0.5 * (Mat3(in.param) - in.param.trace() * Mat3::Identity());
    Mat3 er = Mat3::Zero();
    for (int k = 0; k < n_samples; ++k) {
      const Vec3 th = root * Vec3(nd(rng), nd(rng), nd(rng));
      const Mat3 r = so3::exp_so3(th);
      if (use_cv) {
        const Mat3 th_hat = so3::hat(th);
        er += r - (Mat3::Identity() + th_hat + 0.5 * th_hat * th_hat);
      } else {
        er += r;
      }
    }
    er /= n_samples;
    if (use_cv) er += cv_mean;
    const so3::ProperSvd fit = fit_marginal(er);
    out.kind = MeasurementNoiseSpec::Kind::matrix_fisher;
    out.param = fit.reconstruct();
  }
  return out;
}

// ---- error metrics ----------------------------------------------------------------

struct ErrorMetrics {
  double attitude_deg;
  double bias_deg_per_s;
};

inline ErrorMetrics error_metrics(const Mat3& r_est, const Vec3& x_est,
                                  const Mat3& r_true, const Vec3& x_true) {
  const double rad2deg = 180.0 / M_PI;
  ErrorMetrics m;
  m.attitude_deg = so3::log_so3(r_est.transpose() * r_true).norm() * rad2deg;
  m.bias_deg_per_s = (x_est - x_true).norm() * rad2deg;
  return m;
}

// Square root of the first diagonal entry of the inertial-frame attitude
// covariance: U (tr(S) I - S)^{-1} U^T for the joint filter, R Sigma R^T for
// the EKF baseline.
inline double attitude_uncertainty_proxy(const MFGParams& p) {
  const Vec3& s = p.svd.s;
  const Vec3 pair(s[1] + s[2], s[0] + s[2], s[0] + s[1]);
  if (pair.minCoeff() <= 0.0) return M_PI;  // dispersed beyond the Gaussian regime
  const Mat3 cov = p.svd.u * pair.cwiseInverse().asDiagonal() * p.svd.u.transpose();
  return std::sqrt(std::max(0.0, cov(0, 0)));
}

inline double attitude_uncertainty_proxy(const MEKFState& s) {
  const Mat3 cov = s.r_hat * s.pcov.topLeftCorner<3, 3>() * s.r_hat.transpose();
  return std::sqrt(std::max(0.0, cov(0, 0)));
}

}  // namespace mfg
