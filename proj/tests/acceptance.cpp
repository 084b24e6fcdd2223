// End-to-end acceptance suite. Each test case covers one numbered criterion
// and prints a single PASS/FAIL line with the key measured quantities.
//
// Oracles: Monte-Carlo Haar integration for the normalizer and its
// derivatives, Monte-Carlo pushes of exact samples for propagation,
// importance sampling for the measurement update, and full closed-loop
// simulation batches for the filter comparisons.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mfg/sim.hpp>

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

using namespace mfg;

namespace {

using Clock = std::chrono::steady_clock;

struct Stopwatch {
  Clock::time_point t0 = Clock::now();
  double seconds() const {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  }
};

void report(int num, bool ok, const char* what, double secs) {
  std::printf("[criterion %2d] %s  %s  (%.1f s)\n", num, ok ? "PASS" : "FAIL",
              what, secs);
  std::fflush(stdout);
}

MatX random_matx(std::mt19937_64& rng, int r, int c, double s) {
  std::normal_distribution<double> nd(0.0, s);
  MatX m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

MFGParams make_params(std::mt19937_64& rng, const Vec3& s, double p_scale,
                      double sig_scale, double mu_scale = 0.3) {
  MFGParams p;
  p.svd.u = so3::uniform_rotation(rng);
  p.svd.v = so3::uniform_rotation(rng);
  p.svd.s = s;
  p.mu = random_matx(rng, 3, 1, mu_scale);
  p.P = random_matx(rng, 3, 3, p_scale);
  const MatX a = random_matx(rng, 3, 3, sig_scale);
  p.Sigma = a * a.transpose() + sig_scale * sig_scale * MatX::Identity(3, 3) +
            p.P * p.gamma() * p.P.transpose();
  p.validate();
  return p;
}

double max_logdiff(std::mt19937_64& rng, const MFGParams& a, const MFGParams& b,
                   int n, const fisher::QuadratureOptions& o) {
  double mx = 0.0;
  for (int k = 0; k < n; ++k) {
    const Mat3 r = so3::uniform_rotation(rng);
    const VecX x = a.mu + random_matx(rng, a.n(), 1, 1.0);
    mx = std::max(mx, std::abs(log_density(a, r, x, o) - log_density(b, r, x, o)));
  }
  return mx;
}

// parameter summary used to compare fitted distributions component-wise
std::vector<double> param_summary(const MFGParams& p) {
  std::vector<double> v;
  const Mat3 f = p.F();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v.push_back(f(i, j));
  for (int i = 0; i < 3; ++i) v.push_back(p.mu(i));
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) v.push_back(p.Sigma(i, j));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v.push_back(p.P(i, j));
  return v;
}

}  // namespace

// --------------------------------------------------------------------------
// 1. normalizing constant and its first two derivative tables against a
//    10^7-sample Haar Monte-Carlo oracle, plus quadrature self-convergence
TEST_CASE("criterion 1: normalizer and derivatives vs Haar Monte-Carlo") {
  Stopwatch sw;
  const std::vector<Vec3> cases = {Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(5, 2, 1),
                                   Vec3(10, 4, -2), Vec3(50, 50, 50)};
  const int nc = static_cast<int>(cases.size());
  const long n = 10000000;
  // accumulators per case: value, E[w Rii], E[w Rii Rjj] and squares
  std::vector<double> sw1(nc, 0), sw2(nc, 0);
  std::vector<Mat3> sd1(nc, Mat3::Zero()), sd2(nc, Mat3::Zero());
  std::vector<Mat3> sdd1(nc, Mat3::Zero()), sdd2(nc, Mat3::Zero());
  std::mt19937_64 rng(101);
  for (long k = 0; k < n; ++k) {
    const Mat3 r = so3::uniform_rotation(rng);
    for (int c = 0; c < nc; ++c) {
      const Vec3& s = cases[c];
      const double w =
          std::exp(s[0] * r(0, 0) + s[1] * r(1, 1) + s[2] * r(2, 2) - s.sum());
      sw1[c] += w;
      sw2[c] += w * w;
      for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
          if (j == i) {
            const double t = w * r(i, i);
            sd1[c](i, i) += t;
            sd2[c](i, i) += t * t;
          }
          const double t2 = w * r(i, i) * r(j, j);
          sdd1[c](i, j) += t2;
          sdd2[c](i, j) += t2 * t2;
        }
    }
  }
  bool ok = true;
  double worst = 0.0;
  fisher::QuadratureOptions tight;
  tight.rel_tol = 1e-9;
  auto three_se = [&](double mc_sum, double mc_sum2, double quad) {
    const double mean = mc_sum / n;
    const double var = std::max(0.0, mc_sum2 / n - mean * mean);
    const double se = std::sqrt(var / n);
    // a zero-variance estimator (uniform case) must agree to round-off
    const double z = std::abs(mean - quad) /
                     std::max(se, 1e-12 * std::max(1.0, std::abs(mean)));
    worst = std::max(worst, z);
    if (z > 3.0) ok = false;
  };
  for (int c = 0; c < nc; ++c) {
    const Vec3& s = cases[c];
    const fisher::NormalizerBundle nb = fisher::normalizer(s, tight);
    const double cs = std::exp(nb.log_c - s.sum());  // shifted like the weights
    three_se(sw1[c], sw2[c], cs);
    for (int i = 0; i < 3; ++i) three_se(sd1[c](i, i), sd2[c](i, i), nb.d[i] * cs);
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j)
        three_se(sdd1[c](i, j), sdd2[c](i, j), nb.d2r(i, j) * cs);
  }
  // self-convergence of the quadrature between tolerance levels
  double conv = 0.0;
  for (const Vec3& s : cases) {
    fisher::QuadratureOptions o8, o10;
    o8.rel_tol = 1e-8;
    o10.rel_tol = 1e-10;
    const fisher::NormalizerBundle a = fisher::normalizer(s, o8);
    const fisher::NormalizerBundle b = fisher::normalizer(s, o10);
    conv = std::max(conv, std::abs(std::expm1(a.log_c - b.log_c)));
    conv = std::max(conv, (a.d - b.d).cwiseAbs().maxCoeff());
  }
  if (conv > 1e-8) ok = false;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "normalizer vs 1e7-sample Haar MC: worst |z| = %.2f (limit 3), "
                "self-convergence %.1e (limit 1e-8)",
                worst, conv);
  report(1, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 120.0);
}

// --------------------------------------------------------------------------
// 2. maximum-likelihood fit of the deterministic sigma-point set reproduces
//    the generating distribution's density
TEST_CASE("criterion 2: sigma-point MLE idempotence") {
  Stopwatch sw;
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  fisher::QuadratureOptions tight;
  tight.rel_tol = 1e-10;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double s1 = 1.0 + 19.0 * u01(rng);
    const double s2 = s1 * (0.3 + 0.7 * u01(rng));
    const double s3 = s2 * (0.2 + 0.8 * u01(rng));
    const MFGParams p = make_params(rng, Vec3(s1, s2, s3), 0.02, 0.3);
    const auto pts = sigma_points(p, {}, tight);
    std::vector<Mat3> rs;
    std::vector<VecX> xs;
    std::vector<double> ws;
    for (const auto& sp : pts) {
      rs.push_back(sp.r);
      xs.push_back(sp.x);
      ws.push_back(sp.w);
    }
    const MFGParams fit = mle(rs, xs, ws, tight, &p.svd.s);
    worst = std::max(worst, max_logdiff(rng, p, fit, 1000, tight));
  }
  const bool ok = worst < 1e-8;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "100 random sets, 1000 probe points each: worst relative "
                "density error %.2e (limit 1e-8)",
                worst);
  report(2, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 60.0);
}

// --------------------------------------------------------------------------
// 3. every non-uniqueness transformation preserves the density
TEST_CASE("criterion 3: equivalence transformations preserve the density") {
  Stopwatch sw;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> ang(-M_PI, M_PI);
  struct Case {
    const char* name;
    MFGParams a, b;
  };
  std::vector<Case> cs;
  {
    MFGParams p = make_params(rng, Vec3::Zero(), 0.02, 0.3);
    cs.push_back({"all-zero", p, reparameterize(p, so3::uniform_rotation(rng))});
  }
  {
    MFGParams p = make_params(rng, Vec3(4, 4, 4), 0.02, 0.3);
    cs.push_back({"isotropic", p, reparameterize(p, so3::uniform_rotation(rng))});
  }
  {
    MFGParams p = make_params(rng, Vec3(6, 2.5, 2.5), 0.02, 0.3);
    cs.push_back({"lower-pair", p,
                  reparameterize(p, so3::exp_so3(ang(rng) * Vec3::Unit(0)))});
  }
  {
    MFGParams p = make_params(rng, Vec3(5, 5, 1.5), 0.02, 0.3);
    cs.push_back({"upper-pair", p,
                  reparameterize(p, so3::exp_so3(ang(rng) * Vec3::Unit(2)))});
  }
  {
    MFGParams p = make_params(rng, Vec3(6, 3, 1), 0.02, 0.3);
    cs.push_back({"distinct", p, reparameterize(p, Mat3::Identity())});
  }
  {
    MFGParams p = make_params(rng, Vec3(4, 4, -4), 0.015, 0.3);
    cs.push_back(
        {"isotropic-negative", p, reparameterize(p, so3::uniform_rotation(rng))});
  }
  {
    MFGParams p = make_params(rng, Vec3(6, 2.5, -2.5), 0.015, 0.3);
    cs.push_back({"opposite-pair", p,
                  reparameterize(p, so3::exp_so3(ang(rng) * Vec3::Unit(0)))});
  }
  {
    MFGParams p = make_params(rng, Vec3(5, 0, 0), 0.02, 0.3);
    cs.push_back({"single-axis", p, reparameterize(p, ang(rng), ang(rng))});
  }
  for (int i = 0; i < 3; ++i) {
    MFGParams p = make_params(rng, Vec3(7, 3, 1.5), 0.02, 0.3);
    cs.push_back({"sign-flip", p, reparameterize_sign(p, i)});
  }
  {
    MFGParams p = make_params(rng, Vec3(7, 3, -2), 0.015, 0.3);
    cs.push_back({"convention", p, convert_convention(p)});
  }
  fisher::QuadratureOptions tight;
  tight.rel_tol = 1e-10;
  bool ok = true;
  double worst = 0.0;
  for (auto& c : cs) {
    const double d = max_logdiff(rng, c.a, c.b, 10000, tight);
    worst = std::max(worst, d);
    if (d > 1e-10) ok = false;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "%d transformation cases, 1e4 points each: worst log-density "
                "deviation %.2e (limit 1e-10)",
                static_cast<int>(cs.size()), worst);
  report(3, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 60.0);
}

// --------------------------------------------------------------------------
// 4. in the concentrated regime the joint distribution of the linear part and
//    the attitude deviation matches the closed-form Gaussian approximation
TEST_CASE("criterion 4: concentrated-regime Gaussian approximation") {
  Stopwatch sw;
  std::mt19937_64 rng(404);
  const MFGParams p = make_params(rng, Vec3(200, 200, 200), 0.01, 0.6);
  const GaussianApprox g = gaussian_approx(p);
  const int n = 1000000;
  VecX mean = VecX::Zero(6);
  MatX m2 = MatX::Zero(6, 6);
  for (int k = 0; k < n; ++k) {
    auto [r, x] = sample(p, rng);
    const Vec3 eta = so3::log_so3(p.svd.u.transpose() * r * p.svd.v);
    VecX z(6);
    z.head(3) = x;
    z.tail(3) = eta;
    mean += z;
    m2 += z * z.transpose();
  }
  mean /= n;
  const MatX cov = m2 / n - mean * mean.transpose();
  // per-entry 5% check, scaled by the entry's natural size sqrt(Cii*Cjj) so
  // that structurally tiny cross-covariances are judged on the right scale
  double worst = 0.0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      const double scale = std::sqrt(g.cov(i, i) * g.cov(j, j));
      worst = std::max(worst, std::abs(cov(i, j) - g.cov(i, j)) / scale);
    }
  const bool ok = worst < 0.05;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "1e6 samples at concentration 200: worst scaled covariance "
                "entry error %.4f (limit 0.05)",
                worst);
  report(4, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 60.0);
}

// --------------------------------------------------------------------------
// 5. the analytical one-step propagation converges to the Monte-Carlo pushed
//    distribution at second order in the step size; the unscented backend
//    agrees with the analytical one at the nominal step
TEST_CASE("criterion 5: propagation step order and backend agreement") {
  Stopwatch sw;
  MFGParams p;
  {
    std::mt19937_64 rng(777);
    p.svd.u = so3::uniform_rotation(rng);
    p.svd.v = so3::uniform_rotation(rng);
    p.svd.s = Vec3(20, 15, 10);
    p.mu = 0.3 * MatX::Random(3, 1);
    p.P = 0.01 * MatX::Random(3, 3);
    const MatX a = 0.3 * MatX::Random(3, 3);
    p.Sigma = a * a.transpose() + 0.01 * MatX::Identity(3, 3) +
              p.P * p.gamma() * p.P.transpose();
    p.validate();
  }
  // strongly anisotropic gyro noise and a fast rotation maximize the
  // noncommutativity terms the one-step propagation truncates at O(h^2)
  GyroNoiseModel noise;
  noise.Gu = Vec3(4.0, 1.0, 0.05).asDiagonal();
  noise.Gv = 1e-2 * Mat3::Identity();
  const Vec3 omega(40, -24, 16);
  const int n = 1000000;
  const int sub = 32;  // substeps of the Monte-Carlo reference push
  // mean attitude of a fitted distribution, by quadrature; the sample MLE is
  // moment-matched, so this equals the pushed cloud's empirical mean rotation
  // without the noise amplification of comparing concentration parameters
  auto mean_attitude = [](const MFGParams& q) {
    const fisher::QMomentTable t = fisher::q_moments(q.svd.s, 1);
    Mat3 eq;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) eq(i, j) = t.first(i, j);
    return Mat3(q.svd.u * eq * q.svd.v.transpose());
  };
  // identical engine seeding keeps the prior samples and noise normals common
  // across step sizes, so the Monte-Carlo floor is shared rather than stacked
  auto mc_fit = [&](double h) {
    std::mt19937_64 rng(4242);
    std::vector<Mat3> rs(n);
    std::vector<VecX> xs(n);
    for (int k = 0; k < n; ++k) {
      auto [r, x] = sample(p, rng);
      Mat3 rr = r;
      Vec3 xx = Vec3(x);
      for (int j = 0; j < sub; ++j)
        std::tie(rr, xx) = discrete_step(rr, xx, omega, h / sub, noise, rng);
      rs[k] = rr;
      xs[k] = VecX(xx);
    }
    return mle(rs, xs);
  };
  const double hs[3] = {0.02, 0.01, 0.005};
  double d[3];
  for (int i = 0; i < 3; ++i) {
    const MFGParams mc = mc_fit(hs[i]);
    const MFGParams an = propagate_analytical(p, omega, hs[i], noise);
    d[i] = (mean_attitude(mc) - mean_attitude(an)).norm();
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < 3; ++i) {
    const double x = std::log(hs[i]), y = std::log(d[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (3 * sxy - sx * sy) / (3 * sxx - sx * sx);

  // backend agreement at the nominal filter step
  const double h = 1.0 / 150.0;
  const MFGParams an = propagate_analytical(p, omega, h, noise);
  const MFGParams un = propagate_unscented(p, omega, h, noise);
  const double gap = std::max(
      {(an.svd.s - un.svd.s).norm() / an.svd.s.norm(),
       (an.Sigma - un.Sigma).norm() / an.Sigma.norm(),
       so3::log_so3(an.mode().transpose() * un.mode()).norm(),
       (an.mu - un.mu).norm(), (an.P - un.P).norm()});
  const bool ok = slope >= 1.8 && gap < 0.05;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "1e6-sample push: d(h) = {%.2e, %.2e, %.2e}, empirical order "
                "%.2f (need >= 1.8); backend gap %.2e (limit 0.05)",
                d[0], d[1], d[2], slope, gap);
  report(5, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 300.0);
}

// --------------------------------------------------------------------------
// 6. the measurement update matches an importance-sampling posterior oracle
//    within Monte-Carlo error; a flat prior gives the exact conjugate result
TEST_CASE("criterion 6: measurement update vs sampling oracle") {
  Stopwatch sw;
  std::mt19937_64 rng(2026);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int n = 1000000, nb = 20, bsz = n / nb;
  bool ok = true;
  double worst_z = 0.0;
  for (int combo = 0; combo < 20; ++combo) {
    const double s1 = 4.0 + 11.0 * u01(rng);
    const MFGParams p = make_params(
        rng, Vec3(s1, s1 * (0.4 + 0.5 * u01(rng)), s1 * (0.2 + 0.5 * u01(rng))),
        0.02, 0.2);
    AttitudeMeasurement m;
    const double sm = 2.0 + 4.0 * u01(rng);
    m.Fz = Vec3(sm, (0.5 + 0.4 * u01(rng)) * sm, (0.2 + 0.4 * u01(rng)) * sm)
               .asDiagonal();
    const Mat3 r_near = p.mode() * so3::exp_so3(0.1 * Vec3::Random());
    m.Z = sample_attitude_measurement(r_near, m.Fz, rng);

    const MFGParams exact = update(p, {m}, {});
    const Mat3 df = m.Z * m.Fz.transpose();

    std::vector<Mat3> rs(n);
    std::vector<VecX> xs(n);
    std::vector<double> ws(n);
    double wmax = -1e300;
    for (int k = 0; k < n; ++k) {
      auto [r, x] = sample(p, rng);
      rs[k] = r;
      xs[k] = x;
      ws[k] = (df.transpose() * r).trace();
      wmax = std::max(wmax, ws[k]);
    }
    for (int k = 0; k < n; ++k) ws[k] = std::exp(ws[k] - wmax);
    const MFGParams full = mle(rs, xs, ws, {}, &exact.svd.s);
    const std::vector<double> se = param_summary(exact);
    const std::vector<double> sf = param_summary(full);
    // the batch fits only feed the standard-error estimate, so a looser
    // quadrature tolerance and a warm start are plenty
    fisher::QuadratureOptions fast;
    fast.rel_tol = 1e-7;
    std::vector<std::vector<double>> bsum;
    for (int b = 0; b < nb; ++b) {
      std::vector<Mat3> br(rs.begin() + b * bsz, rs.begin() + (b + 1) * bsz);
      std::vector<VecX> bx(xs.begin() + b * bsz, xs.begin() + (b + 1) * bsz);
      std::vector<double> bw(ws.begin() + b * bsz, ws.begin() + (b + 1) * bsz);
      bsum.push_back(param_summary(mle(br, bx, bw, fast, &full.svd.s)));
    }
    // parameter-block z-scores: block distance against the Monte-Carlo
    // standard error of the block, estimated from the batch spread
    const int block_lo[4] = {0, 9, 12, 18};
    const int block_hi[4] = {9, 12, 18, 27};
    for (int g = 0; g < 4; ++g) {
      double dist2 = 0.0, var = 0.0;
      for (int i = block_lo[g]; i < block_hi[g]; ++i) {
        dist2 += (se[i] - sf[i]) * (se[i] - sf[i]);
        double mean = 0.0;
        for (int b = 0; b < nb; ++b) mean += bsum[b][i];
        mean /= nb;
        double v = 0.0;
        for (int b = 0; b < nb; ++b) v += (bsum[b][i] - mean) * (bsum[b][i] - mean);
        var += v / (nb - 1) / nb;
      }
      const double z = std::sqrt(dist2 / std::max(var, 1e-28));
      worst_z = std::max(worst_z, z);
      if (z > 3.0) ok = false;
    }
  }
  // exact conjugacy under a flat attitude prior
  MFGParams flat = make_params(rng, Vec3::Zero(), 0.0, 0.3);
  flat.P.setZero();
  flat.Sigma = MatX::Identity(3, 3) * 0.2;
  AttitudeMeasurement m;
  m.Fz = Vec3(9, 6, 4).asDiagonal();
  m.Z = so3::uniform_rotation(rng);
  const MFGParams post = update(flat, {m}, {});
  const double conj = (post.F() - m.Z * m.Fz.transpose()).norm() +
                      (post.mu - flat.mu).norm() + (post.Sigma - flat.Sigma).norm();
  if (conj > 1e-9) ok = false;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "20 prior/measurement combos, 1e6-sample oracle: worst block "
                "z = %.2f (limit 3); flat-prior conjugacy residual %.1e",
                worst_z, conj);
  report(6, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 180.0);
}

// --------------------------------------------------------------------------
// 7. nominal tracking comparison: with moderate isotropic measurement noise
//    all three filters perform equivalently
TEST_CASE("criterion 7: nominal tracking comparison") {
  Stopwatch sw;
  sim::ScenarioConfig cfg;  // defaults: concentration 12 I, small init error
  cfg.trials = 10;
  cfg.seed = 1;
  const sim::BatchSummary bs = sim::run_batch(cfg);
  const double an = bs.mfg_analytical.att_mean, un = bs.mfg_unscented.att_mean,
               ek = bs.mekf.att_mean;
  bool ok = true;
  for (double v : {an, un, ek})
    if (!(v >= 6.8 && v <= 8.0)) ok = false;
  for (double v : {bs.mfg_analytical.bias_mean, bs.mfg_unscented.bias_mean,
                   bs.mekf.bias_mean})
    if (!(v >= 2.5 && v <= 5.5)) ok = false;
  if (std::abs(an - ek) > 0.3 || std::abs(un - ek) > 0.3) ok = false;
  if (bs.mfg_analytical.n_failed + bs.mfg_unscented.n_failed + bs.mekf.n_failed >
      0)
    ok = false;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "10 trials: attitude %.2f/%.2f/%.2f deg (band [6.8, 8.0]), "
                "bias %.2f/%.2f/%.2f deg/s (band [2.5, 5.5])",
                an, un, ek, bs.mfg_analytical.bias_mean,
                bs.mfg_unscented.bias_mean, bs.mekf.bias_mean);
  report(7, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 600.0);
}

// --------------------------------------------------------------------------
// 8. large initial error with falsely confident initial uncertainty: the
//    joint filter estimates the bias significantly better
TEST_CASE("criterion 8: large initial error comparison") {
  Stopwatch sw;
  sim::ScenarioConfig cfg;
  cfg.init_kind = sim::ScenarioConfig::InitKind::large_error;
  cfg.trials = 20;
  cfg.seed = 1;
  const sim::BatchSummary bs = sim::run_batch(cfg);
  const bool bias_better =
      bs.mfg_analytical.bias_mean < bs.mekf.bias_mean && bs.p_bias_analytical < 0.05;
  const bool att_not_worse = bs.mfg_analytical.att_mean <= bs.mekf.att_mean;
  const bool ok = bias_better && att_not_worse &&
                  bs.mfg_analytical.n_failed + bs.mekf.n_failed == 0;
  char buf[220];
  std::snprintf(buf, sizeof buf,
                "20 trials: bias %.2f vs %.2f deg/s (p = %.4f, need < 0.05), "
                "attitude %.2f vs %.2f deg (unscented: %.2f deg/s, %.2f deg)",
                bs.mfg_analytical.bias_mean, bs.mekf.bias_mean,
                bs.p_bias_analytical, bs.mfg_analytical.att_mean,
                bs.mekf.att_mean, bs.mfg_unscented.bias_mean,
                bs.mfg_unscented.att_mean);
  report(8, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 1200.0);
}

// --------------------------------------------------------------------------
// 9. single-axis measurement information: the joint filter exploits the
//    non-Gaussian measurement model and clearly outperforms the EKF
TEST_CASE("criterion 9: degenerate single-axis measurement comparison") {
  Stopwatch sw;
  sim::ScenarioConfig cfg;
  cfg.meas.kind = MeasurementNoiseSpec::Kind::matrix_fisher;
  cfg.meas.param = Vec3(100, 0, 0).asDiagonal();
  cfg.trials = 10;
  cfg.seed = 1;
  const sim::BatchSummary bs = sim::run_batch(cfg);
  const double gap = bs.mekf.att_mean - bs.mfg_analytical.att_mean;
  const bool ok = gap >= 1.5 &&
                  bs.mfg_analytical.n_failed + bs.mekf.n_failed == 0;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "10 trials: attitude %.2f (analytical) / %.2f (unscented) vs "
                "%.2f (EKF) deg, gap %.2f (need >= 1.5)",
                bs.mfg_analytical.att_mean, bs.mfg_unscented.att_mean,
                bs.mekf.att_mean, gap);
  report(9, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 600.0);
}

// --------------------------------------------------------------------------
// 10. the scalar factor relating concentration to information is positive and
//     nearly constant over the working range
TEST_CASE("criterion 10: information ratio factor is positive and flat") {
  Stopwatch sw;
  bool ok = true;
  double rel = 0.0, lo = 1e300, hi = -1e300;
  std::vector<double> vals;
  for (double s = 6.0; s <= 15.0 + 1e-12; s += 0.25) {
    const double r = information_ratio_factor(s);
    if (!(r > 0.0)) ok = false;
    vals.push_back(r);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  for (size_t i = 0; i + 4 < vals.size(); ++i) {
    const double v = std::abs(vals[i + 4] - vals[i]) / vals[i];
    rel = std::max(rel, v);
  }
  if (rel >= 0.02) ok = false;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "range [%.4f, %.4f] on s in [6, 15]; worst variation per "
                "unit s = %.3f%% (limit 2%%)",
                lo, hi, 100.0 * rel);
  report(10, ok, buf, sw.seconds());
  CHECK(ok);
  CHECK(sw.seconds() < 60.0);
}
