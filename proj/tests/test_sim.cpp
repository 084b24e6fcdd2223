#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mfg/sim.hpp>

#include <random>
#include <sstream>

using namespace mfg;
using namespace mfg::sim;

namespace {

ScenarioConfig short_config() {
  ScenarioConfig cfg;
  cfg.duration = 0.2;
  cfg.trials = 1;
  cfg.seed = 42;
  return cfg;
}

}  // namespace

TEST_CASE("config parsing applies unit conversions and validates") {
  std::istringstream in(
      "# comment\n"
      "duration = 60\n"
      "gyro_rate = 150\n"
      "meas_rate = 30\n"
      "frequency = 0.35\n"
      "sigma_u = 10    # deg/sqrt(s)\n"
      "sigma_v = 500   # deg/hr/sqrt(s)\n"
      "meas_kind = gaussian\n"
      "meas_cov = 0.04\n"
      "init_kind = large\n"
      "init_s0 = 200\n"
      "trials = 20\n"
      "seed = 7\n");
  const ScenarioConfig cfg = parse_config(in);
  CHECK(cfg.sigma_u == doctest::Approx(10.0 * M_PI / 180.0).epsilon(1e-12));
  CHECK(cfg.sigma_v ==
        doctest::Approx(500.0 / 3600.0 * M_PI / 180.0).epsilon(1e-12));
  const GyroNoiseModel n = cfg.gyro_noise();
  CHECK(n.Gu(0, 0) == doctest::Approx(0.030461742).epsilon(1e-6));
  CHECK(n.Gv(2, 2) == doctest::Approx(5.87e-6).epsilon(0.01));
  CHECK(cfg.meas.kind == MeasurementNoiseSpec::Kind::gaussian_rotvec);
  CHECK(cfg.meas.param(1, 1) == doctest::Approx(0.04));
  CHECK(cfg.init_kind == ScenarioConfig::InitKind::large_error);
  CHECK(cfg.steps() == 9000);
  CHECK(cfg.meas_every() == 5);

  auto parse_str = [](const std::string& s) {
    std::istringstream is(s);
    return parse_config(is);
  };
  CHECK_THROWS_AS(parse_str("bogus_key = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_str("gyro_rate = 100\nmeas_rate = 30\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_str("duration = fast\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_str("meas_kind = gaussian\nmeas_s = 12\n"),
                  std::invalid_argument);
}

TEST_CASE("truth generation: trivial and reference trajectories") {
  std::mt19937_64 rng(1);

  ScenarioConfig cfg;
  cfg.duration = 1.0;
  cfg.euler_amplitudes = Vec3::Zero();
  cfg.sigma_u = 0.0;
  cfg.sigma_v = 0.0;
  const TruthData still = generate_truth(cfg, rng);
  for (const Mat3& r : still.r) CHECK((r - Mat3::Identity()).norm() < 1e-14);
  for (const Vec3& w : still.omega) CHECK(w.norm() < 1e-12);

  // the standard trajectory has a known average angular speed of 6.17 rad/s
  ScenarioConfig full;
  full.sigma_u = 0.0;
  full.sigma_v = 0.0;
  const TruthData td = generate_truth(full, rng);
  double avg = 0.0;
  for (const Vec3& w : td.omega) avg += w.norm();
  avg /= td.omega.size();
  CHECK(avg == doctest::Approx(6.17).epsilon(0.02));
  // measurement epochs: every 5th gyro step
  CHECK(static_cast<int>(td.z.size()) == full.steps() / 5);
}

TEST_CASE("bias random walk has the configured diffusion") {
  ScenarioConfig cfg;
  cfg.duration = 1.0;
  cfg.euler_amplitudes = Vec3::Zero();
  cfg.sigma_u = 0.0;
  std::mt19937_64 rng(99);
  const int paths = 1000;
  Vec3 var = Vec3::Zero();
  for (int p = 0; p < paths; ++p) {
    const TruthData td = generate_truth(cfg, rng);
    var += td.bias.back().cwiseAbs2();
  }
  var /= paths;
  const double expected = cfg.sigma_v * cfg.sigma_v * cfg.duration;
  const double band = 3.0 * expected * std::sqrt(2.0 / (paths - 1));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(var[i] - expected) < band);
}

TEST_CASE("trials replay deterministically and share sensor streams") {
  const ScenarioConfig cfg = short_config();
  const TrialResult a = run_trial(cfg, 3);
  const TrialResult b = run_trial(cfg, 3);
  REQUIRE(a.t.size() == b.t.size());
  for (size_t k = 0; k < a.t.size(); ++k) {
    CHECK(a.mfg_analytical.att_err_deg[k] == b.mfg_analytical.att_err_deg[k]);
    CHECK(a.mfg_unscented.bias_err_deg_s[k] == b.mfg_unscented.bias_err_deg_s[k]);
    CHECK(a.mekf.proxy_att[k] == b.mekf.proxy_att[k]);
  }
  // all three filters consumed identical gyro and measurement streams
  CHECK(a.mfg_analytical.stream_hash == a.mekf.stream_hash);
  CHECK(a.mfg_unscented.stream_hash == a.mekf.stream_hash);
  // different trial index gives a different stream
  const TrialResult c = run_trial(cfg, 4);
  CHECK(c.mekf.stream_hash != a.mekf.stream_hash);

  // CSV output is byte-identical across replays
  std::ostringstream oa, ob;
  write_trial_csv(oa, a);
  write_trial_csv(ob, b);
  CHECK(oa.str() == ob.str());
  CHECK(oa.str().substr(0, 2) == "t,");
}

TEST_CASE("paired t-test reference values") {
  const std::vector<double> a{12.1, 11.4, 13.2, 10.9, 12.8,
                              11.7, 12.3, 13.0, 11.2, 12.6};
  const std::vector<double> b{11.8, 11.5, 12.6, 10.2, 12.9,
                              11.1, 11.9, 12.4, 11.3, 12.0};
  CHECK(paired_t_test(a, b) == doctest::Approx(0.0085836792).epsilon(1e-4));
  CHECK(paired_t_test(a, a) == doctest::Approx(1.0));
  const std::vector<double> c{1, 1, 1}, d{2, 2, 2};
  CHECK(paired_t_test(c, d) == doctest::Approx(0.0));
  CHECK_THROWS_AS(paired_t_test({1.0}, {2.0}), std::invalid_argument);
}

TEST_CASE("paired t-test p-values are uniform under the null") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd(0.0, 1.0);
  const int reps = 10000, n = 60;
  std::vector<double> ps(reps);
  std::vector<double> a(n), b(n, 0.0);
  for (int r = 0; r < reps; ++r) {
    for (int i = 0; i < n; ++i) a[i] = nd(rng);
    ps[r] = paired_t_test(a, b);
  }
  std::sort(ps.begin(), ps.end());
  double ks = 0.0;
  for (int r = 0; r < reps; ++r) {
    ks = std::max(ks, std::abs(ps[r] - (r + 1.0) / reps));
    ks = std::max(ks, std::abs(ps[r] - static_cast<double>(r) / reps));
  }
  // Kolmogorov-Smirnov critical value at alpha = 0.01
  CHECK(ks < 1.6276 / std::sqrt(static_cast<double>(reps)));
}

TEST_CASE("large-error recovery: fast with the joint filter, slow with the EKF") {
  ScenarioConfig cfg;
  cfg.duration = 2.0;
  cfg.init_kind = ScenarioConfig::InitKind::large_error;
  cfg.seed = 3;
  const TrialResult tr = run_trial(cfg, 0);
  REQUIRE(tr.mfg_analytical.ok);
  REQUIRE(tr.mekf.ok);

  auto first_below = [&](const FilterTrace& f, double deg) {
    for (size_t k = 0; k < f.att_err_deg.size(); ++k)
      if (f.att_err_deg[k] < deg) return tr.t[k];
    return 1e9;
  };
  // the joint filter recovers almost in a single measurement step once its
  // uncertainty exceeds the measurement noise; the EKF descends gradually
  const double t_mfg = first_below(tr.mfg_analytical, 20.0);
  const double t_ekf = first_below(tr.mekf, 20.0);
  CHECK(t_mfg < 1.0);
  CHECK(first_below(tr.mfg_unscented, 20.0) < 1.0);
  CHECK(t_ekf > 1.5 * t_mfg);
  // single-step collapse: from above 120 degrees to below 30 in one epoch
  bool collapse = false;
  for (size_t k = 0; k + 5 < tr.mfg_analytical.att_err_deg.size(); ++k)
    if (tr.mfg_analytical.att_err_deg[k] > 120.0 &&
        tr.mfg_analytical.att_err_deg[k + 5] < 30.0)
      collapse = true;
  CHECK(collapse);
  // when the joint filter has recovered, the EKF error is still large
  const size_t k_mfg = static_cast<size_t>(std::lround(t_mfg / tr.t[0])) - 1;
  CHECK(tr.mekf.att_err_deg[k_mfg] > 45.0);

  // the falsely-confident attitude uncertainty must grow well beyond its
  // initial value before the decisive update, then collapse
  const auto& proxy = tr.mfg_analytical.proxy_att;
  const double initial = proxy.front();
  const double peak = *std::max_element(proxy.begin(), proxy.end());
  CHECK(peak > 3.0 * initial);
  CHECK(proxy.back() < 0.3 * peak);
}

TEST_CASE("batch summary aggregates per-trial time averages") {
  ScenarioConfig cfg = short_config();
  cfg.duration = 0.5;
  cfg.trials = 3;
  int seen = 0;
  const BatchSummary bs =
      run_batch(cfg, [&](int i, const TrialResult& tr) {
        CHECK(i == seen++);
        CHECK(tr.t.size() == static_cast<size_t>(cfg.steps()));
      });
  CHECK(seen == 3);
  CHECK(bs.mekf.n_trials == 3);
  CHECK(bs.mfg_analytical.att_sd >= 0.0);
  CHECK(bs.p_bias_analytical >= 0.0);
  CHECK(bs.p_bias_analytical <= 1.0);
  // the reported mean matches the per-trial averages it was formed from
  double m = 0.0;
  for (double v : bs.mekf.att_avgs) m += v;
  CHECK(bs.mekf.att_mean == doctest::Approx(m / 3).epsilon(1e-14));

  std::ostringstream os;
  write_batch_csv(os, bs);
  CHECK(os.str().find("mfg_unscented") != std::string::npos);
  std::ostringstream ot;
  write_trial_averages_csv(ot, bs);
  CHECK(ot.str().find("trial") == 0);
}
