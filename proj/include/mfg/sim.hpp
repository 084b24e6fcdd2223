#pragma once

// Monte-Carlo benchmarking harness: sinusoidal truth-trajectory generation,
// gyroscope / attitude-sensor simulation, batch runner with per-trial RNG
// substreams, paired t-test statistics, and CSV output.

#include <mfg/filters.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mfg::sim {

// ---- scenario configuration -------------------------------------------------------
//
// Parsed from flat "key = value" text (comments start with '#').  Keys and
// units as written in the file:
//   duration    [s]               total simulated time
//   gyro_rate   [Hz]              gyroscope sampling rate (integer multiple of meas_rate)
//   meas_rate   [Hz]              attitude-measurement rate
//   frequency   [Hz]              sinusoid frequency of the Euler angles
//   amplitudes  [rad rad rad]     Euler-angle (body-fixed 3-2-1) amplitudes
//   sigma_u     [deg/sqrt(s)]     gyro white-noise strength (attitude diffusion)
//   sigma_v     [deg/hr/sqrt(s)]  bias random-walk strength
//   meas_kind   matrix_fisher | gaussian
//   meas_s      [- - -]           diagonal of the concentration matrix (matrix_fisher)
//   meas_cov    [rad^2 x3]        diagonal of the rotation-vector covariance (gaussian)
//   init_kind   small | large     initial-error scenario
//   init_s0     [-]               attitude prior concentration, large-init only
//   init_sigma0 [rad/s]           bias prior standard deviation
//   init_bias   [rad/s x3]        initial bias estimate, large-init only
//   trials      [-]               Monte-Carlo trial count
//   seed        [-]               root RNG seed
//   threads     [-]               worker threads for the batch runner
// All angular quantities are converted to SI at parse time.
struct ScenarioConfig {
  double duration = 60.0;
  double gyro_rate = 150.0;
  double meas_rate = 30.0;
  double frequency = 0.35;
  Vec3 euler_amplitudes = Vec3(M_PI, M_PI / 2.0, M_PI);  // rad
  double sigma_u = 10.0 * M_PI / 180.0;                  // rad/sqrt(s)
  double sigma_v = 500.0 / 3600.0 * M_PI / 180.0;        // rad/s/sqrt(s)
  MeasurementNoiseSpec meas{MeasurementNoiseSpec::Kind::matrix_fisher,
                            12.0 * Mat3::Identity()};
  enum class InitKind { small_error, large_error } init_kind = InitKind::small_error;
  double init_s0 = 200.0;     // attitude prior concentration for the large-init case
  double init_sigma0 = 0.1;   // bias prior stddev [rad/s]
  Vec3 init_bias = Vec3(0.2, 0.2, 0.2);  // initial bias estimate for the large-init case
  int trials = 10;
  std::uint64_t seed = 1;
  int threads = 1;

  GyroNoiseModel gyro_noise() const {
    GyroNoiseModel n;
    n.Gu = sigma_u * sigma_u * Mat3::Identity();
    n.Gv = sigma_v * sigma_v * Mat3::Identity();
    return n;
  }
  int steps() const { return static_cast<int>(std::lround(duration * gyro_rate)); }
  int meas_every() const { return static_cast<int>(std::lround(gyro_rate / meas_rate)); }

  void validate() const {
    if (!(duration > 0.0)) throw std::invalid_argument("config: duration must be > 0");
    if (!(gyro_rate > 0.0) || !(meas_rate > 0.0))
      throw std::invalid_argument("config: rates must be > 0");
    const double ratio = gyro_rate / meas_rate;
    if (std::abs(ratio - std::lround(ratio)) > 1e-9 || std::lround(ratio) < 1)
      throw std::invalid_argument("config: gyro_rate must be a multiple of meas_rate");
    if (!(sigma_u >= 0.0) || !(sigma_v >= 0.0))
      throw std::invalid_argument("config: noise strengths must be >= 0");
    if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    if (!(init_s0 > 0.0) || !(init_sigma0 > 0.0))
      throw std::invalid_argument("config: prior scales must be > 0");
  }
};

namespace detail {

inline std::vector<double> parse_numbers(const std::string& s, const std::string& key) {
  std::istringstream iss(s);
  std::vector<double> out;
  std::string tok;
  while (iss >> tok) {
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size())
      throw std::invalid_argument("config: non-numeric value for key '" + key + "'");
    out.push_back(v);
  }
  return out;
}

inline Vec3 parse_vec3(const std::string& s, const std::string& key) {
  const auto v = parse_numbers(s, key);
  if (v.size() == 1) return Vec3::Constant(v[0]);
  if (v.size() != 3)
    throw std::invalid_argument("config: key '" + key + "' needs 1 or 3 numbers");
  return Vec3(v[0], v[1], v[2]);
}

inline double parse_scalar(const std::string& s, const std::string& key) {
  const auto v = parse_numbers(s, key);
  if (v.size() != 1)
    throw std::invalid_argument("config: key '" + key + "' needs exactly one number");
  return v[0];
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline ScenarioConfig parse_config(std::istream& in) {
  ScenarioConfig cfg;
  bool have_meas_s = false, have_meas_cov = false;
  Vec3 meas_s = Vec3::Constant(12.0), meas_cov = Vec3::Constant(0.04);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw std::invalid_argument("config: empty key or value at line " +
                                  std::to_string(lineno));
    if (key == "duration") cfg.duration = detail::parse_scalar(val, key);
    else if (key == "gyro_rate") cfg.gyro_rate = detail::parse_scalar(val, key);
    else if (key == "meas_rate") cfg.meas_rate = detail::parse_scalar(val, key);
    else if (key == "frequency") cfg.frequency = detail::parse_scalar(val, key);
    else if (key == "amplitudes") cfg.euler_amplitudes = detail::parse_vec3(val, key);
    else if (key == "sigma_u")
      cfg.sigma_u = detail::parse_scalar(val, key) * M_PI / 180.0;
    else if (key == "sigma_v")
      cfg.sigma_v = detail::parse_scalar(val, key) / 3600.0 * M_PI / 180.0;
    else if (key == "meas_kind") {
      if (val == "matrix_fisher")
        cfg.meas.kind = MeasurementNoiseSpec::Kind::matrix_fisher;
      else if (val == "gaussian")
        cfg.meas.kind = MeasurementNoiseSpec::Kind::gaussian_rotvec;
      else
        throw std::invalid_argument("config: meas_kind must be matrix_fisher or gaussian");
    } else if (key == "meas_s") {
      meas_s = detail::parse_vec3(val, key);
      have_meas_s = true;
    } else if (key == "meas_cov") {
      meas_cov = detail::parse_vec3(val, key);
      have_meas_cov = true;
    } else if (key == "init_kind") {
      if (val == "small") cfg.init_kind = ScenarioConfig::InitKind::small_error;
      else if (val == "large") cfg.init_kind = ScenarioConfig::InitKind::large_error;
      else throw std::invalid_argument("config: init_kind must be small or large");
    } else if (key == "init_s0") cfg.init_s0 = detail::parse_scalar(val, key);
    else if (key == "init_sigma0") cfg.init_sigma0 = detail::parse_scalar(val, key);
    else if (key == "init_bias") cfg.init_bias = detail::parse_vec3(val, key);
    else if (key == "trials")
      cfg.trials = static_cast<int>(std::lround(detail::parse_scalar(val, key)));
    else if (key == "seed")
      cfg.seed = static_cast<std::uint64_t>(detail::parse_scalar(val, key));
    else if (key == "threads")
      cfg.threads = static_cast<int>(std::lround(detail::parse_scalar(val, key)));
    else
      throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  if (cfg.meas.kind == MeasurementNoiseSpec::Kind::matrix_fisher) {
    if (have_meas_cov && !have_meas_s)
      throw std::invalid_argument("config: meas_kind matrix_fisher requires meas_s");
    cfg.meas.param = meas_s.asDiagonal();
  } else {
    if (have_meas_s && !have_meas_cov)
      throw std::invalid_argument("config: meas_kind gaussian requires meas_cov");
    cfg.meas.param = meas_cov.asDiagonal();
  }
  cfg.validate();
  return cfg;
}

inline ScenarioConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  return parse_config(in);
}

// ---- truth and sensor streams -----------------------------------------------------

// Body-fixed 3-2-1 Euler angles: R = exp(a1 e3^) exp(a2 e2^) exp(a3 e1^).
inline Mat3 euler321(const Vec3& angles) {
  return so3::exp_so3(angles[0] * Vec3::UnitZ()) *
         so3::exp_so3(angles[1] * Vec3::UnitY()) *
         so3::exp_so3(angles[2] * Vec3::UnitX());
}

struct TruthData {
  double h = 0.0;
  int meas_every = 0;
  std::vector<Mat3> r;      // true attitude, size steps + 1
  std::vector<Vec3> bias;   // true gyro bias, size steps + 1
  std::vector<Vec3> omega;  // gyro output consumed by the filters, size steps
  std::vector<Mat3> z;      // attitude measurements, one per epoch (step k with
                            // (k + 1) % meas_every == 0, in order)

  bool has_meas(int k) const { return (k + 1) % meas_every == 0; }
};

// The per-step true rate is the piecewise-constant rate that reproduces the
// sampled trajectory exactly, log(R_k^T R_{k+1})/h; this stays well defined
// through the pitch-angle singularity of the Euler chart.  The gyro output is
// generated so that the filters' discrete process model matches the truth
// exactly: h*omega_bar = h*(Omega + x) + dW_u.
template <class Rng>
TruthData generate_truth(const ScenarioConfig& cfg, Rng& rng) {
  cfg.validate();
  const int n = cfg.steps();
  TruthData td;
  td.h = 1.0 / cfg.gyro_rate;
  td.meas_every = cfg.meas_every();
  td.r.resize(n + 1);
  td.bias.resize(n + 1);
  td.omega.resize(n);
  td.z.reserve(n / td.meas_every);

  for (int k = 0; k <= n; ++k) {
    const double ph = std::sin(2.0 * M_PI * cfg.frequency * k * td.h);
    td.r[k] = euler321(ph * cfg.euler_amplitudes);
  }

  std::normal_distribution<double> nd(0.0, 1.0);
  auto gauss3 = [&] { return Vec3(nd(rng), nd(rng), nd(rng)); };
  const double sv = cfg.sigma_v * std::sqrt(td.h);
  const double su = cfg.sigma_u * std::sqrt(td.h);
  td.bias[0] = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    td.bias[k + 1] = td.bias[k] + sv * gauss3();
    const Vec3 omega_bar = so3::log_so3(td.r[k].transpose() * td.r[k + 1]) / td.h;
    const Vec3 dwu = su * gauss3();
    td.omega[k] = omega_bar - td.bias[k] - dwu / td.h;
  }

  const bool mf = cfg.meas.kind == MeasurementNoiseSpec::Kind::matrix_fisher;
  const MatX cov_root = mf ? MatX() : symmetric_sqrt(cfg.meas.param);
  for (int k = 0; k < n; ++k) {
    if (!td.has_meas(k)) continue;
    if (mf) {
      td.z.push_back(sample_attitude_measurement(td.r[k + 1], cfg.meas.param, rng));
    } else {
      const Vec3 th = cov_root * gauss3();
      td.z.push_back(td.r[k + 1] * so3::exp_so3(th));
    }
  }
  return td;
}

// ---- trial runner -----------------------------------------------------------------

// Both measurement-noise conventions resolved from the configured one; the
// conversion is deterministic, so every trial and filter sees the same pair.
struct NoisePair {
  Mat3 f_m;      // matrix Fisher concentration parameter
  Mat3 sigma_m;  // rotation-vector covariance
};

inline NoisePair resolve_noise(const MeasurementNoiseSpec& spec) {
  const MeasurementNoiseSpec other = convert_measurement_noise(spec);
  NoisePair np;
  if (spec.kind == MeasurementNoiseSpec::Kind::matrix_fisher) {
    np.f_m = spec.param;
    np.sigma_m = other.param;
  } else {
    np.f_m = other.param;
    np.sigma_m = spec.param;
  }
  return np;
}

struct FilterTrace {
  std::string name;
  bool ok = true;
  std::string error;          // first failure message, if any
  long fail_step = -1;        // step of the first failure (estimate then frozen)
  std::vector<double> att_err_deg;     // per step
  std::vector<double> bias_err_deg_s;  // per step
  std::vector<double> proxy_att;       // sqrt of the first attitude-covariance diagonal
  std::vector<double> proxy_bias;      // sqrt of the first bias-covariance diagonal
  std::uint64_t stream_hash = 0;       // over the consumed sensor bytes

  double mean_att() const {
    double s = 0.0;
    for (double v : att_err_deg) s += v;
    return att_err_deg.empty() ? 0.0 : s / att_err_deg.size();
  }
  double mean_bias() const {
    double s = 0.0;
    for (double v : bias_err_deg_s) s += v;
    return bias_err_deg_s.empty() ? 0.0 : s / bias_err_deg_s.size();
  }
};

struct TrialResult {
  std::vector<double> t;
  FilterTrace mfg_analytical;
  FilterTrace mfg_unscented;
  FilterTrace mekf;
};

// Which filters a trial/batch runs; disabled filters produce empty traces.
struct FilterSelect {
  bool analytical = true;
  bool unscented = true;
  bool mekf = true;
};

namespace detail {

inline void fnv1a(std::uint64_t& h, const double* p, size_t n) {
  const unsigned char* b = reinterpret_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n * sizeof(double); ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
}

struct TrialInit {
  Mat3 r_hat0;
  Vec3 x_hat0;
  Mat3 f_scale;    // attitude prior concentration (F0 = r_hat0 * f_scale)
  Mat3 att_cov0;   // EKF attitude-error covariance
  double sigma0;   // bias prior stddev
};

// Initial estimates drawn around the truth from the configured error
// distributions (small-error case), or set to the fixed falsely-confident
// values (large-error case).
template <class Rng>
TrialInit draw_init(const ScenarioConfig& cfg, const NoisePair& np, const Mat3& r0,
                    Rng& rng) {
  TrialInit init;
  init.sigma0 = cfg.init_sigma0;
  std::normal_distribution<double> nd(0.0, 1.0);
  auto gauss3 = [&] { return Vec3(nd(rng), nd(rng), nd(rng)); };
  if (cfg.init_kind == ScenarioConfig::InitKind::large_error) {
    init.r_hat0 = r0 * so3::exp_so3(M_PI * Vec3::UnitX());
    init.x_hat0 = cfg.init_bias;
    init.f_scale = cfg.init_s0 * Mat3::Identity();
    // Gaussian tangent approximation of the isotropic attitude prior
    init.att_cov0 = Mat3::Identity() / (2.0 * cfg.init_s0);
    return init;
  }
  if (cfg.meas.kind == MeasurementNoiseSpec::Kind::matrix_fisher) {
    init.r_hat0 = sample_attitude_measurement(r0, cfg.meas.param, rng);
  } else {
    init.r_hat0 = r0 * so3::exp_so3(Vec3(symmetric_sqrt(cfg.meas.param) * gauss3()));
  }
  init.x_hat0 = cfg.init_sigma0 * gauss3();
  init.f_scale = np.f_m;
  init.att_cov0 = np.sigma_m;
  return init;
}

inline MFGParams mfg_prior(const TrialInit& init) {
  MFGParams p;
  p.svd = so3::proper_svd(Mat3(init.r_hat0 * init.f_scale));
  p.mu = VecX(init.x_hat0);
  p.P = MatX::Zero(3, 3);
  p.Sigma = init.sigma0 * init.sigma0 * MatX::Identity(3, 3);
  p.validate();
  return p;
}

inline double bias_proxy(const MFGParams& p) {
  return std::sqrt(std::max(0.0, p.Sigma(0, 0)));
}

inline double bias_proxy(const MEKFState& s) {
  return std::sqrt(std::max(0.0, s.pcov(3, 3)));
}

// Runs one filter over the shared sensor streams.  On the first numerical
// failure the estimate is frozen for the remaining steps (recorded, not
// fatal), keeping all series finite and equal length.
template <class Step>
FilterTrace run_filter(const std::string& name, const TruthData& td, Step&& step) {
  FilterTrace tr;
  tr.name = name;
  const int n = static_cast<int>(td.omega.size());
  tr.att_err_deg.reserve(n);
  tr.bias_err_deg_s.reserve(n);
  tr.proxy_att.reserve(n);
  tr.proxy_bias.reserve(n);
  tr.stream_hash = 1469598103934665603ull;
  size_t zi = 0;
  for (int k = 0; k < n; ++k) {
    const Mat3* z = td.has_meas(k) ? &td.z[zi++] : nullptr;
    fnv1a(tr.stream_hash, td.omega[k].data(), 3);
    if (z) fnv1a(tr.stream_hash, z->data(), 9);
    if (tr.ok) {
      try {
        step(td.omega[k], z);
      } catch (const std::exception& e) {
        tr.ok = false;
        tr.error = e.what();
        tr.fail_step = k;
      }
    }
    const auto [att, bias, pa, pb] = step.report(td.r[k + 1], td.bias[k + 1]);
    tr.att_err_deg.push_back(att);
    tr.bias_err_deg_s.push_back(bias);
    tr.proxy_att.push_back(pa);
    tr.proxy_bias.push_back(pb);
  }
  return tr;
}

struct MFGStepper {
  MFGFilterState st;
  double h;
  GyroNoiseModel noise;
  Backend backend;
  Mat3 f_m;
  void operator()(const Vec3& omega, const Mat3* z) {
    AttitudeMeasurement m;
    if (z) {
      m.Z = *z;
      m.Fz = f_m;
    }
    mfg_filter_step(st, omega, h, noise, backend, z ? &m : nullptr);
  }
  std::array<double, 4> report(const Mat3& r_true, const Vec3& x_true) const {
    const auto e =
        error_metrics(st.attitude_estimate(), st.bias_estimate(), r_true, x_true);
    return {e.attitude_deg, e.bias_deg_per_s, attitude_uncertainty_proxy(st.params),
            bias_proxy(st.params)};
  }
};

struct MEKFStepper {
  MEKFState st;
  double h;
  GyroNoiseModel noise;
  Mat3 sigma_m;
  void operator()(const Vec3& omega, const Mat3* z) {
    mekf_step(st, omega, h, noise, z, z ? &sigma_m : nullptr);
  }
  std::array<double, 4> report(const Mat3& r_true, const Vec3& x_true) const {
    const auto e = error_metrics(st.r_hat, st.x_hat, r_true, x_true);
    return {e.attitude_deg, e.bias_deg_per_s, attitude_uncertainty_proxy(st),
            bias_proxy(st)};
  }
};

}  // namespace detail

// Per-trial RNG substream: counter-based derivation from the root seed, so
// trials are independent of execution order.
inline std::mt19937_64 trial_rng(std::uint64_t seed, int trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

inline TrialResult run_trial(const ScenarioConfig& cfg, const NoisePair& np, int trial,
                             const FilterSelect& select = {}) {
  std::mt19937_64 rng = trial_rng(cfg.seed, trial);
  const int n = cfg.steps();
  const double h = 1.0 / cfg.gyro_rate;
  const GyroNoiseModel noise = cfg.gyro_noise();

  // fixed draw order: initial estimates first, then the sensor streams
  const Mat3 r0 = euler321(Vec3::Zero());
  const detail::TrialInit init = detail::draw_init(cfg, np, r0, rng);
  const TruthData td = generate_truth(cfg, rng);

  TrialResult out;
  out.t.resize(n);
  for (int k = 0; k < n; ++k) out.t[k] = (k + 1) * h;

  const MFGParams prior = detail::mfg_prior(init);
  detail::MFGStepper an{{prior, 0.0, 0}, h, noise, Backend::analytical, np.f_m};
  detail::MFGStepper un{{prior, 0.0, 0}, h, noise, Backend::unscented, np.f_m};
  detail::MEKFStepper ek{{}, h, noise, np.sigma_m};
  ek.st.r_hat = init.r_hat0;
  ek.st.x_hat = init.x_hat0;
  ek.st.pcov.topLeftCorner<3, 3>() = init.att_cov0;
  ek.st.pcov.bottomRightCorner<3, 3>() =
      init.sigma0 * init.sigma0 * Mat3::Identity();

  out.mfg_analytical.name = "mfg_analytical";
  out.mfg_unscented.name = "mfg_unscented";
  out.mekf.name = "mekf";
  if (select.analytical) out.mfg_analytical = detail::run_filter("mfg_analytical", td, an);
  if (select.unscented) out.mfg_unscented = detail::run_filter("mfg_unscented", td, un);
  if (select.mekf) out.mekf = detail::run_filter("mekf", td, ek);
  return out;
}

inline TrialResult run_trial(const ScenarioConfig& cfg, int trial = 0,
                             const FilterSelect& select = {}) {
  cfg.validate();
  return run_trial(cfg, resolve_noise(cfg.meas), trial, select);
}

// ---- statistics -------------------------------------------------------------------

namespace detail {

// Regularized incomplete beta by Lentz continued fraction.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-15, kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) <= kEps) return h;
  }
  throw std::runtime_error("incomplete beta: continued fraction did not converge");
}

inline double inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - lbeta);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - std::exp(b * std::log1p(-x) + a * std::log(x) - lbeta) *
                   betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

// Two-sided p-value of the paired t-test between equal-length series.
inline double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  if (n != b.size() || n < 2)
    throw std::invalid_argument("paired_t_test: need equal lengths >= 2");
  double md = 0.0;
  for (size_t i = 0; i < n; ++i) md += a[i] - b[i];
  md /= n;
  double s2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - md;
    s2 += d * d;
  }
  s2 /= (n - 1);
  if (s2 == 0.0) return md == 0.0 ? 1.0 : 0.0;
  const double t = md / std::sqrt(s2 / n);
  const double nu = static_cast<double>(n - 1);
  return detail::inc_beta(0.5 * nu, 0.5, nu / (nu + t * t));
}

// ---- batch runner -----------------------------------------------------------------

struct FilterStats {
  std::string name;
  int n_trials = 0;
  int n_failed = 0;              // trials where the filter hit a numerical failure
  std::vector<double> att_avgs;  // per-trial time-averaged attitude error [deg]
  std::vector<double> bias_avgs; // per-trial time-averaged bias error [deg/s]
  double att_mean = 0.0, att_sd = 0.0;
  double bias_mean = 0.0, bias_sd = 0.0;
};

struct BatchSummary {
  FilterStats mfg_analytical, mfg_unscented, mekf;
  // two-sided paired t-test p-values of each variant against the EKF baseline
  double p_att_analytical = 1.0, p_bias_analytical = 1.0;
  double p_att_unscented = 1.0, p_bias_unscented = 1.0;
};

namespace detail {

inline void finalize_stats(FilterStats& fs) {
  const size_t n = fs.att_avgs.size();
  fs.n_trials = static_cast<int>(n);
  if (n == 0) return;
  for (size_t i = 0; i < n; ++i) {
    fs.att_mean += fs.att_avgs[i];
    fs.bias_mean += fs.bias_avgs[i];
  }
  fs.att_mean /= n;
  fs.bias_mean /= n;
  if (n >= 2) {
    double sa = 0.0, sb = 0.0;
    for (size_t i = 0; i < n; ++i) {
      sa += (fs.att_avgs[i] - fs.att_mean) * (fs.att_avgs[i] - fs.att_mean);
      sb += (fs.bias_avgs[i] - fs.bias_mean) * (fs.bias_avgs[i] - fs.bias_mean);
    }
    fs.att_sd = std::sqrt(sa / (n - 1));
    fs.bias_sd = std::sqrt(sb / (n - 1));
  }
}

inline void collect(FilterStats& fs, const FilterTrace& tr) {
  if (tr.att_err_deg.empty()) return;  // filter not selected for this run
  if (!tr.ok) ++fs.n_failed;
  fs.att_avgs.push_back(tr.mean_att());
  fs.bias_avgs.push_back(tr.mean_bias());
}

}  // namespace detail

// N independent trials on deterministic per-trial substreams; time-averaged
// then trial-averaged errors, with paired t-tests against the EKF baseline.
// An optional callback receives each TrialResult (in trial order).
inline BatchSummary run_batch(
    const ScenarioConfig& cfg,
    const std::function<void(int, const TrialResult&)>& on_trial = nullptr,
    const FilterSelect& select = {}) {
  cfg.validate();
  const NoisePair np = resolve_noise(cfg.meas);

  std::vector<TrialResult> results(cfg.trials);
  if (cfg.threads <= 1) {
    for (int i = 0; i < cfg.trials; ++i) results[i] = run_trial(cfg, np, i, select);
  } else {
    std::atomic<int> next{0};
    auto worker = [&] {
      for (int i = next.fetch_add(1); i < cfg.trials; i = next.fetch_add(1))
        results[i] = run_trial(cfg, np, i, select);
    };
    std::vector<std::thread> pool;
    const int nt = std::min(cfg.threads, cfg.trials);
    pool.reserve(nt);
    for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  BatchSummary bs;
  bs.mfg_analytical.name = "mfg_analytical";
  bs.mfg_unscented.name = "mfg_unscented";
  bs.mekf.name = "mekf";
  for (int i = 0; i < cfg.trials; ++i) {
    detail::collect(bs.mfg_analytical, results[i].mfg_analytical);
    detail::collect(bs.mfg_unscented, results[i].mfg_unscented);
    detail::collect(bs.mekf, results[i].mekf);
    if (on_trial) on_trial(i, results[i]);
  }
  detail::finalize_stats(bs.mfg_analytical);
  detail::finalize_stats(bs.mfg_unscented);
  detail::finalize_stats(bs.mekf);
  if (cfg.trials >= 2 && select.mekf) {
    if (select.analytical) {
      bs.p_att_analytical = paired_t_test(bs.mfg_analytical.att_avgs, bs.mekf.att_avgs);
      bs.p_bias_analytical =
          paired_t_test(bs.mfg_analytical.bias_avgs, bs.mekf.bias_avgs);
    }
    if (select.unscented) {
      bs.p_att_unscented = paired_t_test(bs.mfg_unscented.att_avgs, bs.mekf.att_avgs);
      bs.p_bias_unscented =
          paired_t_test(bs.mfg_unscented.bias_avgs, bs.mekf.bias_avgs);
    }
  }
  return bs;
}

// ---- CSV output -------------------------------------------------------------------

namespace detail {

inline std::ostream& csv_stream(std::ostream& os) {
  os << std::setprecision(17);
  return os;
}

}  // namespace detail

// One row per gyro step: time, then (attitude error [deg], bias error [deg/s],
// attitude proxy [rad], bias proxy [rad/s]) for each filter.  This is the
// plot-ready error/uncertainty time-series data.
inline void write_trial_csv(std::ostream& os, const TrialResult& tr) {
  detail::csv_stream(os);
  std::vector<const FilterTrace*> fts;
  for (const FilterTrace* f : {&tr.mfg_analytical, &tr.mfg_unscented, &tr.mekf})
    if (!f->att_err_deg.empty()) fts.push_back(f);
  os << "t";
  for (const FilterTrace* f : fts)
    os << "," << f->name << "_att_err_deg," << f->name << "_bias_err_deg_s,"
       << f->name << "_att_proxy," << f->name << "_bias_proxy";
  os << "\n";
  for (size_t k = 0; k < tr.t.size(); ++k) {
    os << tr.t[k];
    for (const FilterTrace* f : fts)
      os << "," << f->att_err_deg[k] << "," << f->bias_err_deg_s[k] << ","
         << f->proxy_att[k] << "," << f->proxy_bias[k];
    os << "\n";
  }
}

// Summary table: one row per filter with trial-averaged errors, across-trial
// standard deviations of the per-trial time averages, and the paired t-test
// p-values against the EKF baseline.
inline void write_batch_csv(std::ostream& os, const BatchSummary& bs) {
  detail::csv_stream(os);
  os << "filter,trials,failed,att_mean_deg,att_sd_deg,bias_mean_deg_s,"
        "bias_sd_deg_s,p_att_vs_mekf,p_bias_vs_mekf\n";
  auto row = [&](const FilterStats& fs, double pa, double pb, bool baseline) {
    os << fs.name << "," << fs.n_trials << "," << fs.n_failed << "," << fs.att_mean
       << "," << fs.att_sd << "," << fs.bias_mean << "," << fs.bias_sd << ",";
    if (baseline)
      os << ",";
    else
      os << pa << "," << pb;
    os << "\n";
  };
  if (bs.mfg_analytical.n_trials > 0)
    row(bs.mfg_analytical, bs.p_att_analytical, bs.p_bias_analytical, false);
  if (bs.mfg_unscented.n_trials > 0)
    row(bs.mfg_unscented, bs.p_att_unscented, bs.p_bias_unscented, false);
  if (bs.mekf.n_trials > 0) row(bs.mekf, 0, 0, true);
}

// Per-trial time averages, one row per trial: the data behind the summary.
inline void write_trial_averages_csv(std::ostream& os, const BatchSummary& bs) {
  detail::csv_stream(os);
  std::vector<const FilterStats*> fss;
  int n = 0;
  for (const FilterStats* f : {&bs.mfg_analytical, &bs.mfg_unscented, &bs.mekf})
    if (f->n_trials > 0) {
      fss.push_back(f);
      n = f->n_trials;
    }
  os << "trial";
  for (const FilterStats* f : fss)
    os << "," << f->name << "_att_deg," << f->name << "_bias_deg_s";
  os << "\n";
  for (int i = 0; i < n; ++i) {
    os << i;
    for (const FilterStats* f : fss)
      os << "," << f->att_avgs[i] << "," << f->bias_avgs[i];
    os << "\n";
  }
}

}  // namespace mfg::sim
