// Command-line front end: Monte-Carlo simulation batches, maximum-likelihood
// fits from sample files, and single propagation / measurement-update steps on
// serialized distribution states.
//
// Exit codes: 0 success, 2 configuration / input error, 3 numerical failure.

#include <CLI11.hpp>
#include <mfg/sim.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> read_numbers_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  if (!in.eof()) throw ConfigError("non-numeric data in '" + path + "'");
  return out;
}

mfg::MFGParams read_state_file(const std::string& path) {
  const std::vector<double> raw = read_numbers_file(path);
  mfg::VecX v(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) v[static_cast<int>(i)] = raw[i];
  try {
    return mfg::from_flat(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("state file '" + path + "': " + e.what());
  }
}

void print_flat(const mfg::VecX& v) {
  std::cout << std::setprecision(17);
  for (int i = 0; i < v.size(); ++i) std::cout << v[i] << (i + 1 < v.size() ? " " : "\n");
}

// samples file: one sample per row, 9 rotation entries (row-major) followed by
// the n linear entries; n inferred from the row width
int cmd_mle(const std::string& samples_path) {
  std::ifstream in(samples_path);
  if (!in) throw ConfigError("cannot open '" + samples_path + "'");
  std::vector<mfg::Mat3> rs;
  std::vector<mfg::VecX> xs;
  std::string line;
  int width = -1;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream iss(line);
    std::vector<double> row;
    double v;
    while (iss >> v) row.push_back(v);
    if (row.empty()) continue;
    if (width < 0) {
      width = static_cast<int>(row.size());
      if (width < 10)
        throw ConfigError("samples row needs 9 rotation entries plus the linear part");
    } else if (static_cast<int>(row.size()) != width) {
      throw ConfigError("inconsistent row width at line " + std::to_string(lineno));
    }
    mfg::Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = row[3 * i + j];
    mfg::VecX x(width - 9);
    for (int i = 9; i < width; ++i) x[i - 9] = row[i];
    rs.push_back(r);
    xs.push_back(x);
  }
  if (rs.empty()) throw ConfigError("no samples in '" + samples_path + "'");
  const mfg::MFGParams fit = mfg::mle(rs, xs);
  print_flat(mfg::to_flat(fit));
  return kExitOk;
}

int cmd_propagate(const std::string& state_path, int steps, double dt,
                  const std::vector<double>& omega, double sigma_u_deg,
                  double sigma_v_deg_hr, const std::string& backend_name) {
  if (steps < 1) throw ConfigError("--steps must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("--dt must be > 0");
  mfg::MFGParams p = read_state_file(state_path);
  const mfg::Vec3 w(omega[0], omega[1], omega[2]);
  mfg::GyroNoiseModel noise;
  const double su = sigma_u_deg * M_PI / 180.0;
  const double sv = sigma_v_deg_hr / 3600.0 * M_PI / 180.0;
  noise.Gu = su * su * mfg::Mat3::Identity();
  noise.Gv = sv * sv * mfg::Mat3::Identity();
  const bool analytical = backend_name == "analytical";
  for (int k = 0; k < steps; ++k)
    p = analytical ? mfg::propagate_analytical(p, w, dt, noise)
                   : mfg::propagate_unscented(p, w, dt, noise);
  print_flat(mfg::to_flat(p));
  return kExitOk;
}

// measurement file: one measurement per row, 9 entries of Z (row-major)
// followed by 9 entries of its concentration parameter (row-major); all rows
// are fused jointly
int cmd_update(const std::string& state_path, const std::string& meas_path) {
  const mfg::MFGParams p = read_state_file(state_path);
  const std::vector<double> raw = read_numbers_file(meas_path);
  if (raw.empty() || raw.size() % 18 != 0)
    throw ConfigError("measurement file needs rows of 18 numbers (Z then its parameter)");
  std::vector<mfg::AttitudeMeasurement> ms(raw.size() / 18);
  for (size_t m = 0; m < ms.size(); ++m)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        ms[m].Z(i, j) = raw[18 * m + 3 * i + j];
        ms[m].Fz(i, j) = raw[18 * m + 9 + 3 * i + j];
      }
  print_flat(mfg::to_flat(mfg::update(p, ms, {})));
  return kExitOk;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 int trials_override, long long seed_override,
                 const std::string& backend, const std::string& filters) {
  mfg::sim::ScenarioConfig cfg;
  try {
    cfg = mfg::sim::parse_config_file(config_path);
    if (trials_override > 0) cfg.trials = trials_override;
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);

    mfg::sim::FilterSelect sel;
    bool want_mfg = true;
    sel.mekf = true;
    if (!filters.empty()) {
      want_mfg = filters.find("mfg") != std::string::npos;
      sel.mekf = filters.find("mekf") != std::string::npos;
      if (!want_mfg && !sel.mekf)
        throw ConfigError("--filters must name mfg and/or mekf");
    }
    sel.analytical = want_mfg && (backend == "analytical" || backend == "both");
    sel.unscented = want_mfg && (backend == "unscented" || backend == "both");

    std::filesystem::create_directories(out_dir);
    cfg.validate();

    auto write_trial = [&](int i, const mfg::sim::TrialResult& tr) {
      std::ostringstream name;
      name << "trial_" << std::setw(3) << std::setfill('0') << i << ".csv";
      std::ofstream os(std::filesystem::path(out_dir) / name.str());
      mfg::sim::write_trial_csv(os, tr);
    };
    const mfg::sim::BatchSummary bs = mfg::sim::run_batch(cfg, write_trial, sel);
    {
      std::ofstream os(std::filesystem::path(out_dir) / "batch_summary.csv");
      mfg::sim::write_batch_csv(os, bs);
    }
    {
      std::ofstream os(std::filesystem::path(out_dir) / "trial_averages.csv");
      mfg::sim::write_trial_averages_csv(os, bs);
    }

    std::cout << std::setprecision(4);
    auto report = [&](const mfg::sim::FilterStats& fs, double pa, double pb) {
      if (fs.n_trials == 0) return;
      std::cout << fs.name << ": attitude " << fs.att_mean << " +- " << fs.att_sd
                << " deg, bias " << fs.bias_mean << " +- " << fs.bias_sd << " deg/s";
      if (fs.name != "mekf" && sel.mekf && fs.n_trials >= 2)
        std::cout << " (p vs mekf: att " << pa << ", bias " << pb << ")";
      if (fs.n_failed > 0) std::cout << " [" << fs.n_failed << " failed trials]";
      std::cout << "\n";
    };
    report(bs.mfg_analytical, bs.p_att_analytical, bs.p_bias_analytical);
    report(bs.mfg_unscented, bs.p_att_unscented, bs.p_bias_unscented);
    report(bs.mekf, 0, 0);
    std::cout << "outputs written to " << out_dir << "\n";
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matrix Fisher-Gaussian attitude/bias estimation toolkit"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "run a Monte-Carlo simulation batch");
  std::string config_path, out_dir;
  int trials_override = -1;
  long long seed_override = -1;
  std::string backend = "both", filters;
  sim->add_option("--config", config_path, "scenario config file")->required();
  sim->add_option("--out", out_dir, "output directory for CSV files")->required();
  sim->add_option("--trials", trials_override, "override the configured trial count");
  sim->add_option("--seed", seed_override, "override the configured root seed");
  sim->add_option("--backend", backend, "analytical|unscented|both")
      ->check(CLI::IsMember({"analytical", "unscented", "both"}));
  sim->add_option("--filters", filters, "comma list of mfg,mekf (default both)");

  auto* mle = app.add_subcommand("mle", "fit a distribution to samples");
  std::string samples_path;
  mle->add_option("--samples", samples_path, "CSV of samples (9 rotation + n linear)")
      ->required();

  auto* prop = app.add_subcommand("propagate", "propagate a serialized state");
  std::string state_path;
  int steps = 1;
  double dt = 1.0 / 150.0;
  std::vector<double> omega{0.0, 0.0, 0.0};
  double sigma_u_deg = 0.0, sigma_v_deg_hr = 0.0;
  std::string prop_backend = "analytical";
  prop->add_option("--state", state_path, "flat state file")->required();
  prop->add_option("--steps", steps, "number of steps")->required();
  prop->add_option("--dt", dt, "step size [s]");
  prop->add_option("--omega", omega, "gyro reading [rad/s]")->expected(3);
  prop->add_option("--sigma-u", sigma_u_deg, "gyro white noise [deg/sqrt(s)]");
  prop->add_option("--sigma-v", sigma_v_deg_hr, "bias walk [deg/hr/sqrt(s)]");
  prop->add_option("--backend", prop_backend, "analytical|unscented")
      ->check(CLI::IsMember({"analytical", "unscented"}));

  auto* upd = app.add_subcommand("update", "apply attitude measurements to a state");
  std::string upd_state_path, meas_path;
  upd->add_option("--state", upd_state_path, "flat state file")->required();
  upd->add_option("--meas", meas_path, "measurement file (rows: Z then parameter)")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(config_path, out_dir, trials_override, seed_override,
                          backend, filters);
    if (mle->parsed()) return cmd_mle(samples_path);
    if (prop->parsed())
      return cmd_propagate(state_path, steps, dt, omega, sigma_u_deg,
                           sigma_v_deg_hr, prop_backend);
    if (upd->parsed()) return cmd_update(upd_state_path, meas_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
