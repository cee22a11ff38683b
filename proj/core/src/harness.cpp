#include "doacal/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "doacal/error.hpp"
#include "doacal/rng.hpp"

namespace doacal {

// ---------------------------------------------------------------------------
// Configuration

ArrayGeometry ExperimentConfig::geometry() const {
  return ArrayGeometry::from_subarrays(subarray_sizes, intra_spacing_wl, gap_wl);
}

BlockCovariance ExperimentConfig::base_covariance() const {
  return build_default_cov(subarray_sizes, subarray_powers, Complex(rho_real, rho_imag));
}

EstimatorConfig ExperimentConfig::estimator_config(Variant variant) const {
  EstimatorConfig c;
  c.max_iterations = max_iterations;
  c.param_tol = param_tol;
  c.num_unknown = static_cast<Index>(theta_unknown_deg.size());
  c.iml_calibrated_start = iml_calibrated_start;
  c.mask = BlockMask(subarray_sizes);
  c.variant = variant;
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (subarray_sizes.empty()) fail("subarray_sizes is empty");
  if (gap_wl.size() + 1 != subarray_sizes.size()) fail("gap_wl needs one entry per subarray pair");
  if (subarray_powers.size() != subarray_sizes.size())
    fail("subarray_powers needs one entry per subarray");
  if (theta_unknown_deg.empty()) fail("theta_unknown_deg is empty");
  if (theta_known_deg.empty()) fail("theta_known_deg is empty (calibration sources are required)");
  for (double t : theta_known_deg)
    if (!(std::abs(t) < 90.0)) fail("theta_known_deg outside (-90, 90)");
  for (double t : theta_unknown_deg)
    if (!(std::abs(t) < 90.0)) fail("theta_unknown_deg outside (-90, 90)");
  if (n_snapshots < 1) fail("n_snapshots must be >= 1");
  if (n_trials < 1) fail("n_trials must be >= 1");
  if (snr_grid_db.empty()) fail("snr_grid_db is empty");
  if (variants.empty()) fail("variants is empty");
  if (!(std::hypot(rho_real, rho_imag) < 1.0)) fail("|rho| must be < 1");
  if (max_iterations < 1) fail("max_iterations must be >= 1");
  if (!(param_tol > 0.0)) fail("param_tol must be > 0");
  try {
    (void)geometry();
    (void)base_covariance();
  } catch (const InvalidArgument& e) {
    fail(e.what());
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& tok, const std::string& key) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ConfigError("config: key '" + key + "': '" + tok + "' is not a number");
  return v;
}

std::int64_t to_int(const std::string& tok, const std::string& key) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ConfigError("config: key '" + key + "': '" + tok + "' is not an integer");
  return v;
}

std::vector<std::string> split_list(std::string value) {
  if (!value.empty() && value.front() == '[' && value.back() == ']')
    value = value.substr(1, value.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> number_list(const std::string& value, const std::string& key) {
  std::vector<double> out;
  for (const std::string& item : split_list(value)) {
    if (item.empty()) throw ConfigError("config: key '" + key + "': empty list entry");
    if (item.find(':') != std::string::npos) {
      std::vector<std::string> parts;
      std::stringstream ss(item);
      std::string p;
      while (std::getline(ss, p, ':')) parts.push_back(trim(p));
      if (parts.size() != 3) throw ConfigError("config: key '" + key + "': range must be start:step:stop");
      const double a = to_double(parts[0], key), step = to_double(parts[1], key),
                   b = to_double(parts[2], key);
      if (step == 0.0 || (b - a) / step < 0.0)
        throw ConfigError("config: key '" + key + "': range '" + item + "' is empty or unbounded");
      const auto n = static_cast<long>(std::floor((b - a) / step + 1e-9));
      for (long i = 0; i <= n; ++i) out.push_back(a + static_cast<double>(i) * step);
    } else {
      out.push_back(to_double(item, key));
    }
  }
  return out;
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (value.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key + "' has no value");
    if (seen.count(key))
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key +
                        "' repeated (first on line " + std::to_string(seen[key]) + ")");
    seen[key] = lineno;

    if (key == "subarray_sizes") {
      c.subarray_sizes.clear();
      for (double v : number_list(value, key)) {
        if (v != std::floor(v) || v < 1) throw ConfigError("config: subarray_sizes must be positive integers");
        c.subarray_sizes.push_back(static_cast<Index>(v));
      }
    } else if (key == "intra_spacing_wl") {
      c.intra_spacing_wl = to_double(value, key);
    } else if (key == "gap_wl") {
      c.gap_wl = number_list(value, key);
    } else if (key == "theta_known_deg") {
      c.theta_known_deg = number_list(value, key);
    } else if (key == "theta_unknown_deg") {
      c.theta_unknown_deg = number_list(value, key);
    } else if (key == "n_snapshots") {
      c.n_snapshots = static_cast<Index>(to_int(value, key));
    } else if (key == "n_trials") {
      c.n_trials = static_cast<int>(to_int(value, key));
    } else if (key == "snr_grid_db") {
      c.snr_grid_db = number_list(value, key);
    } else if (key == "power_ratio_db") {
      c.power_ratio_db = to_double(value, key);
    } else if (key == "rho_real") {
      c.rho_real = to_double(value, key);
    } else if (key == "rho_imag") {
      c.rho_imag = to_double(value, key);
    } else if (key == "subarray_powers") {
      c.subarray_powers = number_list(value, key);
    } else if (key == "master_seed") {
      const std::int64_t s = to_int(value, key);
      if (s < 0) throw ConfigError("config: master_seed must be nonnegative");
      c.master_seed = static_cast<std::uint64_t>(s);
    } else if (key == "max_iterations") {
      c.max_iterations = static_cast<int>(to_int(value, key));
    } else if (key == "param_tol") {
      c.param_tol = to_double(value, key);
    } else if (key == "freeze_gains") {
      c.freeze_gains = to_bool(value, key);
    } else if (key == "iml_calibrated_start") {
      c.iml_calibrated_start = to_bool(value, key);
    } else if (key == "crb_gains") {
      if (value == "known") c.crb_gains = GainModel::Known;
      else if (value == "unknown") c.crb_gains = GainModel::Unknown;
      else throw ConfigError("config: crb_gains must be 'known' or 'unknown'");
    } else if (key == "variants") {
      c.variants.clear();
      for (const std::string& v : split_list(value)) {
        try {
          c.variants.push_back(parse_variant(v));
        } catch (const InvalidArgument& e) {
          throw ConfigError(std::string("config: ") + e.what());
        }
      }
    } else {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  try {
    return parse_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// SNR and trials

double compute_snr(const CMat& s_unknown, const BlockCovariance& cov) {
  const double n = static_cast<double>(s_unknown.cols());
  const double m = static_cast<double>(cov.dimension());
  const double power = s_unknown.squaredNorm() / (n * m);
  return power * cov.diagonal().cwiseInverse().sum();
}

BlockCovariance snr_to_noise_scale(const CMat& s_unknown, const BlockCovariance& base_cov,
                                   double snr_db) {
  if (s_unknown.size() == 0 || !(s_unknown.squaredNorm() > 0.0))
    throw InvalidArgument("snr_to_noise_scale: unknown-source power is zero");
  if (!std::isfinite(snr_db)) throw InvalidArgument("snr_to_noise_scale: SNR must be finite");
  const RVec d = base_cov.diagonal();
  if (!(d.minCoeff() > 0.0)) throw InvalidArgument("snr_to_noise_scale: base covariance diagonal must be positive");
  const double target = std::pow(10.0, snr_db / 10.0);
  return base_cov.scaled(compute_snr(s_unknown, base_cov) / target);
}

namespace {
enum Stream : std::uint64_t { kGainStream = 1, kSignalStream = 2, kNoiseStream = 3 };
}

Scenario draw_trial_scenario(const ExperimentConfig& config, int trial_index) {
  const ArrayGeometry geom = config.geometry();
  const Index n = config.n_snapshots;
  const auto p = static_cast<Index>(config.theta_known_deg.size());
  const auto k = static_cast<Index>(config.theta_unknown_deg.size());
  const auto trial = static_cast<std::uint64_t>(trial_index);

  Rng gain_rng(mix_seed({config.master_seed, kGainStream, config.freeze_gains ? 0 : trial}));
  Rng sig_rng(mix_seed({config.master_seed, kSignalStream, trial}));
  const double known_amp = std::pow(10.0, config.power_ratio_db / 20.0);

  std::vector<double> tk, tu;
  for (double d : config.theta_known_deg) tk.push_back(deg_to_rad(d));
  for (double d : config.theta_unknown_deg) tu.push_back(deg_to_rad(d));
  CVec gains = draw_gains(gain_rng, geom.num_sensors());
  CMat sk = random_phase(sig_rng, p, n, known_amp);
  CMat su = random_phase(sig_rng, k, n, 1.0);
  Scenario sc{geom, std::move(tk), std::move(tu), std::move(sk), std::move(su),
              std::move(gains), config.base_covariance()};
  sc.validate();
  return sc;
}

std::uint64_t trial_noise_seed(const ExperimentConfig& config, int snr_index, int trial_index) {
  return mix_seed({config.master_seed, kNoiseStream, static_cast<std::uint64_t>(snr_index),
                   static_cast<std::uint64_t>(trial_index)});
}

namespace {

TrialResult run_on_data(const ExperimentConfig& config, const Scenario& scenario, const CMat& y,
                        Variant variant) {
  TrialResult r;
  try {
    const EstimationProblem problem{scenario.geometry, y, scenario.signals_known,
                                    scenario.theta_known};
    r.state = estimate(problem, config.estimator_config(variant));
    r.iterations = r.state.iterations_used;
    RVec est = r.state.theta_u;
    std::vector<double> truth = scenario.theta_unknown;
    std::sort(est.data(), est.data() + est.size());
    std::sort(truth.begin(), truth.end());
    r.theta_error_deg = rad_to_deg(est(0) - truth.front());
    if (!std::isfinite(r.theta_error_deg)) {
      r.status = TrialStatus::Failed;
      r.message = "non-finite estimate";
    }
  } catch (const std::exception& e) {
    r.status = TrialStatus::Failed;
    r.message = e.what();
  }
  return r;
}

}  // namespace

TrialResult run_trial(const ExperimentConfig& config, const Scenario& scenario, double snr_db,
                      Variant variant, std::uint64_t noise_seed) {
  Scenario sc = scenario;
  sc.covariance = snr_to_noise_scale(sc.signals_unknown, scenario.covariance, snr_db);
  const CMat y = synthesize(sc, noise_seed);
  return run_on_data(config, sc, y, variant);
}

TrialResult run_trial(const ExperimentConfig& config, int snr_index, int trial_index,
                      Variant variant) {
  if (snr_index < 0 || snr_index >= static_cast<int>(config.snr_grid_db.size()))
    throw InvalidArgument("run_trial: SNR index out of range");
  return run_trial(config, draw_trial_scenario(config, trial_index),
                   config.snr_grid_db[static_cast<std::size_t>(snr_index)], variant,
                   trial_noise_seed(config, snr_index, trial_index));
}

// ---------------------------------------------------------------------------
// Sweep

namespace {

/// Runs fn(i) for i in [0, count) over a small worker pool.
template <typename F>
void parallel_for(std::size_t count, unsigned threads, F&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Per-trial CRB (degrees^2) at the unscaled base covariance, and the factor
/// converting it to SNR 0 dB. The bound is linear in the noise scale.
struct TrialBound {
  double crb_base_deg2 = 0.0;
  double scale_0db = 0.0;
};

TrialBound trial_bound(const ExperimentConfig& config, const Scenario& sc) {
  TrialBound b;
  const RVec crb = crb_theta(sc, config.crb_gains);
  b.crb_base_deg2 = rad_to_deg(rad_to_deg(crb(0)));
  b.scale_0db = compute_snr(sc.signals_unknown, sc.covariance);
  return b;
}

}  // namespace

double mean_crb_deg2(const ExperimentConfig& config, double snr_db) {
  config.validate();
  double sum = 0.0;
  for (int t = 0; t < config.n_trials; ++t) {
    const TrialBound b = trial_bound(config, draw_trial_scenario(config, t));
    sum += b.crb_base_deg2 * b.scale_0db / std::pow(10.0, snr_db / 10.0);
  }
  return sum / config.n_trials;
}

SweepResult run_sweep(const ExperimentConfig& config, unsigned threads) {
  config.validate();
  const std::size_t n_snr = config.snr_grid_db.size();
  const std::size_t n_var = config.variants.size();
  const auto n_trials = static_cast<std::size_t>(config.n_trials);

  std::vector<Scenario> scenarios;
  scenarios.reserve(n_trials);
  for (std::size_t t = 0; t < n_trials; ++t)
    scenarios.push_back(draw_trial_scenario(config, static_cast<int>(t)));

  std::vector<TrialBound> bounds(n_trials);
  parallel_for(n_trials, threads, [&](std::size_t t) { bounds[t] = trial_bound(config, scenarios[t]); });

  struct Outcome {
    bool ok = false;
    double sq_err = 0.0;
    int iterations = 0;
  };
  // Index: (snr * n_trials + trial) * n_var + variant. Every variant of a
  // (snr, trial) cell sees the same observation.
  std::vector<Outcome> outcomes(n_snr * n_trials * n_var);
  parallel_for(n_snr * n_trials, threads, [&](std::size_t cell) {
    const std::size_t s = cell / n_trials;
    const std::size_t t = cell % n_trials;
    Scenario sc = scenarios[t];
    sc.covariance = snr_to_noise_scale(sc.signals_unknown, sc.covariance, config.snr_grid_db[s]);
    const CMat y = synthesize(sc, trial_noise_seed(config, static_cast<int>(s), static_cast<int>(t)));
    for (std::size_t v = 0; v < n_var; ++v) {
      const TrialResult r = run_on_data(config, sc, y, config.variants[v]);
      Outcome& o = outcomes[cell * n_var + v];
      o.ok = r.status == TrialStatus::Ok;
      o.sq_err = r.theta_error_deg * r.theta_error_deg;
      o.iterations = r.iterations;
    }
  });

  SweepResult result;
  for (std::size_t s = 0; s < n_snr; ++s) {
    const double snr_lin = std::pow(10.0, config.snr_grid_db[s] / 10.0);
    double crb_sum = 0.0;
    for (std::size_t t = 0; t < n_trials; ++t)
      crb_sum += bounds[t].crb_base_deg2 * bounds[t].scale_0db / snr_lin;
    const double crb = crb_sum / static_cast<double>(n_trials);
    for (std::size_t v = 0; v < n_var; ++v) {
      SweepRow row;
      row.snr_db = config.snr_grid_db[s];
      row.variant = config.variants[v];
      row.crb_deg2 = crb;
      row.n_trials = config.n_trials;
      double sq = 0.0, iters = 0.0;
      int ok = 0;
      for (std::size_t t = 0; t < n_trials; ++t) {
        const Outcome& o = outcomes[(s * n_trials + t) * n_var + v];
        if (o.ok) {
          sq += o.sq_err;
          iters += o.iterations;
          ++ok;
        }
      }
      row.failures = config.n_trials - ok;
      if (ok > 0) {
        row.mse_theta_deg2 = sq / ok;
        row.mean_iterations = iters / ok;
      }
      result.rows.push_back(row);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// CSV

namespace {
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_csv(const SweepResult& result, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const SweepRow& r : result.rows) {
    out << fmt_double(r.snr_db) << ',' << variant_name(r.variant) << ','
        << (r.mse_theta_deg2 ? fmt_double(*r.mse_theta_deg2) : std::string()) << ','
        << fmt_double(r.crb_deg2) << ',' << fmt_double(r.mean_iterations) << ',' << r.n_trials
        << ',' << r.failures << '\n';
  }
}

void emit_csv(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_csv(result, out);
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

SweepResult parse_csv(std::istream& in) {
  SweepResult result;
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw IoError("CSV header mismatch: expected '" + std::string(kCsvHeader) + "'");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw IoError("CSV line " + std::to_string(lineno) + ": expected 7 fields");
    try {
      SweepRow r;
      r.snr_db = to_double(f[0], "snr_db");
      r.variant = parse_variant(f[1]);
      if (!f[2].empty()) r.mse_theta_deg2 = to_double(f[2], "mse_theta_deg2");
      r.crb_deg2 = to_double(f[3], "crb_deg2");
      r.mean_iterations = to_double(f[4], "mean_iterations");
      r.n_trials = static_cast<int>(to_int(f[5], "n_trials"));
      r.failures = static_cast<int>(to_int(f[6], "failures"));
      result.rows.push_back(r);
    } catch (const std::exception& e) {
      throw IoError("CSV line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return result;
}

}  // namespace doacal
