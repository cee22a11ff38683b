#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "doacal/block_cov.hpp"
#include "doacal/crb.hpp"
#include "doacal/estimators.hpp"
#include "doacal/signal_model.hpp"

namespace doacal {

struct ExperimentConfig {
  std::vector<Index> subarray_sizes{4, 3, 2};
  double intra_spacing_wl = 0.5;
  std::vector<double> gap_wl{3.0, 3.5};
  std::vector<double> theta_known_deg{7.0};
  std::vector<double> theta_unknown_deg{15.0};
  Index n_snapshots = 160;
  int n_trials = 300;
  std::vector<double> snr_grid_db{-10, -5, 0, 5, 10, 15, 20, 25};
  /// Calibration-source power over unknown-source power.
  double power_ratio_db = 20.0;
  double rho_real = 0.5;
  double rho_imag = 0.0;
  std::vector<double> subarray_powers{1.0, 1.0, 1.0};
  std::uint64_t master_seed = 20240601;
  int max_iterations = 4;
  double param_tol = 1e-6;
  /// Draw the gains once (trial 0) and reuse them for every trial.
  bool freeze_gains = false;
  bool iml_calibrated_start = true;
  GainModel crb_gains = GainModel::Unknown;
  std::vector<Variant> variants{Variant::Iml, Variant::Miml, Variant::Uncalibrated,
                                Variant::DiagMisspec};

  ArrayGeometry geometry() const;
  /// Unit-power base covariance, before SNR scaling.
  BlockCovariance base_covariance() const;
  EstimatorConfig estimator_config(Variant variant) const;
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

/// Flat `key = value` text, `#` comments. Lists are comma separated; numeric
/// lists also accept `start:step:stop`. Unknown keys raise ConfigError.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);

/// SNR = (sum |s_U|^2 / (N M)) * sum_i 1/[Omega]_{i,i}.
double compute_snr(const CMat& s_unknown, const BlockCovariance& cov);

/// base_cov scaled so that compute_snr equals 10^(snr_db/10).
BlockCovariance snr_to_noise_scale(const CMat& s_unknown, const BlockCovariance& base_cov,
                                   double snr_db);

/// Noise-free part of one Monte-Carlo trial: gains, waveforms and geometry.
/// Depends on (master_seed, trial) only, so every SNR and every variant of
/// a trial sees the same draws.
Scenario draw_trial_scenario(const ExperimentConfig& config, int trial_index);

enum class TrialStatus { Ok, Failed };

struct TrialResult {
  TrialStatus status = TrialStatus::Ok;
  double theta_error_deg = 0.0;  // first unknown source, estimate minus truth
  int iterations = 0;
  std::string message;
  EstimatorState state;
};

/// Noise stream seed for (snr index, trial).
std::uint64_t trial_noise_seed(const ExperimentConfig& config, int snr_index, int trial_index);

/// Runs one variant on one synthesized observation. Estimator exceptions are
/// caught and reported through TrialStatus::Failed.
TrialResult run_trial(const ExperimentConfig& config, const Scenario& scenario,
                      double snr_db, Variant variant, std::uint64_t noise_seed);

/// Same, deriving the scenario and noise seed from the configuration.
TrialResult run_trial(const ExperimentConfig& config, int snr_index, int trial_index,
                      Variant variant);

struct SweepRow {
  double snr_db = 0.0;
  Variant variant = Variant::Miml;
  std::optional<double> mse_theta_deg2;  // empty when every trial failed
  double crb_deg2 = 0.0;
  double mean_iterations = 0.0;
  int n_trials = 0;
  int failures = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
};

/// Mean over trials of the per-trial theta_U CRB (degrees^2) at one SNR.
double mean_crb_deg2(const ExperimentConfig& config, double snr_db);

/// Monte-Carlo sweep over snr_grid_db x variants. Trials are distributed over
/// `threads` workers (0 = hardware concurrency); the result does not depend
/// on the thread count.
SweepResult run_sweep(const ExperimentConfig& config, unsigned threads = 0);

inline constexpr const char* kCsvHeader =
    "snr_db,variant,mse_theta_deg2,crb_deg2,mean_iterations,n_trials,failures";

void write_csv(const SweepResult& result, std::ostream& out);
/// Throws IoError naming the path on failure.
void emit_csv(const SweepResult& result, const std::filesystem::path& path);
/// Inverse of write_csv; throws IoError on a malformed file.
SweepResult parse_csv(std::istream& in);

}  // namespace doacal
