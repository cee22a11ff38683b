// doa-calib: Monte-Carlo driver for the calibration / DOA estimators.

#include <bit>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "doacal/error.hpp"
#include "doacal/harness.hpp"
#include "doacal/rng.hpp"

using namespace doacal;

namespace {

ExperimentConfig load_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

std::vector<Variant> parse_variant_list(const std::string& list) {
  std::vector<Variant> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_variant(item));
  if (out.empty()) throw InvalidArgument("--variants is empty");
  return out;
}

std::uint64_t noise_seed_for(const ExperimentConfig& c, double snr_db, int trial) {
  for (std::size_t s = 0; s < c.snr_grid_db.size(); ++s)
    if (c.snr_grid_db[s] == snr_db) return trial_noise_seed(c, static_cast<int>(s), trial);
  return mix_seed({c.master_seed, 3, std::bit_cast<std::uint64_t>(snr_db),
                   static_cast<std::uint64_t>(trial)});
}

void print_vector_deg(const RVec& v) {
  for (Index i = 0; i < v.size(); ++i) std::printf("%s%.9f", i ? " " : "", rad_to_deg(v(i)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint array calibration and DOA estimation simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path = "results.csv";
  std::int64_t seed = -1;
  int trials = 0;
  std::string variants;
  unsigned threads = 0;
  auto* sweep = app.add_subcommand("sweep", "Monte-Carlo SNR sweep, CSV output");
  sweep->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", out_path, "Output CSV path");
  sweep->add_option("--seed", seed, "Override master_seed")->check(CLI::NonNegativeNumber);
  sweep->add_option("--trials", trials, "Override n_trials")->check(CLI::PositiveNumber);
  sweep->add_option("--variants", variants, "Comma list of iml,miml,uncal,diag");
  sweep->add_option("--threads", threads, "Worker threads (0 = all cores)");

  double snr_db = 0.0;
  std::string variant = "miml";
  int trial_seed = 0;
  bool verbose = false;
  auto* trial = app.add_subcommand("trial", "Run one trial and report the estimate");
  trial->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  trial->add_option("--snr-db", snr_db, "SNR in dB")->required();
  trial->add_option("--variant", variant, "iml, miml, uncal or diag")->required();
  trial->add_option("--seed", trial_seed, "Trial index")->required()->check(CLI::NonNegativeNumber);
  trial->add_flag("--verbose", verbose, "Print per-iteration log-likelihood and estimates");

  auto* crb = app.add_subcommand("crb", "Print the mean theta CRB (deg^2) per SNR grid point");
  crb->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load_or_default(config_path);
    if (*sweep) {
      if (seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(seed);
      if (trials > 0) cfg.n_trials = trials;
      if (!variants.empty()) cfg.variants = parse_variant_list(variants);
      const SweepResult res = run_sweep(cfg, threads);
      emit_csv(res, out_path);
      for (const SweepRow& r : res.rows) {
        std::fprintf(stderr, "snr %6.1f dB  %-5s  mse %-12s crb %.4g  iters %.2f  failures %d/%d\n",
                     r.snr_db, std::string(variant_name(r.variant)).c_str(),
                     r.mse_theta_deg2 ? std::to_string(*r.mse_theta_deg2).c_str() : "missing",
                     r.crb_deg2, r.mean_iterations, r.failures, r.n_trials);
      }
    } else if (*trial) {
      const Variant v = parse_variant(variant);
      const Scenario sc = draw_trial_scenario(cfg, trial_seed);
      const TrialResult r = run_trial(cfg, sc, snr_db, v, noise_seed_for(cfg, snr_db, trial_seed));
      if (verbose) {
        for (const IterationRecord& rec : r.state.history) {
          std::printf("iter %d  loglik %.12g  change %.3e  theta_deg ", rec.iteration, rec.loglik,
                      rec.param_change);
          if (rec.theta_u.size() > 0) print_vector_deg(rec.theta_u);
          else std::printf("-");
          std::printf("\n");
        }
      }
      if (r.status == TrialStatus::Failed) {
        std::printf("status failed: %s\n", r.message.c_str());
        return 2;
      }
      std::printf("theta_deg ");
      print_vector_deg(r.state.theta_u);
      std::printf("\nerror_deg %.9g\niterations %d\n", r.theta_error_deg, r.iterations);
      if (verbose) {
        const double gerr = (r.state.gains - sc.gains).norm() / sc.gains.norm();
        std::printf("gain_rel_error %.6e\n", gerr);
      }
    } else if (*crb) {
      for (double s : cfg.snr_grid_db) std::printf("%.17g,%.17g\n", s, mean_crb_deg2(cfg, s));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "doa-calib: %s\n", e.what());
    return 1;
  }
  return 0;
}
