// Acceptance checks. Each criterion prints one PASS/FAIL line.
//   acceptance            run every criterion
//   acceptance 3 5        run the listed ones
// Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "doacal/crb.hpp"
#include "doacal/estimators.hpp"
#include "doacal/harness.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace doacal;

namespace {

const std::vector<Index> kSizes{4, 3, 2};

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::span<const double> sp(const RVec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

// 1 -------------------------------------------------------------------------
Verdict trace_identity() {
  std::mt19937_64 rng(101);
  const Index n = 160;
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const double scale = std::pow(10.0, std::uniform_real_distribution<double>(-3.0, 3.0)(rng));
    const CMat v = oracle::randn(rng, 9, n) * scale;
    const BlockCovariance om = update_omega(v, CMat::Zero(9, n), BlockMask(kSizes));
    const double tr = (v.adjoint() * om.to_dense().inverse() * v).trace().real();
    worst = std::max(worst, std::abs(tr - 9.0 * n) / (9.0 * n));
  }
  return {worst <= 1e-8, fmt("max relative error %.3e (tol 1e-8) over 50 instances", worst)};
}

// 2 -------------------------------------------------------------------------
CMat random_block_hermitian(std::mt19937_64& rng) {
  const CMat x = oracle::randn(rng, 9, 9);
  return (x + x.adjoint()).cwiseProduct(oracle::mask(kSizes).cast<Complex>());
}

bool is_pd(const CMat& a) { return Eigen::LLT<CMat>(a).info() == Eigen::Success; }

double perturbation_scale(std::mt19937_64& rng) {
  return std::pow(10.0, std::uniform_real_distribution<double>(-6.0, -1.0)(rng));
}

Verdict conditional_maximizers() {
  std::mt19937_64 rng(202);
  const auto pos = oracle::reference_positions();
  int violations[3] = {0, 0, 0};
  double worst[3] = {-1e300, -1e300, -1e300};  // max of (L_perturbed - L_update) / slack scale
  const int instances = 5, per_instance = 20;  // 100 perturbations per update
  for (int inst = 0; inst < instances; ++inst) {
    const auto in = fixture::reference_instance(2000 + static_cast<std::uint64_t>(inst));
    const Scenario& sc = in.scenario;
    const auto th = fixture::all_thetas(sc);
    const CMat a = oracle::steering(pos, th);
    const CMat om0 = oracle::random_block_pd(rng, kSizes) * 0.05;
    const BlockMask mask(kSizes);

    // Omega given G, theta, S.
    const CMat s_all = fixture::all_signals(sc);
    const CMat mean = sc.gains.asDiagonal() * a * s_all;
    const CMat om_hat =
        update_omega(sc.geometry, in.y, sc.gains, th, s_all, mask).to_dense();
    // Gains given Omega, theta, S.
    const CVec g_hat = update_gains_iml(sc.geometry, in.y, th, s_all, mask_project(om0, mask)).gains;
    // S_U given G, Omega, theta.
    const CMat su_hat = update_signals(sc.geometry, in.y, sc.gains, sc.theta_known, sc.signals_known,
                                       sc.theta_unknown, mask_project(om0, mask));
    const auto ll_su = [&](const CMat& su) {
      CMat s(2, su.cols());
      s << sc.signals_known, su;
      return oracle::log_likelihood(in.y, sc.gains.asDiagonal() * a * s, om0);
    };
    const double l_om = oracle::log_likelihood(in.y, mean, om_hat);
    const double l_g = oracle::log_likelihood(in.y, g_hat.asDiagonal() * a * s_all, om0);
    const double l_s = ll_su(su_hat);

    for (int k = 0; k < per_instance; ++k) {
      CMat om_p;
      do {
        om_p = om_hat + perturbation_scale(rng) * om_hat.norm() * random_block_hermitian(rng);
      } while (!is_pd(om_p));
      const CVec dg = oracle::randn(rng, 9, 1) * perturbation_scale(rng) * g_hat.norm();
      const CMat ds = oracle::randn(rng, 1, su_hat.cols()) * perturbation_scale(rng) * su_hat.norm();
      const double lp[3] = {oracle::log_likelihood(in.y, mean, om_p),
                            oracle::log_likelihood(in.y, (g_hat + dg).asDiagonal() * a * s_all, om0),
                            ll_su(su_hat + ds)};
      const double l0[3] = {l_om, l_g, l_s};
      for (int u = 0; u < 3; ++u) {
        const double slack = 1e-9 * std::max(1.0, std::abs(l0[u]));
        worst[u] = std::max(worst[u], (lp[u] - l0[u]) / slack);
        if (lp[u] > l0[u] + slack) ++violations[u];
      }
    }
  }
  const bool ok = violations[0] == 0 && violations[1] == 0 && violations[2] == 0;
  return {ok, fmt("violations omega %d, gains %d, signals %d of 100 each; "
                  "max gain over update in slack units %.3g / %.3g / %.3g (must be <= 1)",
                  violations[0], violations[1], violations[2], worst[0], worst[1], worst[2])};
}

// 3 -------------------------------------------------------------------------
Verdict gradient_check() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(-1.4, 1.4);
  double worst = 0.0;
  int points = 0;
  while (points < 50) {
    const auto in = fixture::reference_instance(3000 + static_cast<std::uint64_t>(points));
    const BlockCovariance om = mask_project(oracle::random_block_pd(rng, kSizes), BlockMask(kSizes));
    const ConcentratedCost c(in.scenario.geometry, in.y, in.scenario.gains, in.scenario.theta_known,
                             in.scenario.signals_known, om, BlockMask(kSizes));
    const Index k = 1 + points % 2;
    RVec t(k);
    for (Index i = 0; i < k; ++i) t(i) = u(rng);
    const RVec g = cost_gradient(c, sp(t));
    RVec fd(k);
    for (Index i = 0; i < k; ++i) {
      // Richardson-extrapolated central difference.
      const auto cd = [&](double h) {
        RVec p = t, m = t;
        p(i) += h;
        m(i) -= h;
        return (c.value(sp(p)) - c.value(sp(m))) / (2 * h);
      };
      fd(i) = (4.0 * cd(5e-5) - cd(1e-4)) / 3.0;
    }
    worst = std::max(worst, (g - fd).norm() / fd.norm());
    ++points;
  }
  return {worst <= 1e-5, fmt("max relative error %.3e (tol 1e-5) over 50 points", worst)};
}

// 4 -------------------------------------------------------------------------
Verdict noiseless_consistency() {
  fixture::Options o;
  o.noise_amplitude = 1e-12;
  double th_err[2] = {0, 0}, g_err[2] = {0, 0};
  int failures[2] = {0, 0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = fixture::reference_instance(4000 + seed, o);
    EstimatorConfig cfg;
    for (int v = 0; v < 2; ++v) {
      cfg.variant = v == 0 ? Variant::Miml : Variant::Iml;
      try {
        const EstimatorState st = v == 0 ? run_miml(in.problem(), cfg) : run_iml(in.problem(), cfg);
        th_err[v] = std::max(th_err[v], std::abs(rad_to_deg(st.theta_u(0)) - 15.0));
        g_err[v] = std::max(g_err[v], (st.gains - in.scenario.gains).norm() / in.scenario.gains.norm());
      } catch (const std::exception&) {
        ++failures[v];
      }
    }
  }
  const bool ok = failures[0] == 0 && failures[1] == 0 && th_err[0] <= 1e-3 && th_err[1] <= 1e-3 &&
                  g_err[0] <= 1e-6 && g_err[1] <= 1e-6;
  return {ok, fmt("miml: max |dtheta| %.3e deg, max gain rel err %.3e, failures %d; "
                  "iml: %.3e deg, %.3e, failures %d (tol 1e-3 deg, 1e-6)",
                  th_err[0], g_err[0], failures[0], th_err[1], g_err[1], failures[1])};
}

// 5 -------------------------------------------------------------------------
Verdict brute_force_oracle() {
  ExperimentConfig cfg;
  const auto pos = oracle::reference_positions();
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Scenario base = draw_trial_scenario(cfg, trial);
    Scenario sc = base;
    sc.covariance = snr_to_noise_scale(sc.signals_unknown, cfg.base_covariance(), 10.0);
    const CMat y = synthesize(sc, mix_seed({505, static_cast<std::uint64_t>(trial)}));
    const EstimationProblem prob{sc.geometry, y, sc.signals_known, sc.theta_known};
    const EstimatorConfig ec = cfg.estimator_config(Variant::Miml);
    const EstimatorState st = run_miml(prob, ec);
    const ConcentratedCost cost(sc.geometry, y, st.gains, sc.theta_known, sc.signals_known, st.omega,
                                BlockMask(kSizes));
    const RVec init = grid_initial_theta(cost, 1, sc.theta_known, ec);
    const ThetaSearchResult r = optimize_theta(cost, init, ec);
    const CMat om = st.omega.to_dense();
    const auto f = [&](double t) {
      return oracle::concentrated_cost(pos, kSizes, y, st.gains, sc.theta_known, sc.signals_known, {t},
                                       om);
    };
    // The grid skips the known direction just like the estimator does.
    const double lo = deg_to_rad(-89.0), hi = deg_to_rad(89.0), step = deg_to_rad(0.01);
    const double tk = sc.theta_known[0], ex = deg_to_rad(1.0);
    const double left = oracle::brute_force_minimum(f, lo, tk - ex, step);
    const double right = oracle::brute_force_minimum(f, tk + ex, hi, step);
    const double best = f(left) <= f(right) ? left : right;
    worst = std::max(worst, std::abs(rad_to_deg(r.theta(0) - best)));
  }
  return {worst <= 0.02, fmt("max |optimize_theta - brute force| %.3e deg (tol 0.02) over 20 instances", worst)};
}

// 6, 7 ----------------------------------------------------------------------
std::map<std::pair<double, Variant>, SweepRow> index_rows(const SweepResult& r) {
  std::map<std::pair<double, Variant>, SweepRow> m;
  for (const SweepRow& row : r.rows) m[{row.snr_db, row.variant}] = row;
  return m;
}

double mse_or_inf(const SweepRow& r) {
  return r.mse_theta_deg2 ? *r.mse_theta_deg2 : std::numeric_limits<double>::infinity();
}

Verdict snr_sweep_trend() {
  ExperimentConfig cfg;
  cfg.n_trials = 100;
  cfg.variants = {Variant::Iml, Variant::Miml, Variant::Uncalibrated};
  const SweepResult res = run_sweep(cfg);
  auto rows = index_rows(res);
  int inversions = 0;
  double prev = std::numeric_limits<double>::infinity();
  std::string series;
  double it_miml = 0, it_iml = 0;
  for (double s : cfg.snr_grid_db) {
    const double m = mse_or_inf(rows[{s, Variant::Miml}]);
    if (m > prev) ++inversions;
    prev = m;
    series += fmt("%s%.3g", series.empty() ? "" : " ", m);
    it_miml += rows[{s, Variant::Miml}].mean_iterations;
    it_iml += rows[{s, Variant::Iml}].mean_iterations;
  }
  it_miml /= static_cast<double>(cfg.snr_grid_db.size());
  it_iml /= static_cast<double>(cfg.snr_grid_db.size());
  const double top = cfg.snr_grid_db.back();
  const SweepRow& m25 = rows[{top, Variant::Miml}];
  const double ratio = mse_or_inf(m25) / m25.crb_deg2;
  const double floor_ratio = mse_or_inf(rows[{top, Variant::Uncalibrated}]) / mse_or_inf(m25);
  const bool a = inversions <= 1, b = ratio <= 3.0, c = floor_ratio >= 5.0,
             d = it_miml <= 3.0 && it_iml >= it_miml;
  return {a && b && c && d,
          fmt("(a) %s miml mse [%s] inversions %d (<= 1); (b) %s mse/crb at %g dB %.3g (<= 3); "
              "(c) %s uncal/miml %.3g (>= 5); (d) %s mean iterations miml %.2f (<= 3) iml %.2f",
              a ? "ok" : "FAIL", series.c_str(), inversions, b ? "ok" : "FAIL", top, ratio,
              c ? "ok" : "FAIL", floor_ratio, d ? "ok" : "FAIL", it_miml, it_iml)};
}

Verdict diagonal_model_trend() {
  ExperimentConfig cfg;
  cfg.n_trials = 100;
  cfg.variants = {Variant::Miml, Variant::DiagMisspec};
  auto rows = index_rows(run_sweep(cfg));
  int bad = 0;
  std::string detail;
  for (double s : cfg.snr_grid_db) {
    if (s < 0.0) continue;
    const double block = mse_or_inf(rows[{s, Variant::Miml}]);
    const double diag = mse_or_inf(rows[{s, Variant::DiagMisspec}]);
    if (diag < block) ++bad;
    detail += fmt("%s%g dB %.3g/%.3g", detail.empty() ? "" : ", ", s, diag, block);
  }
  return {bad == 0, fmt("diag/block mse: %s; %d grid points with diag below block", detail.c_str(), bad)};
}

// 8 -------------------------------------------------------------------------
Verdict crb_validation() {
  fixture::Options o;
  o.snapshots = 4;
  const Scenario sc = fixture::reference_instance(808, o).scenario;
  const FisherBlock fb = fisher_mean_block(sc);
  const double h = 1e-6;
  double jac = 0.0;
  for (Index t = 0; t < 4; ++t) {
    const CMat j = mean_jacobian(sc, t);
    for (Index col = 0; col < j.cols(); ++col) {
      Scenario p = sc, m = sc;
      if (col < fb.num_theta) {
        p.theta_unknown[0] += h;
        m.theta_unknown[0] -= h;
      } else if (col < fb.gain_offset()) {
        const Index k = col - fb.num_theta;
        const Complex step = (k % 2 == 0) ? Complex(h, 0) : Complex(0, h);
        p.signals_unknown(0, k / 2) += step;
        m.signals_unknown(0, k / 2) -= step;
      } else {
        const Index k = col - fb.gain_offset();
        const Complex step = (k < 9) ? Complex(h, 0) : Complex(0, h);
        p.gains(k % 9) += step;
        m.gains(k % 9) -= step;
      }
      const CVec fd = (model_mean(p).col(t) - model_mean(m).col(t)) / (2 * h);
      if (fd.norm() > 0) jac = std::max(jac, (j.col(col) - fd).norm() / fd.norm());
      else jac = std::max(jac, j.col(col).norm());
    }
  }

  fixture::Options w;
  w.unit_gains = true;
  w.snapshots = 64;
  Scenario white = fixture::reference_instance(809, w).scenario;
  white.covariance = BlockCovariance::identity(BlockMask(kSizes)).scaled(0.2);
  const double ref = oracle::classical_crb(oracle::reference_positions(), white.theta_unknown[0],
                                           white.signals_unknown.row(0).transpose(), 0.2);
  const double classical = std::abs(crb_theta(white, GainModel::Known)(0) - ref) / ref;

  Scenario twice = white;
  for (CMat* s : {&twice.signals_known, &twice.signals_unknown}) {
    const CMat one = *s;
    s->resize(one.rows(), 2 * one.cols());
    *s << one, one;
  }
  double halving = 0.0;
  for (GainModel gm : {GainModel::Known, GainModel::Unknown}) {
    const double c1 = crb_theta(white, gm)(0), c2 = crb_theta(twice, gm)(0);
    halving = std::max(halving, std::abs(c2 - 0.5 * c1) / (0.5 * c1));
  }
  const bool ok = jac <= 1e-6 && classical <= 1e-8 && halving <= 1e-6;
  return {ok, fmt("jacobian rel err %.3e (1e-6); classical rel err %.3e (1e-8); N doubling rel err %.3e (1e-6)",
                  jac, classical, halving)};
}

// 9 -------------------------------------------------------------------------
Verdict determinism() {
  ExperimentConfig cfg;
  cfg.n_trials = 8;
  const auto csv = [&](unsigned threads) {
    std::ostringstream os;
    write_csv(run_sweep(cfg, threads), os);
    return os.str();
  };
  const std::string a = csv(1), b = csv(1), c = csv(3);
  return {a == b && a == c && !a.empty(),
          fmt("%zu bytes; repeat run %s, 1 vs 3 threads %s", a.size(), a == b ? "identical" : "DIFFERS",
              a == c ? "identical" : "DIFFERS")};
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, Criterion> all{
      {1, {"trace identity", 1.0, trace_identity}},
      {2, {"conditional maximizers", 10.0, conditional_maximizers}},
      {3, {"gradient check", 10.0, gradient_check}},
      {4, {"noiseless consistency", 30.0, noiseless_consistency}},
      {5, {"brute-force oracle", 60.0, brute_force_oracle}},
      {6, {"snr sweep trend", 600.0, snr_sweep_trend}},
      {7, {"diagonal misspecification trend", 600.0, diagonal_model_trend}},
      {8, {"crb validation", 30.0, crb_validation}},
      {9, {"determinism", 0.0, determinism}},
  };
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (const auto& [k, _] : all) which.push_back(k);

  int failed = 0;
  for (int k : which) {
    const auto it = all.find(k);
    if (it == all.end()) {
      std::printf("FAIL [%d] no such criterion\n", k);
      ++failed;
      continue;
    }
    const Criterion& c = it->second;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s <= 0.0 || secs <= c.budget_s;
    const bool pass = v.pass && in_time;
    std::printf("%s [%d] %s: %s; %.2f s%s\n", pass ? "PASS" : "FAIL", k, c.name, v.detail.c_str(), secs,
                c.budget_s > 0.0 ? fmt(" (budget %g s%s)", c.budget_s, in_time ? "" : ", EXCEEDED").c_str()
                                 : "");
    std::fflush(stdout);
    if (!pass) ++failed;
  }
  return failed;
}
