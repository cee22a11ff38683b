#include <benchmark/benchmark.h>

#include "doacal/crb.hpp"
#include "doacal/estimators.hpp"
#include "doacal/harness.hpp"

using namespace doacal;

namespace {

struct Setup {
  ExperimentConfig cfg;
  Scenario sc;
  CMat y;

  explicit Setup(double snr_db) : sc(draw_trial_scenario(cfg, 0)) {
    sc.covariance = snr_to_noise_scale(sc.signals_unknown, cfg.base_covariance(), snr_db);
    y = synthesize(sc, 1);
  }
  EstimationProblem problem() const { return {sc.geometry, y, sc.signals_known, sc.theta_known}; }
};

const Setup& setup() {
  static const Setup s(10.0);
  return s;
}

void BM_CostValue(benchmark::State& st) {
  const Setup& s = setup();
  const ConcentratedCost c(s.sc.geometry, s.y, s.sc.gains, s.sc.theta_known, s.sc.signals_known,
                           s.sc.covariance, s.sc.geometry.block_mask());
  const std::vector<double> t{0.25};
  for (auto _ : st) benchmark::DoNotOptimize(c.value(t));
}
BENCHMARK(BM_CostValue);

void BM_CostValueAndGradient(benchmark::State& st) {
  const Setup& s = setup();
  const ConcentratedCost c(s.sc.geometry, s.y, s.sc.gains, s.sc.theta_known, s.sc.signals_known,
                           s.sc.covariance, s.sc.geometry.block_mask());
  const std::vector<double> t{0.25};
  for (auto _ : st) benchmark::DoNotOptimize(c.evaluate(t, true));
}
BENCHMARK(BM_CostValueAndGradient);

void BM_UpdateGainsMiml(benchmark::State& st) {
  const Setup& s = setup();
  for (auto _ : st)
    benchmark::DoNotOptimize(
        update_gains_miml(s.sc.geometry, s.y, s.sc.theta_known, s.sc.signals_known, s.sc.covariance));
}
BENCHMARK(BM_UpdateGainsMiml);

void BM_Estimate(benchmark::State& st) {
  const Setup& s = setup();
  EstimatorConfig cfg = s.cfg.estimator_config(static_cast<Variant>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(estimate(s.problem(), cfg));
  st.SetLabel(std::string(variant_name(cfg.variant)));
}
BENCHMARK(BM_Estimate)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_CrbTheta(benchmark::State& st) {
  const Setup& s = setup();
  for (auto _ : st) benchmark::DoNotOptimize(crb_theta(s.sc));
}
BENCHMARK(BM_CrbTheta)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
