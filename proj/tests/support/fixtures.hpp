#pragma once

// Scenario builders shared by the tests. These use the library's synthesis
// path; the reference values they are compared against come from oracles.hpp.

#include <cstdint>

#include "doacal/block_cov.hpp"
#include "doacal/estimators.hpp"
#include "doacal/rng.hpp"
#include "doacal/signal_model.hpp"

namespace fixture {

using namespace doacal;

inline ArrayGeometry reference_geometry() {
  const std::vector<Index> sizes{4, 3, 2};
  const std::vector<double> gaps{3.0, 3.5};
  return ArrayGeometry::from_subarrays(sizes, 0.5, gaps);
}

struct Options {
  double noise_amplitude = 0.1;  // Omega = amplitude^2 * base
  double power_ratio_db = 20.0;
  Complex rho{0.5, 0.0};
  Index snapshots = 160;
  bool unit_gains = false;
  double theta_known_deg = 7.0;
  double theta_unknown_deg = 15.0;
  double unknown_amplitude = 1.0;
};

struct Instance {
  Scenario scenario;
  CMat y;

  EstimationProblem problem() const {
    return {scenario.geometry, y, scenario.signals_known, scenario.theta_known};
  }
};

inline Instance reference_instance(std::uint64_t seed, const Options& o = {}) {
  Rng rng(mix_seed({seed, 77}));
  const ArrayGeometry g = reference_geometry();
  const std::vector<Index> sizes{4, 3, 2};
  const std::vector<double> pw{1.0, 1.0, 1.0};
  CVec gains = o.unit_gains ? CVec::Ones(9) : draw_gains(rng, 9);
  CMat sk = random_phase(rng, 1, o.snapshots, std::pow(10.0, o.power_ratio_db / 20.0));
  CMat su = random_phase(rng, 1, o.snapshots, o.unknown_amplitude);
  Scenario sc{g,
              {deg_to_rad(o.theta_known_deg)},
              {deg_to_rad(o.theta_unknown_deg)},
              std::move(sk),
              std::move(su),
              std::move(gains),
              build_default_cov(sizes, pw, o.rho).scaled(o.noise_amplitude * o.noise_amplitude)};
  CMat y = synthesize(sc, mix_seed({seed, 78}));
  return {std::move(sc), std::move(y)};
}

inline std::vector<double> all_thetas(const Scenario& sc) {
  std::vector<double> t = sc.theta_known;
  t.insert(t.end(), sc.theta_unknown.begin(), sc.theta_unknown.end());
  return t;
}

inline CMat all_signals(const Scenario& sc) {
  CMat s(sc.num_known() + sc.num_unknown(), sc.signals_unknown.cols());
  s << sc.signals_known, sc.signals_unknown;
  return s;
}


}  // namespace fixture
