#include "doacal/signal_model.hpp"

#include <cmath>
#include <string>

#include "doacal/error.hpp"

namespace doacal {

ArrayGeometry::ArrayGeometry(std::vector<double> positions_wl, std::vector<Index> subarray_sizes)
    : positions_(std::move(positions_wl)), sizes_(std::move(subarray_sizes)) {
  if (sizes_.empty()) throw InvalidArgument("ArrayGeometry: no subarrays");
  Index total = 0;
  for (Index s : sizes_) {
    if (s < 1) throw InvalidArgument("ArrayGeometry: subarray sizes must be positive");
    total += s;
  }
  if (static_cast<Index>(positions_.size()) != total)
    throw InvalidArgument("ArrayGeometry: " + std::to_string(positions_.size()) +
                          " positions for " + std::to_string(total) + " sensors");
  if (positions_.front() != 0.0) throw InvalidArgument("ArrayGeometry: first position must be 0");
  for (std::size_t k = 1; k < positions_.size(); ++k)
    if (!(positions_[k] > positions_[k - 1]) || !std::isfinite(positions_[k]))
      throw InvalidArgument("ArrayGeometry: positions must be finite and strictly increasing");
}

ArrayGeometry ArrayGeometry::from_subarrays(std::span<const Index> sizes, double intra_spacing_wl,
                                            std::span<const double> gaps_wl) {
  if (sizes.empty()) throw InvalidArgument("ArrayGeometry: no subarrays");
  if (gaps_wl.size() + 1 != sizes.size())
    throw InvalidArgument("ArrayGeometry: need one gap between each pair of subarrays");
  std::vector<double> pos;
  double x = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i > 0) x += gaps_wl[i - 1];
    for (Index k = 0; k < sizes[i]; ++k) {
      if (k > 0) x += intra_spacing_wl;
      pos.push_back(x);
    }
  }
  return ArrayGeometry(std::move(pos), std::vector<Index>(sizes.begin(), sizes.end()));
}

CVec steering_vector(const ArrayGeometry& geometry, double theta) {
  const auto& d = geometry.positions();
  const double s = std::sin(theta);
  CVec a(geometry.num_sensors());
  for (Index k = 0; k < a.size(); ++k)
    a(k) = std::polar(1.0, -2.0 * kPi * d[static_cast<std::size_t>(k)] * s);
  return a;
}

CMat steering_matrix(const ArrayGeometry& geometry, std::span<const double> thetas) {
  if (thetas.empty()) throw InvalidArgument("steering_matrix: no angles");
  return steering_columns(geometry, thetas);
}

CMat steering_columns(const ArrayGeometry& geometry, std::span<const double> thetas) {
  CMat a(geometry.num_sensors(), static_cast<Index>(thetas.size()));
  for (std::size_t l = 0; l < thetas.size(); ++l)
    a.col(static_cast<Index>(l)) = steering_vector(geometry, thetas[l]);
  return a;
}

CVec steering_derivative(const ArrayGeometry& geometry, double theta) {
  const auto& d = geometry.positions();
  const double c = std::cos(theta);
  CVec a = steering_vector(geometry, theta);
  for (Index k = 0; k < a.size(); ++k) a(k) *= -kJ * (2.0 * kPi * d[static_cast<std::size_t>(k)] * c);
  return a;
}

void Scenario::validate() const {
  const Index m = geometry.num_sensors();
  const Index n = signals_unknown.cols();
  auto angle_ok = [](double t) { return std::isfinite(t) && std::abs(t) < kPi / 2; };
  for (double t : theta_known)
    if (!angle_ok(t)) throw InvalidArgument("Scenario: known angle outside (-pi/2, pi/2)");
  for (double t : theta_unknown)
    if (!angle_ok(t)) throw InvalidArgument("Scenario: unknown angle outside (-pi/2, pi/2)");
  if (signals_known.rows() != num_known())
    throw InvalidArgument("Scenario: S_K must have one row per known source");
  if (signals_unknown.rows() != num_unknown())
    throw InvalidArgument("Scenario: S_U must have one row per unknown source");
  if (n < 1 && signals_known.cols() < 1) throw InvalidArgument("Scenario: no snapshots");
  if (num_known() > 0 && num_unknown() > 0 && signals_known.cols() != n)
    throw InvalidArgument("Scenario: S_K and S_U snapshot counts differ");
  if (gains.size() != m) throw InvalidArgument("Scenario: one gain per sensor required");
  if (!(covariance.mask() == geometry.block_mask()))
    throw InvalidArgument("Scenario: covariance blocks do not match the subarray partition");
}

namespace {
Index snapshot_count(const Scenario& sc) {
  return sc.num_unknown() > 0 ? sc.signals_unknown.cols() : sc.signals_known.cols();
}
}  // namespace

CMat model_mean(const Scenario& scenario) {
  scenario.validate();
  const Index m = scenario.geometry.num_sensors();
  CMat mu = CMat::Zero(m, snapshot_count(scenario));
  if (scenario.num_known() > 0)
    mu += steering_columns(scenario.geometry, scenario.theta_known) * scenario.signals_known;
  if (scenario.num_unknown() > 0)
    mu += steering_columns(scenario.geometry, scenario.theta_unknown) * scenario.signals_unknown;
  return scenario.gains.asDiagonal() * mu;
}

SnapshotMatrix synthesize(const Scenario& scenario, std::uint64_t noise_seed) {
  CMat y = model_mean(scenario);
  y += sample_noise(scenario.covariance, y.cols(), noise_seed);
  return y;
}

CVec draw_gains(Rng& rng, Index num_sensors, double min_amplitude) {
  CVec g(num_sensors);
  for (Index i = 0; i < num_sensors; ++i) {
    const double amp = std::max(uniform01(rng), min_amplitude);
    const double phase = 2.0 * kPi * uniform01(rng);
    g(i) = std::polar(amp, phase);
  }
  return g;
}

}  // namespace doacal
