#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "doacal/block_cov.hpp"
#include "doacal/linalg.hpp"
#include "doacal/rng.hpp"

namespace doacal {

/// Linear (possibly non-uniform) array. Sensor offsets are measured from the
/// first sensor in wavelengths; consecutive sensors are grouped into
/// subarrays.
class ArrayGeometry {
 public:
  ArrayGeometry(std::vector<double> positions_wl, std::vector<Index> subarray_sizes);

  /// Subarrays of uniformly spaced sensors. gaps_wl[i] is the distance from
  /// the last sensor of subarray i to the first sensor of subarray i + 1.
  static ArrayGeometry from_subarrays(std::span<const Index> sizes, double intra_spacing_wl,
                                      std::span<const double> gaps_wl);

  Index num_sensors() const noexcept { return static_cast<Index>(positions_.size()); }
  Index num_subarrays() const noexcept { return static_cast<Index>(sizes_.size()); }
  const std::vector<double>& positions() const noexcept { return positions_; }
  const std::vector<Index>& subarray_sizes() const noexcept { return sizes_; }
  BlockMask block_mask() const { return BlockMask(sizes_); }

 private:
  std::vector<double> positions_;
  std::vector<Index> sizes_;
};

/// a(theta), entry k = exp(-j 2 pi d_k sin(theta)).
CVec steering_vector(const ArrayGeometry& geometry, double theta);

/// [a(theta_1), ..., a(theta_D)]; throws InvalidArgument on empty input.
CMat steering_matrix(const ArrayGeometry& geometry, std::span<const double> thetas);

/// d a / d theta.
CVec steering_derivative(const ArrayGeometry& geometry, double theta);

/// Ground truth for synthesis. The first P sources are calibration sources
/// with known direction and waveform.
struct Scenario {
  ArrayGeometry geometry;
  std::vector<double> theta_known;    // P angles, radians
  std::vector<double> theta_unknown;  // D - P angles, radians
  CMat signals_known;                 // P x N
  CMat signals_unknown;               // (D - P) x N
  CVec gains;                         // M
  BlockCovariance covariance;

  Index num_snapshots() const noexcept { return signals_unknown.cols(); }
  Index num_known() const noexcept { return static_cast<Index>(theta_known.size()); }
  Index num_unknown() const noexcept { return static_cast<Index>(theta_unknown.size()); }

  /// Throws InvalidArgument when dimensions, angles or the covariance
  /// structure disagree.
  void validate() const;
};

using SnapshotMatrix = CMat;

/// Steering columns for a possibly empty angle list (M x 0 when empty).
CMat steering_columns(const ArrayGeometry& geometry, std::span<const double> thetas);

/// G A(theta_K) S_K + G A(theta_U) S_U.
CMat model_mean(const Scenario& scenario);

/// Y = model_mean + N, noise columns i.i.d. CN(0, Omega). Reproducible for a
/// fixed seed.
SnapshotMatrix synthesize(const Scenario& scenario, std::uint64_t noise_seed);

/// Per-sensor gains: amplitude uniform on [0, 1] clamped below at
/// min_amplitude, phase uniform on [0, 2 pi).
CVec draw_gains(Rng& rng, Index num_sensors, double min_amplitude = 0.05);

}  // namespace doacal
