#pragma once

#include "doacal/linalg.hpp"
#include "doacal/signal_model.hpp"

namespace doacal {

/// Whether the per-sensor gains enter the bound as nuisance parameters.
enum class GainModel { Known, Unknown };

/// Fisher information for the mean parameters of the deterministic model,
/// with real parametrization
///   [theta_U (K)] [Re s_U(0), Im s_U(0) (2K)] ... [Re s_U(N-1), Im s_U(N-1)] [Re g, Im g (2M)]
/// where K = D - P. The gain block is absent for GainModel::Known.
struct FisherBlock {
  RMat fim;
  Index num_theta = 0;
  Index num_snapshots = 0;
  Index num_gain_params = 0;

  Index signal_offset(Index t) const noexcept { return num_theta + 2 * num_theta * t; }
  Index gain_offset() const noexcept { return num_theta + 2 * num_theta * num_snapshots; }
  Index dimension() const noexcept { return gain_offset() + num_gain_params; }
};

/// d mu_t / d eta for every real parameter, one M x dim(eta) matrix per
/// snapshot t, in the FisherBlock ordering.
CMat mean_jacobian(const Scenario& scenario, Index snapshot, GainModel gains = GainModel::Unknown);

/// FIM(i, j) = 2 sum_t Re{ (d mu_t/d eta_i)^H Omega^{-1} (d mu_t/d eta_j) }.
FisherBlock fisher_mean_block(const Scenario& scenario, GainModel gains = GainModel::Unknown);

/// Diagonal theta_U entries of FIM^{-1} (radians^2). The per-snapshot signal
/// blocks are eliminated first (they only couple to theta and g), then the
/// gain block. Throws SingularFim when the reduced information is singular.
RVec crb_theta(const FisherBlock& fisher);

/// Convenience: crb_theta(fisher_mean_block(scenario, gains)).
RVec crb_theta(const Scenario& scenario, GainModel gains = GainModel::Unknown);

}  // namespace doacal
