#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "doacal/block_cov.hpp"
#include "doacal/linalg.hpp"
#include "doacal/signal_model.hpp"

namespace doacal {

/// Joint calibration / DOA estimation schemes.
///   Iml          all four updates (theta_U, S_U, Omega, G) in one loop.
///   Miml         calibrate (G, Omega) on the known sources, then theta_U and S_U once.
///   Uncalibrated Iml with G held at the identity.
///   DiagMisspec  Miml with the covariance mask forced to the diagonal.
enum class Variant { Iml, Miml, Uncalibrated, DiagMisspec };

std::string_view variant_name(Variant v) noexcept;
/// Accepts "iml", "miml", "uncal", "diag"; throws InvalidArgument otherwise.
Variant parse_variant(std::string_view name);

struct EstimatorConfig {
  int max_iterations = 4;
  /// Relative change of the stacked parameter vector below which the loop stops.
  double param_tol = 1e-6;
  int newton_max_steps = 30;
  double newton_grad_tol = 1e-7;
  double theta_min = deg_to_rad(-89.0);
  double theta_max = deg_to_rad(89.0);
  /// Coarse scan used to seed the Newton search.
  double grid_step = deg_to_rad(0.5);
  /// Grid points this close to a known (or already placed) source are skipped.
  double grid_exclusion = deg_to_rad(1.0);
  Index num_unknown = 1;
  /// Iml only: seed G from the calibration sources (Omega = I) instead of G = I.
  bool iml_calibrated_start = true;
  BlockMask mask;
  Variant variant = Variant::Miml;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double loglik = 0.0;
  double param_change = 0.0;
  RVec theta_u;  // empty while Miml is still calibrating
};

struct EstimatorDiagnostics {
  bool gain_rank_deficient = false;
  bool omega_repaired = false;
  int newton_steps = 0;
};

struct EstimatorState {
  RVec theta_u;
  CMat s_u;
  BlockCovariance omega;
  CVec gains;
  std::vector<double> loglik_trace;
  std::vector<IterationRecord> history;
  int iterations_used = 0;
  EstimatorDiagnostics diagnostics;
};

// ---------------------------------------------------------------------------
// Closed-form conditional updates

/// -N log det(Omega) - tr{V^H Omega^{-1} V}, V = Y - model. Per-block solves.
double log_likelihood(const CMat& y, const CMat& model, const BlockCovariance& omega,
                      PdPolicy policy = PdPolicy::Strict);

/// Same with model = G A(theta) S.
double log_likelihood(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                      std::span<const double> theta_all, const CMat& s_all,
                      const BlockCovariance& omega, PdPolicy policy = PdPolicy::Strict);

/// (1/N) (V V^H) (.) E with V = Y - model.
BlockCovariance update_omega(const CMat& y, const CMat& model, const BlockMask& mask);

BlockCovariance update_omega(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                             std::span<const double> theta_all, const CMat& s_all,
                             const BlockMask& mask);

/// Omega estimate from the calibration-source residual V_K = Y - G A(theta_K) S_K.
BlockCovariance update_omega_miml(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                                  std::span<const double> theta_known, const CMat& s_known,
                                  const BlockMask& mask);

struct GainUpdate {
  CVec gains;
  Index rank = 0;
  bool rank_deficient = false;
};

/// Stationary point of the log-likelihood in g for a fixed signal part
/// B (= A S) and Omega: g = Z3^+ conj(diag(Z1)), Z1 = B Y^H Omega^{-1},
/// [Z3]_{l,i} = conj([Z2]_{l,i}) conj([Omega^{-1}]_{i,l}), Z2 = B B^H.
GainUpdate update_gains(const CMat& y, const CMat& signal_part, const BlockCovariance& omega);

GainUpdate update_gains_iml(const ArrayGeometry& geometry, const CMat& y,
                            std::span<const double> theta_all, const CMat& s_all,
                            const BlockCovariance& omega);

GainUpdate update_gains_miml(const ArrayGeometry& geometry, const CMat& y,
                             std::span<const double> theta_known, const CMat& s_known,
                             const BlockCovariance& omega);

/// Weighted least-squares S_U for whitened data
/// Ybar = Omega^{-1/2} Y - Abar(theta_K) S_K. Throws RankDeficient when
/// Abar(theta_U) loses column rank.
CMat update_signals(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                    std::span<const double> theta_known, const CMat& s_known,
                    std::span<const double> theta_unknown, const BlockCovariance& omega);

// ---------------------------------------------------------------------------
// Concentrated cost F(theta_U) = log det Z, Z = (Omega^{1/2} Pperp R Pperp Omega^{1/2}) (.) E

class ConcentratedCost {
 public:
  ConcentratedCost(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                   std::span<const double> theta_known, const CMat& s_known,
                   const BlockCovariance& omega, const BlockMask& mask);

  struct Evaluation {
    double value = 0.0;
    RVec gradient;  // empty unless requested, or when the value is not finite
  };

  /// Returns kInfeasible when a block of Z is not positive definite.
  double value(std::span<const double> theta_u) const;
  RVec gradient(std::span<const double> theta_u) const;
  Evaluation evaluate(std::span<const double> theta_u, bool with_gradient) const;

  const BlockMask& mask() const noexcept { return mask_; }

  static constexpr double kInfeasible = std::numeric_limits<double>::infinity();

 private:
  const ArrayGeometry* geometry_;
  CVec gains_;
  CovarianceFactor omega_factor_;
  BlockMask mask_;
  // Square-root factor of Rhat = (1/N) Ybar Ybar^H = L L^H, so Z blocks are
  // formed as X_b X_b^H and never lose the small residual to cancellation.
  CMat l_;
};

double concentrated_cost(const ConcentratedCost& cost, std::span<const double> theta_u);
RVec cost_gradient(const ConcentratedCost& cost, std::span<const double> theta_u);

struct ThetaSearchResult {
  RVec theta;
  double value = 0.0;
  int steps = 0;
  bool converged = false;
};

/// Safeguarded Newton search started at theta_init. The Hessian is a
/// central difference of the analytic gradient; when it is not positive
/// definite, or the Newton step does not lower F, the step falls back to
/// the negative gradient with up to 30 halvings. Never returns a point
/// with F above F(theta_init).
ThetaSearchResult optimize_theta(const ConcentratedCost& cost, const RVec& theta_init,
                                 const EstimatorConfig& config);

/// Coarse scan over [theta_min, theta_max] placing unknown sources one at a
/// time (greedy), skipping grid points near known or already placed sources.
RVec grid_initial_theta(const ConcentratedCost& cost, Index num_unknown,
                        std::span<const double> theta_known, const EstimatorConfig& config);

// ---------------------------------------------------------------------------
// Full schemes

/// Inputs common to all schemes.
struct EstimationProblem {
  const ArrayGeometry& geometry;
  const CMat& y;
  const CMat& s_known;
  std::span<const double> theta_known;
};

EstimatorState run_iml(const EstimationProblem& problem, const EstimatorConfig& config);
EstimatorState run_miml(const EstimationProblem& problem, const EstimatorConfig& config);

/// Dispatches on config.variant (DiagMisspec swaps in the diagonal mask).
EstimatorState estimate(const EstimationProblem& problem, const EstimatorConfig& config);

}  // namespace doacal
