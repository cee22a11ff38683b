#include "doacal/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "doacal/error.hpp"

namespace doacal {

std::string_view variant_name(Variant v) noexcept {
  switch (v) {
    case Variant::Iml: return "iml";
    case Variant::Miml: return "miml";
    case Variant::Uncalibrated: return "uncal";
    case Variant::DiagMisspec: return "diag";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "iml") return Variant::Iml;
  if (name == "miml") return Variant::Miml;
  if (name == "uncal") return Variant::Uncalibrated;
  if (name == "diag") return Variant::DiagMisspec;
  throw InvalidArgument("unknown variant '" + std::string(name) + "' (iml, miml, uncal, diag)");
}

void EstimatorConfig::validate() const {
  if (max_iterations < 1) throw InvalidArgument("EstimatorConfig: max_iterations must be >= 1");
  if (!(param_tol > 0.0)) throw InvalidArgument("EstimatorConfig: param_tol must be > 0");
  if (newton_max_steps < 1) throw InvalidArgument("EstimatorConfig: newton_max_steps must be >= 1");
  if (!(newton_grad_tol > 0.0)) throw InvalidArgument("EstimatorConfig: newton_grad_tol must be > 0");
  if (!(theta_min < theta_max) || theta_min <= -kPi / 2 || theta_max >= kPi / 2)
    throw InvalidArgument("EstimatorConfig: theta bounds must be a nonempty subset of (-pi/2, pi/2)");
  if (!(grid_step > 0.0)) throw InvalidArgument("EstimatorConfig: grid_step must be > 0");
  if (grid_exclusion < 0.0) throw InvalidArgument("EstimatorConfig: grid_exclusion must be >= 0");
  if (num_unknown < 1) throw InvalidArgument("EstimatorConfig: num_unknown must be >= 1");
}

namespace {

constexpr double kPinvTol = 1e-10;

std::vector<double> concat(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

CMat stack_rows(const CMat& top, const CMat& bottom) {
  if (top.rows() == 0) return bottom;
  if (bottom.rows() == 0) return top;
  CMat out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

/// G A(theta) S, tolerating an empty source list.
CMat model(const ArrayGeometry& geometry, const CVec& gains, std::span<const double> thetas,
           const CMat& s, Index n) {
  if (thetas.empty()) return CMat::Zero(geometry.num_sensors(), n);
  if (s.rows() != static_cast<Index>(thetas.size()) || s.cols() != n)
    throw InvalidArgument("signal matrix does not match the angle list or snapshot count");
  return gains.asDiagonal() * (steering_columns(geometry, thetas) * s);
}

void check_data(const ArrayGeometry& geometry, const CMat& y) {
  if (y.rows() != geometry.num_sensors())
    throw InvalidArgument("observation has " + std::to_string(y.rows()) + " rows for " +
                          std::to_string(geometry.num_sensors()) + " sensors");
  if (y.cols() < 1) throw InvalidArgument("observation has no snapshots");
}

}  // namespace

// ---------------------------------------------------------------------------

double log_likelihood(const CMat& y, const CMat& model_mean, const BlockCovariance& omega,
                      PdPolicy policy) {
  if (y.rows() != omega.dimension() || model_mean.rows() != y.rows() ||
      model_mean.cols() != y.cols())
    throw InvalidArgument("log_likelihood: dimension mismatch");
  const CovarianceFactor f = factor(omega, policy);
  const CMat v = y - model_mean;
  const double quad = (v.conjugate().cwiseProduct(f.solve(v))).sum().real();
  return -static_cast<double>(y.cols()) * f.log_det() - quad;
}

double log_likelihood(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                      std::span<const double> theta_all, const CMat& s_all,
                      const BlockCovariance& omega, PdPolicy policy) {
  check_data(geometry, y);
  return log_likelihood(y, model(geometry, gains, theta_all, s_all, y.cols()), omega, policy);
}

BlockCovariance update_omega(const CMat& y, const CMat& model_mean, const BlockMask& mask) {
  if (model_mean.rows() != y.rows() || model_mean.cols() != y.cols())
    throw InvalidArgument("update_omega: dimension mismatch");
  const CMat v = y - model_mean;
  return mask_project(v * v.adjoint() / static_cast<double>(y.cols()), mask);
}

BlockCovariance update_omega(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                             std::span<const double> theta_all, const CMat& s_all,
                             const BlockMask& mask) {
  check_data(geometry, y);
  return update_omega(y, model(geometry, gains, theta_all, s_all, y.cols()), mask);
}

BlockCovariance update_omega_miml(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                                  std::span<const double> theta_known, const CMat& s_known,
                                  const BlockMask& mask) {
  return update_omega(geometry, y, gains, theta_known, s_known, mask);
}

GainUpdate update_gains(const CMat& y, const CMat& signal_part, const BlockCovariance& omega) {
  if (signal_part.rows() != y.rows() || signal_part.cols() != y.cols() ||
      omega.dimension() != y.rows())
    throw InvalidArgument("update_gains: dimension mismatch");
  const CovarianceFactor f = factor(omega, PdPolicy::Repair);
  const BlockMask& mask = omega.mask();
  // conj(z_i) with z_i = [B Y^H W]_ii = sum_t B_it conj([W Y]_it).
  const CMat wy = f.solve(y);
  const CVec rhs = (signal_part.conjugate().cwiseProduct(wy)).rowwise().sum();
  const CMat bb = signal_part * signal_part.adjoint();

  // The system matrix inherits the block structure of W; decompose each block
  // but apply one global singular-value cut.
  std::vector<Eigen::SelfAdjointEigenSolver<CMat>> eig(static_cast<std::size_t>(mask.num_blocks()));
  double lambda_max = 0.0;
  for (Index b = 0; b < mask.num_blocks(); ++b) {
    const Index o = mask.offset(b);
    const Index s = mask.size(b);
    CMat h = f.inverse_block(b).cwiseProduct(bb.block(o, o, s, s).conjugate());
    h = 0.5 * (h + h.adjoint()).eval();
    eig[static_cast<std::size_t>(b)].compute(h);
    lambda_max = std::max(lambda_max, eig[static_cast<std::size_t>(b)].eigenvalues().cwiseAbs().maxCoeff());
  }
  const double cut = kPinvTol * lambda_max;
  GainUpdate out;
  out.gains = CVec::Zero(y.rows());
  for (Index b = 0; b < mask.num_blocks(); ++b) {
    const auto& e = eig[static_cast<std::size_t>(b)];
    const Index o = mask.offset(b);
    const Index s = mask.size(b);
    RVec winv = RVec::Zero(s);
    for (Index i = 0; i < s; ++i) {
      if (lambda_max > 0.0 && std::abs(e.eigenvalues()(i)) > cut) {
        winv(i) = 1.0 / e.eigenvalues()(i);
        ++out.rank;
      }
    }
    out.gains.segment(o, s) =
        e.eigenvectors() * (winv.asDiagonal() * (e.eigenvectors().adjoint() * rhs.segment(o, s)));
  }
  out.rank_deficient = out.rank < y.rows();
  return out;
}

GainUpdate update_gains_iml(const ArrayGeometry& geometry, const CMat& y,
                            std::span<const double> theta_all, const CMat& s_all,
                            const BlockCovariance& omega) {
  check_data(geometry, y);
  const CVec ones = CVec::Ones(geometry.num_sensors());
  return update_gains(y, model(geometry, ones, theta_all, s_all, y.cols()), omega);
}

GainUpdate update_gains_miml(const ArrayGeometry& geometry, const CMat& y,
                             std::span<const double> theta_known, const CMat& s_known,
                             const BlockCovariance& omega) {
  return update_gains_iml(geometry, y, theta_known, s_known, omega);
}

CMat update_signals(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                    std::span<const double> theta_known, const CMat& s_known,
                    std::span<const double> theta_unknown, const BlockCovariance& omega) {
  check_data(geometry, y);
  if (theta_unknown.empty()) throw InvalidArgument("update_signals: no unknown sources");
  const CovarianceFactor f = factor(omega, PdPolicy::Repair);
  const CMat ybar = f.whiten(y - model(geometry, gains, theta_known, s_known, y.cols()));
  const CMat abar = f.whiten(gains.asDiagonal() * steering_columns(geometry, theta_unknown));
  Eigen::ColPivHouseholderQR<CMat> qr(abar);
  qr.setThreshold(kPinvTol);
  if (qr.rank() < abar.cols()) {
    std::vector<std::size_t> cols;
    for (Index i = qr.rank(); i < abar.cols(); ++i)
      cols.push_back(static_cast<std::size_t>(qr.colsPermutation().indices()(i)));
    std::sort(cols.begin(), cols.end());
    throw RankDeficient(cols, "whitened unknown-source steering matrix");
  }
  return qr.solve(ybar);
}

// ---------------------------------------------------------------------------

ConcentratedCost::ConcentratedCost(const ArrayGeometry& geometry, const CMat& y, const CVec& gains,
                                   std::span<const double> theta_known, const CMat& s_known,
                                   const BlockCovariance& omega, const BlockMask& mask)
    : geometry_(&geometry),
      gains_(gains),
      omega_factor_(factor(omega, PdPolicy::Repair)),
      mask_(mask) {
  check_data(geometry, y);
  if (gains.size() != geometry.num_sensors() || omega.dimension() != geometry.num_sensors() ||
      mask.dimension() != geometry.num_sensors())
    throw InvalidArgument("ConcentratedCost: dimension mismatch");
  const CMat ybar =
      omega_factor_.whiten(y - model(geometry, gains, theta_known, s_known, y.cols()));
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(y.cols()));
  if (y.cols() <= y.rows()) {
    l_ = ybar * inv_sqrt_n;
  } else {
    Eigen::HouseholderQR<CMat> qr(ybar.adjoint() * inv_sqrt_n);
    l_ = qr.matrixQR().topRows(y.rows()).triangularView<Eigen::Upper>().toDenseMatrix().adjoint();
  }
}

ConcentratedCost::Evaluation ConcentratedCost::evaluate(std::span<const double> theta_u,
                                                        bool with_gradient) const {
  Evaluation out;
  const Index m = geometry_->num_sensors();
  const Index k = static_cast<Index>(theta_u.size());
  if (k == 0) throw InvalidArgument("ConcentratedCost: no unknown angles");
  for (double t : theta_u)
    if (!std::isfinite(t)) {
      out.value = kInfeasible;
      return out;
    }

  const CMat abar = omega_factor_.whiten(gains_.asDiagonal() * steering_columns(*geometry_, theta_u));
  Eigen::ColPivHouseholderQR<CMat> qr(abar);
  qr.setThreshold(kPinvTol);
  if (qr.rank() < k) {
    out.value = kInfeasible;
    return out;
  }
  // abar^+ = (abar^H abar)^{-1} abar^H for full column rank.
  const CMat apinv = qr.solve(CMat::Identity(m, m));
  CMat p = CMat::Identity(m, m) - abar * apinv;
  p = 0.5 * (p + p.adjoint()).eval();

  const CMat pl = p * l_;
  const CMat x = omega_factor_.color(pl);
  // Per block, X_b^H Z_b^{-1} = X_b^+ (N' x M_b), taken straight from the SVD so
  // the squared condition number of Z_b never appears.
  CMat xpinv(x.cols(), m);
  double value = 0.0;
  for (Index b = 0; b < mask_.num_blocks(); ++b) {
    // Z_b = X_b X_b^H; its log-determinant from the singular values of X_b.
    const CMat xb = x.middleRows(mask_.offset(b), mask_.size(b));
    if (xb.cols() < xb.rows()) {
      out.value = kInfeasible;
      return out;
    }
    Eigen::JacobiSVD<CMat> svd(xb, with_gradient ? Eigen::ComputeThinU | Eigen::ComputeThinV : 0);
    const RVec& sv = svd.singularValues();
    if (!(sv.minCoeff() > 0.0) || !sv.allFinite()) {
      out.value = kInfeasible;
      return out;
    }
    value += 2.0 * sv.array().log().sum();
    if (with_gradient)
      xpinv.middleCols(mask_.offset(b), mask_.size(b)) =
          svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().adjoint();
  }
  out.value = value;
  if (!with_gradient) return out;

  // dF/dtheta_l = -2 Re{ v_l^H Q u_l + u_l^H Q v_l }, with u_l = Pperp d_l,
  // v_l^H the l-th row of abar^+, Q = Rhat Pperp K, K = Omega^{1/2} Z^{-1} Omega^{1/2}.
  // With Rhat = L L^H: Q = L (Pperp L)^H K = L [X_1^+ ... X_L^+] Omega^{1/2}.
  const CMat q = l_ * omega_factor_.color(xpinv.adjoint()).adjoint();
  out.gradient.resize(k);
  for (Index l = 0; l < k; ++l) {
    const CVec d = omega_factor_.whiten(
        gains_.cwiseProduct(steering_derivative(*geometry_, theta_u[static_cast<std::size_t>(l)])));
    const CVec u = p * d;
    const Eigen::RowVectorXcd vrow = apinv.row(l);
    const Complex t1 = (vrow * (q * u))(0);
    const Complex t2 = (u.adjoint() * (q * vrow.adjoint()))(0);
    out.gradient(l) = -2.0 * (t1 + t2).real();
  }
  return out;
}

double ConcentratedCost::value(std::span<const double> theta_u) const {
  return evaluate(theta_u, false).value;
}

RVec ConcentratedCost::gradient(std::span<const double> theta_u) const {
  Evaluation e = evaluate(theta_u, true);
  if (!std::isfinite(e.value))
    throw InvalidArgument("cost_gradient: cost is not finite at this point");
  return e.gradient;
}

double concentrated_cost(const ConcentratedCost& cost, std::span<const double> theta_u) {
  return cost.value(theta_u);
}

RVec cost_gradient(const ConcentratedCost& cost, std::span<const double> theta_u) {
  return cost.gradient(theta_u);
}

// ---------------------------------------------------------------------------

namespace {

std::span<const double> as_span(const RVec& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

RVec clamp(RVec x, const EstimatorConfig& c) {
  for (Index i = 0; i < x.size(); ++i) x(i) = std::clamp(x(i), c.theta_min, c.theta_max);
  return x;
}

/// Central difference of the analytic gradient. Empty when any probe is infeasible.
std::optional<RMat> fd_hessian(const ConcentratedCost& cost, const RVec& x,
                               const EstimatorConfig& config) {
  constexpr double h = 1e-6;
  const Index k = x.size();
  RMat hess(k, k);
  for (Index j = 0; j < k; ++j) {
    RVec xp = x, xm = x;
    xp(j) = std::min(x(j) + h, config.theta_max);
    xm(j) = std::max(x(j) - h, config.theta_min);
    const auto ep = cost.evaluate(as_span(xp), true);
    const auto em = cost.evaluate(as_span(xm), true);
    if (!std::isfinite(ep.value) || !std::isfinite(em.value)) return std::nullopt;
    hess.col(j) = (ep.gradient - em.gradient) / (xp(j) - xm(j));
  }
  return RMat(0.5 * (hess + hess.transpose()));
}

}  // namespace

ThetaSearchResult optimize_theta(const ConcentratedCost& cost, const RVec& theta_init,
                                 const EstimatorConfig& config) {
  if (theta_init.size() < 1) throw InvalidArgument("optimize_theta: empty initial point");
  ThetaSearchResult res;
  RVec x = clamp(theta_init, config);
  auto cur = cost.evaluate(as_span(x), true);
  if (!std::isfinite(cur.value)) {
    res.theta = x;
    res.value = cur.value;
    return res;
  }
  double last_move = 0.0;
  for (int step = 0; step < config.newton_max_steps; ++step) {
    const RVec& g = cur.gradient;
    if (g.norm() <= config.newton_grad_tol) {
      res.converged = true;
      break;
    }
    bool accepted = false;
    RVec x_new;
    ConcentratedCost::Evaluation next;

    if (auto hess = fd_hessian(cost, x, config)) {
      Eigen::LLT<RMat> llt(*hess);
      if (llt.info() == Eigen::Success) {
        x_new = clamp(x - llt.solve(g), config);
        next = cost.evaluate(as_span(x_new), true);
        accepted = std::isfinite(next.value) && next.value < cur.value;
      }
    }
    if (!accepted) {
      // Start the halvings near the scale of the previous move so narrow wells
      // stay within reach of the 30 halvings.
      const RVec dir = -g / g.norm();
      double t = last_move > 0.0 ? std::min(config.grid_step, 4.0 * last_move) : config.grid_step;
      for (int halving = 0; halving <= 30 && !accepted; ++halving, t *= 0.5) {
        x_new = clamp(x + t * dir, config);
        next = cost.evaluate(as_span(x_new), true);
        accepted = std::isfinite(next.value) && next.value < cur.value;
      }
    }
    if (!accepted) {
      // No descent available along either direction: x is as good as we can certify.
      res.converged = true;
      break;
    }
    const double moved = (x_new - x).cwiseAbs().maxCoeff();
    last_move = (x_new - x).norm();
    x = std::move(x_new);
    cur = std::move(next);
    ++res.steps;
    if (moved < 1e-13) {
      res.converged = true;
      break;
    }
  }
  res.theta = x;
  res.value = cur.value;
  return res;
}

RVec grid_initial_theta(const ConcentratedCost& cost, Index num_unknown,
                        std::span<const double> theta_known, const EstimatorConfig& config) {
  if (num_unknown < 1) throw InvalidArgument("grid_initial_theta: num_unknown must be >= 1");
  std::vector<double> placed;
  const int n_grid = static_cast<int>(std::floor((config.theta_max - config.theta_min) / config.grid_step + 1e-9)) + 1;
  const double excl = config.grid_exclusion + 1e-12;
  for (Index k = 0; k < num_unknown; ++k) {
    double best_t = std::numeric_limits<double>::quiet_NaN();
    double best_f = std::numeric_limits<double>::infinity();
    std::vector<double> trial = placed;
    trial.push_back(0.0);
    for (int i = 0; i < n_grid; ++i) {
      const double t = config.theta_min + i * config.grid_step;
      auto near = [&](double ref) { return std::abs(t - ref) <= excl; };
      if (std::any_of(theta_known.begin(), theta_known.end(), near) ||
          std::any_of(placed.begin(), placed.end(), near))
        continue;
      trial.back() = t;
      const double f = cost.value(trial);
      if (f < best_f) {
        best_f = f;
        best_t = t;
      }
    }
    if (!std::isfinite(best_f))
      throw EstimationError(0, "grid", "no feasible grid point for unknown source " + std::to_string(k));
    placed.push_back(best_t);
  }
  return Eigen::Map<const RVec>(placed.data(), static_cast<Index>(placed.size()));
}

// ---------------------------------------------------------------------------

namespace {

BlockMask effective_mask(const EstimationProblem& p, const EstimatorConfig& c) {
  if (c.variant == Variant::DiagMisspec) return BlockMask::diagonal(p.geometry.num_sensors());
  BlockMask m = c.mask.empty() ? p.geometry.block_mask() : c.mask;
  if (m.dimension() != p.geometry.num_sensors())
    throw InvalidArgument("estimator mask dimension does not match the array");
  return m;
}

void check_problem(const EstimationProblem& p, const EstimatorConfig& c) {
  c.validate();
  check_data(p.geometry, p.y);
  if (p.s_known.rows() != static_cast<Index>(p.theta_known.size()))
    throw InvalidArgument("S_K must have one row per known angle");
  if (!p.theta_known.empty() && p.s_known.cols() != p.y.cols())
    throw InvalidArgument("S_K snapshot count differs from the observation");
  if (static_cast<Index>(p.theta_known.size()) + c.num_unknown >= p.geometry.num_sensors())
    throw InvalidArgument("more sources than the array can resolve");
}

/// Relative change of two stacked parameter vectors.
double relative_change(const CVec& next, const CVec& prev) {
  const double denom = std::max(next.norm(), 1e-300);
  return (next - prev).norm() / denom;
}

CVec stack(const RVec& theta, const CVec& gains, const CMat& s_u) {
  CVec out(theta.size() + gains.size() + s_u.size());
  out.head(theta.size()) = theta.cast<Complex>();
  out.segment(theta.size(), gains.size()) = gains;
  out.tail(s_u.size()) = Eigen::Map<const CVec>(s_u.data(), s_u.size());
  return out;
}

/// Grid scan with Omega = I, then Newton on the current cost from the grid
/// point and from the previous estimate; the lower cost wins.
RVec theta_step(const EstimationProblem& p, const EstimatorConfig& c, const BlockMask& mask,
                const CVec& gains, const BlockCovariance& omega, const RVec* previous,
                EstimatorDiagnostics& diag) {
  const ConcentratedCost scan(p.geometry, p.y, gains, p.theta_known, p.s_known,
                              BlockCovariance::identity(mask), mask);
  const RVec init = grid_initial_theta(scan, c.num_unknown, p.theta_known, c);
  const ConcentratedCost cost(p.geometry, p.y, gains, p.theta_known, p.s_known, omega, mask);
  ThetaSearchResult best = optimize_theta(cost, init, c);
  diag.newton_steps += best.steps;
  if (previous != nullptr && previous->size() == init.size()) {
    ThetaSearchResult alt = optimize_theta(cost, *previous, c);
    diag.newton_steps += alt.steps;
    if (alt.value < best.value) best = std::move(alt);
  }
  if (!std::isfinite(best.value))
    throw EstimationError(0, "theta", "concentrated cost is infeasible at every start point");
  return best.theta;
}

template <typename F>
auto staged(int iteration, const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const EstimationError&) {
    throw;
  } catch (const std::exception& e) {
    throw EstimationError(iteration, stage, e.what());
  }
}

}  // namespace

EstimatorState run_iml(const EstimationProblem& p, const EstimatorConfig& config) {
  check_problem(p, config);
  const BlockMask mask = effective_mask(p, config);
  const bool calibrate = config.variant != Variant::Uncalibrated;
  const Index m = p.geometry.num_sensors();
  const Index n = p.y.cols();

  EstimatorState st;
  st.omega = BlockCovariance::identity(mask);
  st.gains = CVec::Ones(m);
  if (calibrate && config.iml_calibrated_start && !p.theta_known.empty()) {
    const GainUpdate g0 = update_gains_miml(p.geometry, p.y, p.theta_known, p.s_known, st.omega);
    st.gains = g0.gains;
    st.diagnostics.gain_rank_deficient |= g0.rank_deficient;
  }

  CVec prev_stack;
  for (int it = 1; it <= config.max_iterations; ++it) {
    const RVec* prev_theta = st.theta_u.size() > 0 ? &st.theta_u : nullptr;
    RVec theta = staged(it, "theta", [&] {
      return theta_step(p, config, mask, st.gains, st.omega, prev_theta, st.diagnostics);
    });
    const std::span<const double> th_u = as_span(theta);
    st.s_u = staged(it, "signals", [&] {
      return update_signals(p.geometry, p.y, st.gains, p.theta_known, p.s_known, th_u, st.omega);
    });
    st.theta_u = std::move(theta);

    const std::vector<double> th_all = concat(p.theta_known, as_span(st.theta_u));
    const CMat s_all = stack_rows(p.s_known, st.s_u);
    st.omega = staged(it, "omega", [&] {
      return update_omega(p.geometry, p.y, st.gains, th_all, s_all, mask);
    });
    st.diagnostics.omega_repaired |= factor(st.omega, PdPolicy::Repair).repaired();
    if (calibrate) {
      const GainUpdate gu = staged(it, "gains", [&] {
        return update_gains_iml(p.geometry, p.y, th_all, s_all, st.omega);
      });
      st.gains = gu.gains;
      st.diagnostics.gain_rank_deficient |= gu.rank_deficient;
    }

    IterationRecord rec;
    rec.iteration = it;
    rec.loglik = log_likelihood(p.y, model(p.geometry, st.gains, th_all, s_all, n), st.omega,
                                PdPolicy::Repair);
    const CVec cur_stack = stack(st.theta_u, st.gains, st.s_u);
    rec.param_change = prev_stack.size() == cur_stack.size()
                           ? relative_change(cur_stack, prev_stack)
                           : std::numeric_limits<double>::infinity();
    rec.theta_u = st.theta_u;
    prev_stack = cur_stack;
    st.loglik_trace.push_back(rec.loglik);
    st.history.push_back(rec);
    st.iterations_used = it;
    if (rec.param_change < config.param_tol) break;
  }
  return st;
}

EstimatorState run_miml(const EstimationProblem& p, const EstimatorConfig& config) {
  check_problem(p, config);
  if (p.theta_known.empty()) throw InvalidArgument("run_miml: needs at least one known source");
  const BlockMask mask = effective_mask(p, config);
  const Index m = p.geometry.num_sensors();

  EstimatorState st;
  st.omega = BlockCovariance::identity(mask);
  st.gains = CVec::Ones(m);
  for (int it = 1; it <= config.max_iterations; ++it) {
    const GainUpdate gu = staged(it, "gains", [&] {
      return update_gains_miml(p.geometry, p.y, p.theta_known, p.s_known, st.omega);
    });
    st.diagnostics.gain_rank_deficient |= gu.rank_deficient;
    IterationRecord rec;
    rec.iteration = it;
    rec.param_change = relative_change(gu.gains, st.gains);
    st.gains = gu.gains;
    st.omega = staged(it, "omega", [&] {
      return update_omega_miml(p.geometry, p.y, st.gains, p.theta_known, p.s_known, mask);
    });
    st.diagnostics.omega_repaired |= factor(st.omega, PdPolicy::Repair).repaired();
    rec.loglik = log_likelihood(p.geometry, p.y, st.gains, p.theta_known, p.s_known, st.omega,
                                PdPolicy::Repair);
    st.loglik_trace.push_back(rec.loglik);
    st.history.push_back(rec);
    st.iterations_used = it;
    if (rec.param_change < config.param_tol) break;
  }

  const int last = st.iterations_used;
  st.theta_u = staged(last, "theta", [&] {
    return theta_step(p, config, mask, st.gains, st.omega, nullptr, st.diagnostics);
  });
  st.s_u = staged(last, "signals", [&] {
    return update_signals(p.geometry, p.y, st.gains, p.theta_known, p.s_known,
                          as_span(st.theta_u), st.omega);
  });
  st.history.back().theta_u = st.theta_u;
  return st;
}

EstimatorState estimate(const EstimationProblem& problem, const EstimatorConfig& config) {
  switch (config.variant) {
    case Variant::Iml:
    case Variant::Uncalibrated: return run_iml(problem, config);
    case Variant::Miml:
    case Variant::DiagMisspec: return run_miml(problem, config);
  }
  throw InvalidArgument("estimate: unknown variant");
}

}  // namespace doacal
