#include "doacal/crb.hpp"

#include <string>

#include "doacal/block_cov.hpp"
#include "doacal/error.hpp"

namespace doacal {

namespace {

constexpr double kSingularTol = 1e-12;

struct Layout {
  Index k = 0;  // unknown sources
  Index n = 0;  // snapshots
  Index gain_params = 0;
};

Layout layout_of(const Scenario& sc, GainModel gains) {
  sc.validate();
  if (sc.num_unknown() < 1) throw InvalidArgument("CRB: scenario has no unknown source");
  if (sc.signals_unknown.cols() < 1) throw InvalidArgument("CRB: scenario has no snapshots");
  return {sc.num_unknown(), sc.signals_unknown.cols(),
          gains == GainModel::Unknown ? 2 * sc.geometry.num_sensors() : 0};
}

/// Nonzero columns of d mu_t / d eta: [theta (K) | s_U(t) (2K) | g (2M or 0)].
CMat local_jacobian(const Scenario& sc, const CMat& a_u, const CMat& da_u, const CMat& a_all,
                    const CMat& s_all, Index t, const Layout& lay) {
  const Index m = sc.geometry.num_sensors();
  const Index k = lay.k;
  CMat j(m, 3 * k + lay.gain_params);
  for (Index l = 0; l < k; ++l) {
    j.col(l) = sc.gains.cwiseProduct(da_u.col(l)) * sc.signals_unknown(l, t);
    const CVec ga = sc.gains.cwiseProduct(a_u.col(l));
    j.col(k + 2 * l) = ga;
    j.col(k + 2 * l + 1) = kJ * ga;
  }
  if (lay.gain_params > 0) {
    const CVec as = a_all * s_all.col(t);
    j.rightCols(2 * m).setZero();
    for (Index i = 0; i < m; ++i) {
      j(i, 3 * k + i) = as(i);
      j(i, 3 * k + m + i) = kJ * as(i);
    }
  }
  return j;
}

struct Precomputed {
  CMat a_u, da_u, a_all, s_all;
};

Precomputed precompute(const Scenario& sc) {
  Precomputed p;
  p.a_u = steering_columns(sc.geometry, sc.theta_unknown);
  p.da_u.resize(sc.geometry.num_sensors(), sc.num_unknown());
  for (Index l = 0; l < sc.num_unknown(); ++l)
    p.da_u.col(l) = steering_derivative(sc.geometry, sc.theta_unknown[static_cast<std::size_t>(l)]);
  p.a_all = CMat(sc.geometry.num_sensors(), sc.num_known() + sc.num_unknown());
  if (sc.num_known() > 0) p.a_all.leftCols(sc.num_known()) = steering_columns(sc.geometry, sc.theta_known);
  p.a_all.rightCols(sc.num_unknown()) = p.a_u;
  p.s_all = CMat(sc.num_known() + sc.num_unknown(), sc.signals_unknown.cols());
  if (sc.num_known() > 0) p.s_all.topRows(sc.num_known()) = sc.signals_known;
  p.s_all.bottomRows(sc.num_unknown()) = sc.signals_unknown;
  return p;
}

/// Maps local column c of the snapshot-t Jacobian to its global FIM index.
Index global_index(Index c, Index t, const FisherBlock& f) {
  const Index k = f.num_theta;
  if (c < k) return c;
  if (c < 3 * k) return f.signal_offset(t) + (c - k);
  return f.gain_offset() + (c - 3 * k);
}

}  // namespace

CMat mean_jacobian(const Scenario& scenario, Index snapshot, GainModel gains) {
  const Layout lay = layout_of(scenario, gains);
  if (snapshot < 0 || snapshot >= lay.n) throw InvalidArgument("mean_jacobian: snapshot out of range");
  const Precomputed pre = precompute(scenario);
  FisherBlock shape;
  shape.num_theta = lay.k;
  shape.num_snapshots = lay.n;
  shape.num_gain_params = lay.gain_params;
  const CMat local = local_jacobian(scenario, pre.a_u, pre.da_u, pre.a_all, pre.s_all, snapshot, lay);
  CMat full = CMat::Zero(scenario.geometry.num_sensors(), shape.dimension());
  for (Index c = 0; c < local.cols(); ++c) full.col(global_index(c, snapshot, shape)) = local.col(c);
  return full;
}

FisherBlock fisher_mean_block(const Scenario& scenario, GainModel gains) {
  const Layout lay = layout_of(scenario, gains);
  const Precomputed pre = precompute(scenario);
  const CovarianceFactor w = factor(scenario.covariance, PdPolicy::Strict);

  FisherBlock f;
  f.num_theta = lay.k;
  f.num_snapshots = lay.n;
  f.num_gain_params = lay.gain_params;
  f.fim = RMat::Zero(f.dimension(), f.dimension());
  for (Index t = 0; t < lay.n; ++t) {
    const CMat j = local_jacobian(scenario, pre.a_u, pre.da_u, pre.a_all, pre.s_all, t, lay);
    const RMat local = 2.0 * (j.adjoint() * w.solve(j)).real();
    for (Index c = 0; c < local.cols(); ++c) {
      const Index gc = global_index(c, t, f);
      for (Index r = 0; r < local.rows(); ++r) f.fim(global_index(r, t, f), gc) += local(r, c);
    }
  }
  f.fim = 0.5 * (f.fim + f.fim.transpose()).eval();
  return f;
}

RVec crb_theta(const FisherBlock& fisher) {
  const Index k = fisher.num_theta;
  const Index ng = fisher.num_gain_params;
  if (k < 1 || fisher.fim.rows() != fisher.dimension() || fisher.fim.cols() != fisher.dimension())
    throw InvalidArgument("crb_theta: malformed Fisher block");
  const RMat& fim = fisher.fim;

  // Indices of the parameters kept after signal elimination: theta then g.
  const Index nk = k + ng;
  auto kept = [&](Index i) { return i < k ? i : fisher.gain_offset() + (i - k); };
  RMat reduced(nk, nk);
  for (Index c = 0; c < nk; ++c)
    for (Index r = 0; r < nk; ++r) reduced(r, c) = fim(kept(r), kept(c));

  const double scale = reduced.diagonal().cwiseAbs().maxCoeff();
  for (Index t = 0; t < fisher.num_snapshots; ++t) {
    const Index o = fisher.signal_offset(t);
    const RMat stt = fim.block(o, o, 2 * k, 2 * k);
    RMat cross(2 * k, nk);
    for (Index c = 0; c < nk; ++c) cross.col(c) = fim.block(o, kept(c), 2 * k, 1);
    Eigen::SelfAdjointEigenSolver<RMat> eig(stt);
    if (!(eig.eigenvalues().minCoeff() > kSingularTol * eig.eigenvalues().cwiseAbs().maxCoeff()))
      throw SingularFim("signal block of snapshot " + std::to_string(t) + " is singular");
    const RMat half = eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                      (eig.eigenvectors().transpose() * cross);
    reduced.noalias() -= half.transpose() * half;
  }
  reduced = 0.5 * (reduced + reduced.transpose()).eval();

  RMat info = reduced.topLeftCorner(k, k);
  if (ng > 0) {
    const RMat jgg = reduced.bottomRightCorner(ng, ng);
    const RMat jgt = reduced.bottomLeftCorner(ng, k);
    Eigen::SelfAdjointEigenSolver<RMat> eg(jgg);
    if (!(eg.eigenvalues().minCoeff() > kSingularTol * eg.eigenvalues().cwiseAbs().maxCoeff()))
      throw SingularFim("gain block is singular after signal elimination");
    const RMat half = eg.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                      (eg.eigenvectors().transpose() * jgt);
    info.noalias() -= half.transpose() * half;
  }
  info = 0.5 * (info + info.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<RMat> eig(info);
  const RVec& w = eig.eigenvalues();
  if (!(w.minCoeff() > kSingularTol * scale))
    throw SingularFim("reduced Fisher information is singular (unidentifiable configuration)");
  const RMat& u = eig.eigenvectors();
  RVec out(k);
  for (Index l = 0; l < k; ++l) out(l) = (u.row(l).array().square() / w.transpose().array()).sum();
  return out;
}

RVec crb_theta(const Scenario& scenario, GainModel gains) {
  return crb_theta(fisher_mean_block(scenario, gains));
}

}  // namespace doacal
