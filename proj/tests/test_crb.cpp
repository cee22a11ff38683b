#include <gtest/gtest.h>

#include <random>

#include "doacal/crb.hpp"
#include "doacal/error.hpp"
#include "doacal/harness.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace doacal;
using fixture::reference_instance;

namespace {

Scenario short_scenario(std::uint64_t seed, Index n) {
  fixture::Options o;
  o.snapshots = n;
  return reference_instance(seed, o).scenario;
}

Scenario with_covariance(Scenario sc, BlockCovariance c) {
  sc.covariance = std::move(c);
  return sc;
}

}  // namespace

TEST(MeanJacobian, ColumnsMatchFiniteDifferences) {
  const Scenario sc = short_scenario(1, 3);
  const FisherBlock fb = fisher_mean_block(sc);
  const double h = 1e-6;
  for (Index t = 0; t < 3; ++t) {
    const CMat j = mean_jacobian(sc, t);
    ASSERT_EQ(j.cols(), fb.dimension());
    for (Index col = 0; col < j.cols(); ++col) {
      Scenario p = sc, m = sc;
      if (col < fb.num_theta) {
        p.theta_unknown[0] += h;
        m.theta_unknown[0] -= h;
      } else if (col < fb.gain_offset()) {
        const Index k = col - fb.num_theta;
        const Index snap = k / (2 * fb.num_theta);
        const Complex step = (k % 2 == 0) ? Complex(h, 0) : Complex(0, h);
        p.signals_unknown(0, snap) += step;
        m.signals_unknown(0, snap) -= step;
      } else {
        const Index k = col - fb.gain_offset();
        const Index i = k % 9;
        const Complex step = (k < 9) ? Complex(h, 0) : Complex(0, h);
        p.gains(i) += step;
        m.gains(i) -= step;
      }
      const CVec fd = (model_mean(p).col(t) - model_mean(m).col(t)) / (2 * h);
      EXPECT_LT((j.col(col) - fd).norm(), 1e-6 * std::max(1.0, fd.norm())) << "t " << t << " col " << col;
    }
  }
}

TEST(FisherBlock, PositiveSemidefinite) {
  for (std::uint64_t seed : {2u, 3u, 4u}) {
    const FisherBlock fb = fisher_mean_block(short_scenario(seed, 6));
    EXPECT_LT((fb.fim - fb.fim.transpose()).norm(), 1e-12 * fb.fim.norm());
    const Eigen::SelfAdjointEigenSolver<RMat> es(fb.fim);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * es.eigenvalues().maxCoeff());
  }
}

TEST(FisherBlock, DoublingNoiseHalvesInformation) {
  const Scenario sc = short_scenario(5, 8);
  const FisherBlock a = fisher_mean_block(sc);
  const FisherBlock b = fisher_mean_block(with_covariance(sc, sc.covariance.scaled(2.0)));
  EXPECT_LT((b.fim - 0.5 * a.fim).norm(), 1e-12 * a.fim.norm());
  EXPECT_NEAR(crb_theta(with_covariance(sc, sc.covariance.scaled(2.0)))(0), 2.0 * crb_theta(sc)(0),
              1e-9 * crb_theta(sc)(0));
}

TEST(CrbTheta, WhiteNoiseKnownUnitGainsMatchesClassicalBound) {
  fixture::Options o;
  o.unit_gains = true;
  o.snapshots = 50;
  for (std::uint64_t seed : {6u, 7u}) {
    Scenario sc = reference_instance(seed, o).scenario;
    const double sigma2 = 0.3;
    sc = with_covariance(sc, BlockCovariance::identity(BlockMask({4, 3, 2})).scaled(sigma2));
    const double ref = oracle::classical_crb(oracle::reference_positions(), sc.theta_unknown[0],
                                             sc.signals_unknown.row(0).transpose(), sigma2);
    EXPECT_NEAR(crb_theta(sc, GainModel::Known)(0), ref, 1e-9 * ref);
  }
}

TEST(CrbTheta, DuplicatedSnapshotsHalveBound) {
  const Scenario sc = short_scenario(8, 20);
  Scenario twice = sc;
  twice.signals_known.resize(1, 40);
  twice.signals_known << sc.signals_known, sc.signals_known;
  twice.signals_unknown.resize(1, 40);
  twice.signals_unknown << sc.signals_unknown, sc.signals_unknown;
  for (GainModel gm : {GainModel::Known, GainModel::Unknown})
    EXPECT_NEAR(crb_theta(twice, gm)(0), 0.5 * crb_theta(sc, gm)(0), 1e-9 * crb_theta(sc, gm)(0));
}

TEST(CrbTheta, UnknownGainsNeverTighter) {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const Scenario sc = short_scenario(seed, 40);
    EXPECT_LE(crb_theta(sc, GainModel::Known)(0), crb_theta(sc, GainModel::Unknown)(0) * (1 + 1e-12));
  }
}

TEST(CrbTheta, EliminationMatchesDirectInverse) {
  // One snapshot carries 18 real observations, too few for 18 gain parameters plus the rest.
  for (Index n : {1, 2, 5, 8}) {
    for (GainModel gm : {GainModel::Known, GainModel::Unknown}) {
      if (n == 1 && gm == GainModel::Unknown) continue;
      const Scenario sc = short_scenario(30 + static_cast<std::uint64_t>(n), n);
      const FisherBlock fb = fisher_mean_block(sc, gm);
      const RMat inv = fb.fim.fullPivLu().inverse();
      EXPECT_NEAR(crb_theta(fb)(0), inv(0, 0), 1e-8 * inv(0, 0)) << "N " << n;
    }
  }
}

TEST(CrbTheta, DecreasesAlongSnrGrid) {
  ExperimentConfig cfg;
  cfg.n_trials = 20;
  double prev = std::numeric_limits<double>::infinity();
  for (double s : cfg.snr_grid_db) {
    const double c = mean_crb_deg2(cfg, s);
    EXPECT_LT(c, prev) << s;
    prev = c;
  }
}

TEST(CrbTheta, NoCalibrationSourceWithUnknownGainsIsSingular) {
  // Without a reference waveform the gains and the unknown waveform trade scale freely.
  Scenario sc = short_scenario(40, 10);
  sc.theta_known.clear();
  sc.signals_known = CMat(0, 10);
  EXPECT_THROW(crb_theta(sc, GainModel::Unknown), SingularFim);
  EXPECT_NO_THROW(crb_theta(sc, GainModel::Known));
}
