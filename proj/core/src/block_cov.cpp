#include "doacal/block_cov.hpp"

#include <cmath>
#include <string>

#include "doacal/error.hpp"
#include "doacal/rng.hpp"

namespace doacal {

BlockMask::BlockMask(std::vector<Index> sizes) : sizes_(std::move(sizes)) {
  offsets_.reserve(sizes_.size());
  for (Index s : sizes_) {
    if (s < 1) throw InvalidArgument("BlockMask: block sizes must be positive");
    offsets_.push_back(dimension_);
    dimension_ += s;
  }
}

BlockMask BlockMask::diagonal(Index m) { return BlockMask(std::vector<Index>(m, 1)); }

RMat BlockMask::dense() const {
  RMat e = RMat::Zero(dimension_, dimension_);
  for (Index b = 0; b < num_blocks(); ++b) e.block(offset(b), offset(b), size(b), size(b)).setOnes();
  return e;
}

BlockCovariance::BlockCovariance(std::vector<CMat> blocks) {
  std::vector<Index> sizes;
  sizes.reserve(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    CMat& b = blocks[i];
    if (b.rows() != b.cols() || b.rows() == 0)
      throw InvalidArgument("BlockCovariance: block " + std::to_string(i) + " is not square");
    if (!b.allFinite())
      throw InvalidArgument("BlockCovariance: block " + std::to_string(i) + " is not finite");
    if (hermitian_defect(b) > 1e-12)
      throw InvalidArgument("BlockCovariance: block " + std::to_string(i) + " is not Hermitian");
    b = 0.5 * (b + b.adjoint()).eval();
    const double tr = b.trace().real();
    Eigen::SelfAdjointEigenSolver<CMat> eig(b, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10 * std::abs(tr))
      throw InvalidArgument("BlockCovariance: block " + std::to_string(i) +
                            " is not positive semidefinite");
    sizes.push_back(b.rows());
  }
  blocks_ = std::move(blocks);
  mask_ = BlockMask(std::move(sizes));
}

BlockCovariance BlockCovariance::identity(const BlockMask& mask) {
  std::vector<CMat> blocks;
  for (Index s : mask.sizes()) blocks.push_back(CMat::Identity(s, s));
  return BlockCovariance(std::move(blocks));
}

RVec BlockCovariance::diagonal() const {
  RVec d(dimension());
  for (Index b = 0; b < num_blocks(); ++b)
    d.segment(mask_.offset(b), mask_.size(b)) = block(b).diagonal().real();
  return d;
}

BlockCovariance BlockCovariance::scaled(double factor) const {
  if (!(factor >= 0.0) || !std::isfinite(factor))
    throw InvalidArgument("BlockCovariance::scaled: factor must be finite and nonnegative");
  BlockCovariance out = *this;
  for (CMat& b : out.blocks_) b *= factor;
  return out;
}

CMat BlockCovariance::to_dense() const {
  CMat d = CMat::Zero(dimension(), dimension());
  for (Index b = 0; b < num_blocks(); ++b)
    d.block(mask_.offset(b), mask_.offset(b), mask_.size(b), mask_.size(b)) = block(b);
  return d;
}

BlockCovariance mask_project(const CMat& matrix, const BlockMask& mask) {
  if (matrix.rows() != mask.dimension() || matrix.cols() != mask.dimension())
    throw InvalidArgument("mask_project: matrix is " + std::to_string(matrix.rows()) + "x" +
                          std::to_string(matrix.cols()) + ", mask dimension " +
                          std::to_string(mask.dimension()));
  std::vector<CMat> blocks;
  blocks.reserve(static_cast<std::size_t>(mask.num_blocks()));
  for (Index b = 0; b < mask.num_blocks(); ++b) {
    const CMat blk = matrix.block(mask.offset(b), mask.offset(b), mask.size(b), mask.size(b));
    blocks.push_back(0.5 * (blk + blk.adjoint()));
  }
  return BlockCovariance(std::move(blocks));
}

CMat CovarianceFactor::apply(const std::vector<CMat>& blocks, const CMat& x) const {
  if (x.rows() != mask_.dimension())
    throw InvalidArgument("CovarianceFactor: operand has " + std::to_string(x.rows()) +
                          " rows, expected " + std::to_string(mask_.dimension()));
  CMat out(x.rows(), x.cols());
  for (Index b = 0; b < mask_.num_blocks(); ++b) {
    const Index o = mask_.offset(b);
    const Index s = mask_.size(b);
    out.middleRows(o, s).noalias() = blocks[static_cast<std::size_t>(b)] * x.middleRows(o, s);
  }
  return out;
}

CMat CovarianceFactor::assemble(const std::vector<CMat>& blocks) const {
  CMat d = CMat::Zero(mask_.dimension(), mask_.dimension());
  for (Index b = 0; b < mask_.num_blocks(); ++b)
    d.block(mask_.offset(b), mask_.offset(b), mask_.size(b), mask_.size(b)) =
        blocks[static_cast<std::size_t>(b)];
  return d;
}

CovarianceFactor factor(const BlockCovariance& cov, PdPolicy policy) {
  CovarianceFactor f;
  f.mask_ = cov.mask();
  const double mean_diag =
      cov.dimension() > 0 ? cov.diagonal().sum() / static_cast<double>(cov.dimension()) : 0.0;
  for (Index b = 0; b < cov.num_blocks(); ++b) {
    const CMat& blk = cov.block(b);
    const Index s = blk.rows();
    double floor = kEigenFloor * blk.trace().real() / static_cast<double>(s);
    if (!(floor > 0.0)) floor = kEigenFloor * (mean_diag > 0.0 ? mean_diag : 1.0);
    Eigen::SelfAdjointEigenSolver<CMat> eig(blk);
    RVec w = eig.eigenvalues();
    if (w.minCoeff() < floor) {
      if (policy == PdPolicy::Strict)
        throw NotPositiveDefinite(static_cast<std::size_t>(b),
                                  "smallest eigenvalue " + std::to_string(w.minCoeff()) +
                                      " below floor " + std::to_string(floor));
      w = w.cwiseMax(floor);
      f.repaired_ = true;
    }
    const CMat& u = eig.eigenvectors();
    f.inverse_.push_back(u * w.cwiseInverse().asDiagonal() * u.adjoint());
    f.sqrt_.push_back(u * w.cwiseSqrt().asDiagonal() * u.adjoint());
    f.inv_sqrt_.push_back(u * w.cwiseSqrt().cwiseInverse().asDiagonal() * u.adjoint());
    f.log_det_ += w.array().log().sum();
  }
  return f;
}

CMat sample_noise(const BlockCovariance& cov, Index n_snapshots, std::uint64_t seed) {
  if (n_snapshots < 0) throw InvalidArgument("sample_noise: negative snapshot count");
  const CovarianceFactor f = factor(cov, PdPolicy::Strict);
  Rng rng(seed);
  return f.color(complex_normal(rng, cov.dimension(), n_snapshots));
}

BlockCovariance build_default_cov(std::span<const Index> sizes, std::span<const double> powers,
                                  Complex rho) {
  if (sizes.size() != powers.size())
    throw InvalidArgument("build_default_cov: one power per subarray required");
  if (!(std::abs(rho) < 1.0)) throw InvalidArgument("build_default_cov: |rho| must be < 1");
  std::vector<CMat> blocks;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(powers[i] > 0.0) || !std::isfinite(powers[i]))
      throw InvalidArgument("build_default_cov: powers must be positive");
    const Index s = sizes[i];
    if (s < 1) throw InvalidArgument("build_default_cov: block sizes must be positive");
    CMat b(s, s);
    for (Index h = 0; h < s; ++h) {
      Complex v = powers[i];
      b(h, h) = v;
      for (Index l = h + 1; l < s; ++l) {
        v *= rho;
        b(h, l) = v;
        b(l, h) = std::conj(v);
      }
    }
    blocks.push_back(std::move(b));
  }
  return BlockCovariance(std::move(blocks));
}

}  // namespace doacal
