#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "doacal/linalg.hpp"

namespace doacal {

/// Support pattern E = bdiag{E_{M_1}, ..., E_{M_L}} of a block-diagonal
/// matrix, E_p being the p x p all-ones matrix.
class BlockMask {
 public:
  BlockMask() = default;
  explicit BlockMask(std::vector<Index> sizes);

  /// All-diagonal mask (E = I) of dimension m.
  static BlockMask diagonal(Index m);

  Index num_blocks() const noexcept { return static_cast<Index>(sizes_.size()); }
  Index size(Index block) const { return sizes_.at(static_cast<std::size_t>(block)); }
  Index offset(Index block) const { return offsets_.at(static_cast<std::size_t>(block)); }
  Index dimension() const noexcept { return dimension_; }
  const std::vector<Index>& sizes() const noexcept { return sizes_; }
  bool empty() const noexcept { return sizes_.empty(); }

  /// Dense 0/1 matrix of the mask.
  RMat dense() const;

  friend bool operator==(const BlockMask& a, const BlockMask& b) { return a.sizes_ == b.sizes_; }

 private:
  std::vector<Index> sizes_;
  std::vector<Index> offsets_;
  Index dimension_ = 0;
};

/// Hermitian positive semidefinite block-diagonal matrix, stored block by
/// block. Off-block entries are structurally zero and never materialized.
class BlockCovariance {
 public:
  BlockCovariance() = default;
  /// Validates each block: Hermitian to 1e-12 (relative) and eigenvalues
  /// >= -1e-10 * trace. Blocks are stored exactly Hermitian.
  explicit BlockCovariance(std::vector<CMat> blocks);

  static BlockCovariance identity(const BlockMask& mask);

  Index num_blocks() const noexcept { return static_cast<Index>(blocks_.size()); }
  Index dimension() const noexcept { return mask_.dimension(); }
  const BlockMask& mask() const noexcept { return mask_; }
  const CMat& block(Index i) const { return blocks_.at(static_cast<std::size_t>(i)); }
  const std::vector<CMat>& blocks() const noexcept { return blocks_; }

  /// Real diagonal [Omega]_{i,i}.
  RVec diagonal() const;
  BlockCovariance scaled(double factor) const;
  /// Assembled M x M matrix; used by tests and dense oracles only.
  CMat to_dense() const;

 private:
  std::vector<CMat> blocks_;
  BlockMask mask_;
};

/// Whether a Hermitian block may be repaired by clamping small eigenvalues.
enum class PdPolicy { Strict, Repair };

/// Per-block Hermitian eigendecomposition products of a BlockCovariance.
class CovarianceFactor {
 public:
  const BlockMask& mask() const noexcept { return mask_; }
  double log_det() const noexcept { return log_det_; }
  /// True when at least one eigenvalue was raised to the floor.
  bool repaired() const noexcept { return repaired_; }

  const CMat& inverse_block(Index i) const { return inverse_[static_cast<std::size_t>(i)]; }
  const CMat& sqrt_block(Index i) const { return sqrt_[static_cast<std::size_t>(i)]; }
  const CMat& inv_sqrt_block(Index i) const { return inv_sqrt_[static_cast<std::size_t>(i)]; }

  /// Omega^{-1} X, Omega^{1/2} X and Omega^{-1/2} X, applied block row by block row.
  CMat solve(const CMat& x) const { return apply(inverse_, x); }
  CMat color(const CMat& x) const { return apply(sqrt_, x); }
  CMat whiten(const CMat& x) const { return apply(inv_sqrt_, x); }

  CMat dense_inverse() const { return assemble(inverse_); }
  CMat dense_sqrt() const { return assemble(sqrt_); }
  CMat dense_inv_sqrt() const { return assemble(inv_sqrt_); }

 private:
  friend CovarianceFactor factor(const BlockCovariance& cov, PdPolicy policy);

  CMat apply(const std::vector<CMat>& blocks, const CMat& x) const;
  CMat assemble(const std::vector<CMat>& blocks) const;

  BlockMask mask_;
  std::vector<CMat> inverse_;
  std::vector<CMat> sqrt_;
  std::vector<CMat> inv_sqrt_;
  double log_det_ = 0.0;
  bool repaired_ = false;
};

/// Relative eigenvalue floor: lambda >= kEigenFloor * trace(block) / size(block).
inline constexpr double kEigenFloor = 1e-12;

/// Schur-Hadamard product matrix (.) E, kept as blocks.
BlockCovariance mask_project(const CMat& matrix, const BlockMask& mask);

/// Factors every block. Under PdPolicy::Strict a block whose smallest
/// eigenvalue is below the floor raises NotPositiveDefinite(block index);
/// under PdPolicy::Repair such eigenvalues are clamped to the floor.
CovarianceFactor factor(const BlockCovariance& cov, PdPolicy policy = PdPolicy::Strict);

/// n columns i.i.d. CN(0, Omega), drawn per block as Omega_i^{1/2} w.
CMat sample_noise(const BlockCovariance& cov, Index n_snapshots, std::uint64_t seed);

/// Block i entry (h, l) = powers[i] * rho^(l - h) for l >= h, conjugated
/// below the diagonal. Positive definite for |rho| < 1.
BlockCovariance build_default_cov(std::span<const Index> sizes, std::span<const double> powers,
                                  Complex rho);

}  // namespace doacal
