#include "doacal/linalg.hpp"

#include <algorithm>

namespace doacal {

CMat hermitian_pinv(const CMat& h, double rel_tol, Index* rank) {
  const Index n = h.rows();
  if (n == 0) {
    if (rank) *rank = 0;
    return CMat(0, 0);
  }
  const CMat sym = 0.5 * (h + h.adjoint());
  Eigen::SelfAdjointEigenSolver<CMat> eig(sym);
  const RVec& w = eig.eigenvalues();
  const double wmax = w.cwiseAbs().maxCoeff();
  const double cut = rel_tol * wmax;
  RVec winv = RVec::Zero(n);
  Index kept = 0;
  for (Index i = 0; i < n; ++i) {
    if (std::abs(w(i)) > cut && wmax > 0.0) {
      winv(i) = 1.0 / w(i);
      ++kept;
    }
  }
  if (rank) *rank = kept;
  const CMat& u = eig.eigenvectors();
  return u * winv.asDiagonal() * u.adjoint();
}

double hermitian_defect(const CMat& a) {
  const double scale = a.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (a - a.adjoint()).cwiseAbs().maxCoeff() / scale;
}

}  // namespace doacal
