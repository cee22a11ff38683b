#pragma once

#include <complex>
#include <numbers>

#include <Eigen/Dense>

namespace doacal {

using Complex = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kPi = std::numbers::pi;
inline constexpr Complex kJ{0.0, 1.0};

constexpr double deg_to_rad(double deg) noexcept { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) noexcept { return rad * 180.0 / kPi; }

/// Pseudo-inverse of a Hermitian positive semidefinite matrix. Eigenvalues
/// below `rel_tol * lambda_max` are treated as zero; `rank` receives the
/// number kept.
CMat hermitian_pinv(const CMat& h, double rel_tol, Index* rank = nullptr);

/// Largest absolute entry of a - a^H, relative to the largest entry of a.
double hermitian_defect(const CMat& a);

}  // namespace doacal
