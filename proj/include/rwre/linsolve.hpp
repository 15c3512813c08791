#pragma once

// Thin wrappers over Eigen for the exact solves used across the project.

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

namespace rwre {

// Solve A x = b for sparse square A given as triplets; throws if the
// factorization fails or the residual exceeds residual_tol (sup norm).
inline std::vector<double> solve_sparse(int64_t n, const std::vector<Eigen::Triplet<double>>& entries,
                                        const std::vector<double>& rhs, double residual_tol,
                                        const char* what) {
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(entries.begin(), entries.end());
  A.makeCompressed();
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(rhs.data(), static_cast<Eigen::Index>(n));
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success)
    throw std::runtime_error(std::string(what) + ": sparse factorization failed (singular system)");
  Eigen::VectorXd x = lu.solve(b);
  const double res = (A * x - b).cwiseAbs().maxCoeff();
  if (!(res <= residual_tol))
    throw std::runtime_error(std::string(what) + ": residual " + std::to_string(res) +
                             " exceeds tolerance " + std::to_string(residual_tol));
  return std::vector<double>(x.data(), x.data() + n);
}

}  // namespace rwre
