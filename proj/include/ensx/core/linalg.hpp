#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ensx/core/matrix.hpp"

namespace ensx::linalg {

struct EigenPairs {
  std::vector<double> values;
  Matrix vectors;  // one eigenvector per column
  int iterations = 0;
};

struct PowerIterationOptions {
  double tolerance = 1e-9;
  int max_iterations = 1000;
  std::uint64_t seed = 0x5eed;
};

/// Leading eigenpairs of a symmetric positive semi-definite matrix by power
/// iteration with Hotelling deflation.
EigenPairs top_eigenpairs(const Matrix& symmetric, int count, const PowerIterationOptions& options = {});

/// Solves A x = b for symmetric positive definite A (Cholesky). Returns false
/// if A is not numerically positive definite.
bool cholesky_solve(const Matrix& a, std::span<const double> b, std::vector<double>& x);

/// Column-centered copy of `m`; column means written to `means`.
Matrix center_columns(const Matrix& m, std::vector<double>* means = nullptr);

/// mᵀm / (rows - 1) for an already centered matrix.
Matrix covariance(const Matrix& centered);

}  // namespace ensx::linalg
