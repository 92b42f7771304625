#include "ensx/core/linalg.hpp"

#include <cmath>

#include "ensx/core/rng.hpp"

namespace ensx::linalg {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void multiply(const Matrix& a, const std::vector<double>& v, std::vector<double>& out) {
  for (std::size_t r = 0; r < a.rows(); ++r) out[r] = dot(a.row(r), v);
}

double normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
  return n;
}

}  // namespace

EigenPairs top_eigenpairs(const Matrix& symmetric, int count, const PowerIterationOptions& options) {
  const std::size_t n = symmetric.rows();
  EigenPairs out;
  out.vectors = Matrix(n, static_cast<std::size_t>(count));
  Matrix work = symmetric;
  Rng rng(options.seed);
  std::vector<double> v(n), next(n);

  for (int k = 0; k < count; ++k) {
    for (double& x : v) x = rng.uniform01() - 0.5;
    // Start orthogonal to the already found vectors so deflated directions stay out.
    for (int j = 0; j < k; ++j) {
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += v[i] * out.vectors(i, j);
      for (std::size_t i = 0; i < n; ++i) v[i] -= proj * out.vectors(i, j);
    }
    normalize(v);

    double lambda = 0.0;
    int it = 0;
    for (; it < options.max_iterations; ++it) {
      multiply(work, v, next);
      // Re-orthogonalize each step; deflation alone leaves rounding residue.
      for (int j = 0; j < k; ++j) {
        double proj = 0.0;
        for (std::size_t i = 0; i < n; ++i) proj += next[i] * out.vectors(i, j);
        for (std::size_t i = 0; i < n; ++i) next[i] -= proj * out.vectors(i, j);
      }
      const double norm = normalize(next);
      if (norm == 0.0) {
        lambda = 0.0;
        break;
      }
      double diff = 0.0;
      for (std::size_t i = 0; i < n; ++i) diff += (next[i] - v[i]) * (next[i] - v[i]);
      v.swap(next);
      if (std::sqrt(diff) < options.tolerance) {
        ++it;
        break;
      }
    }
    multiply(work, v, next);
    lambda = dot(v, next);
    out.iterations += it;
    out.values.push_back(lambda);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, static_cast<std::size_t>(k)) = v[i];
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) work(r, c) -= lambda * v[r] * v[c];
    }
  }
  return out;
}

bool cholesky_solve(const Matrix& a, std::span<const double> b, std::vector<double>& x) {
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) return false;
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  x.assign(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) x[i] -= l(i, k) * x[k];
    x[i] /= l(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) x[i] -= l(k, i) * x[k];
    x[i] /= l(i, i);
  }
  return true;
}

Matrix center_columns(const Matrix& m, std::vector<double>* means) {
  std::vector<double> mu(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) mu[c] += m(r, c);
  }
  if (m.rows() > 0) {
    for (double& v : mu) v /= static_cast<double>(m.rows());
  }
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) -= mu[c];
  }
  if (means) *means = std::move(mu);
  return out;
}

Matrix covariance(const Matrix& centered) {
  const std::size_t d = centered.cols();
  Matrix cov(d, d);
  for (std::size_t r = 0; r < centered.rows(); ++r) {
    const auto row = centered.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      if (row[i] == 0.0) continue;
      for (std::size_t j = i; j < d; ++j) cov(i, j) += row[i] * row[j];
    }
  }
  const double denom = centered.rows() > 1 ? static_cast<double>(centered.rows() - 1) : 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov(i, j) /= denom;
      cov(j, i) = cov(i, j);
    }
  }
  return cov;
}

}  // namespace ensx::linalg
