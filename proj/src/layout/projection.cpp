#include <algorithm>
#include <cmath>
#include <limits>

#include "ensx/core/error.hpp"
#include "ensx/core/rng.hpp"
#include "ensx/layout/layout.hpp"

namespace ensx::layout {

namespace {

// Orients an eigenvector column so the sum of its entries is non-negative;
// a zero sum falls back to making the first nonzero entry positive.
void orient_by_sum(Matrix& vectors, std::size_t col) {
  double sum = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < vectors.rows(); ++i) {
    sum += vectors(i, col);
    scale += std::abs(vectors(i, col));
  }
  bool flip = sum < 0.0;
  if (std::abs(sum) <= 1e-12 * std::max(scale, 1.0)) {
    flip = false;
    for (std::size_t i = 0; i < vectors.rows(); ++i) {
      if (std::abs(vectors(i, col)) > 1e-12) {
        flip = vectors(i, col) < 0.0;
        break;
      }
    }
  }
  if (flip) {
    for (std::size_t i = 0; i < vectors.rows(); ++i) vectors(i, col) = -vectors(i, col);
  }
}

// Orients so the entry of largest magnitude is positive (first one on ties).
void orient_by_peak(Matrix& vectors, std::size_t col) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < vectors.rows(); ++i) {
    if (std::abs(vectors(i, col)) > std::abs(vectors(best, col)) + 1e-12) best = i;
  }
  if (vectors.rows() > 0 && vectors(best, col) < 0.0) {
    for (std::size_t i = 0; i < vectors.rows(); ++i) vectors(i, col) = -vectors(i, col);
  }
}

Matrix squared_distances(const Matrix& x) {
  const std::size_t n = x.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double t = x(i, c) - x(j, c);
        s += t * t;
      }
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

}  // namespace

Matrix euclidean_distances(const Matrix& data) {
  Matrix d = squared_distances(data);
  for (auto& v : d.data()) v = std::sqrt(v);
  return d;
}

Projection pca_2d(const Matrix& data, const linalg::PowerIterationOptions& options) {
  const std::size_t n = data.rows(), dim = data.cols();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "pca needs at least 2 rows");
  Projection out;
  out.coords = Matrix(n, 2);
  const Matrix centered = linalg::center_columns(data);
  double total = 0.0, raw = 0.0;
  for (double v : centered.data()) total += v * v;
  for (double v : data.data()) raw += v * v;
  if (dim == 0 || total <= 1e-24 * std::max(raw, 1.0)) {
    out.degenerate = true;
    out.eigenvalues = {0.0, 0.0};
    return out;
  }
  const int count = static_cast<int>(std::min<std::size_t>(2, dim));
  auto eig = linalg::top_eigenpairs(linalg::covariance(centered), count, options);
  for (int k = 0; k < count; ++k) orient_by_sum(eig.vectors, static_cast<std::size_t>(k));
  out.eigenvalues = eig.values;
  out.eigenvalues.resize(2, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < count; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s += centered(i, c) * eig.vectors(c, static_cast<std::size_t>(k));
      out.coords(i, static_cast<std::size_t>(k)) = s;
    }
  }
  return out;
}

Projection mds_2d(const Matrix& dist, const linalg::PowerIterationOptions& options) {
  const std::size_t n = dist.rows();
  if (dist.cols() != n) throw Error(ErrorCode::InvalidArgument, "distance matrix must be square");
  double peak = 0.0;
  for (double v : dist.data()) peak = std::max(peak, std::abs(v));
  const double tol = 1e-9 * std::max(peak, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(dist(i, i)) > tol) throw Error(ErrorCode::InvalidArgument, "distance matrix diagonal must be zero");
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(dist(i, j) - dist(j, i)) > tol) throw Error(ErrorCode::InvalidArgument, "distance matrix is not symmetric");
      if (dist(i, j) < -tol) throw Error(ErrorCode::InvalidArgument, "distances must be non-negative");
    }
  }
  Projection out;
  out.coords = Matrix(n, 2);
  out.eigenvalues = {0.0, 0.0};
  if (n < 2) {
    out.degenerate = true;
    return out;
  }

  // B = -1/2 J D^2 J
  Matrix b(n, n);
  std::vector<double> row_mean(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d2 = dist(i, j) * dist(i, j);
      b(i, j) = d2;
      row_mean[i] += d2;
    }
    grand += row_mean[i];
    row_mean[i] /= static_cast<double>(n);
  }
  grand /= static_cast<double>(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) b(i, j) = -0.5 * (b(i, j) - row_mean[i] - row_mean[j] + grand);
  }

  const int count = 2;
  double shift = 0.0;  // Gershgorin bound on |eigenvalues|
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::abs(b(i, j));
    shift = std::max(shift, s);
  }
  auto eig = linalg::top_eigenpairs(b, count, options);
  if (std::any_of(eig.values.begin(), eig.values.end(), [](double v) { return v < 0.0; })) {
    // Power iteration found a negative eigenvalue of larger magnitude than the
    // positive ones; shift the spectrum so the largest algebraic ones dominate.
    Matrix shifted = b;
    for (std::size_t i = 0; i < n; ++i) shifted(i, i) += shift;
    auto opts = options;
    opts.max_iterations = options.max_iterations * 10;
    eig = linalg::top_eigenpairs(shifted, count, opts);
    for (auto& v : eig.values) v -= shift;
  }
  {
    // Smallest eigenvalue: top of shift*I - B.
    Matrix flipped(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) flipped(i, j) = (i == j ? shift : 0.0) - b(i, j);
    }
    const auto low = linalg::top_eigenpairs(flipped, 1, options);
    out.min_eigenvalue = shift - low.values[0];
    // Tiny negatives are rounding noise on Euclidean input; only flag real ones.
    out.clamped = out.min_eigenvalue < -1e-9 * std::max(1.0, std::abs(eig.values[0]));
  }
  for (int k = 0; k < count; ++k) {
    double lambda = eig.values[static_cast<std::size_t>(k)];
    if (lambda < 0.0) lambda = 0.0;
    out.eigenvalues[static_cast<std::size_t>(k)] = lambda;
    orient_by_peak(eig.vectors, static_cast<std::size_t>(k));
    const double s = std::sqrt(lambda);
    for (std::size_t i = 0; i < n; ++i) out.coords(i, static_cast<std::size_t>(k)) = eig.vectors(i, static_cast<std::size_t>(k)) * s;
  }
  out.degenerate = out.eigenvalues[0] == 0.0;
  return out;
}

TsneResult tsne_2d(const Matrix& data, const TsneOptions& options) {
  const std::size_t n = data.rows();
  if (n > options.max_points) {
    throw Error(ErrorCode::InvalidArgument, "t-SNE is exact O(N^2); " + std::to_string(n) + " points exceed the cap of " +
                                                std::to_string(options.max_points));
  }
  if (!(options.perplexity > 1.0 && options.perplexity < static_cast<double>(n) / 3.0)) {
    throw Error(ErrorCode::InvalidArgument, "perplexity must satisfy 1 < perplexity < N/3");
  }
  if (options.iterations < 1) throw Error(ErrorCode::InvalidArgument, "t-SNE needs at least one iteration");

  const Matrix d2 = squared_distances(data);
  TsneResult result;

  // Conditional affinities with per-point bandwidth found by bisection.
  Matrix p(n, n);
  const double target = std::log(options.perplexity);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double min_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) min_d = std::min(min_d, d2(i, j));
    }
    double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    double err = 0.0, sum = 0.0;
    for (int tries = 0; tries < 200; ++tries) {
      sum = 0.0;
      double weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          row[j] = 0.0;
          continue;
        }
        const double shifted = d2(i, j) - min_d;
        row[j] = std::exp(-shifted * beta);
        sum += row[j];
        weighted += shifted * row[j];
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      err = entropy - target;
      if (std::abs(err) < 1e-5) break;
      if (err > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
      }
    }
    result.max_perplexity_error = std::max(result.max_perplexity_error, std::abs(err));
    for (std::size_t j = 0; j < n; ++j) p(i, j) = row[j] / sum;
  }
  const double denom = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::max((p(i, j) + p(j, i)) / denom, 1e-12);
      p(i, j) = v;
      p(j, i) = v;
    }
    p(i, i) = 0.0;
  }

  Rng rng(options.seed, "tsne");
  Matrix y(n, 2);
  for (auto& v : y.data()) v = rng.normal() * 1e-4;
  Matrix update(n, 2), gains(n, 2, 1.0), grad(n, 2);
  Matrix num(n, n);

  auto affinities = [&]() {
    double sum_q = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = v;
        num(j, i) = v;
        sum_q += 2.0 * v;
      }
    }
    return sum_q;
  };
  auto kl = [&]() {
    const double sum_q = affinities();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / sum_q, 1e-12);
        total += p(i, j) * std::log(p(i, j) / q);
      }
    }
    return total;
  };

  for (int it = 0; it < options.iterations; ++it) {
    const bool early = it < options.exaggeration_iterations;
    const double exaggeration = early ? options.exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;
    const double sum_q = affinities();
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = (exaggeration * p(i, j) - num(i, j) / sum_q) * num(i, j);
        gx += w * (y(i, 0) - y(j, 0));
        gy += w * (y(i, 1) - y(j, 1));
      }
      grad(i, 0) = 4.0 * gx;
      grad(i, 1) = 4.0 * gy;
    }
    double mean[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        double& g = gains(i, c);
        g = (grad(i, c) > 0.0) != (update(i, c) > 0.0) ? g + 0.2 : g * 0.8;
        g = std::max(g, 0.01);
        update(i, c) = momentum * update(i, c) - options.learning_rate * g * grad(i, c);
        y(i, c) += update(i, c);
        mean[c] += y(i, c);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 2; ++c) y(i, c) -= mean[c] / static_cast<double>(n);
    }
    if (it + 1 == options.exaggeration_iterations) result.kl_after_exaggeration = kl();
  }
  result.kl_final = kl();
  if (options.iterations <= options.exaggeration_iterations) result.kl_after_exaggeration = result.kl_final;
  result.coords = std::move(y);
  return result;
}

}  // namespace ensx::layout
