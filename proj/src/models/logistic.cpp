#include <algorithm>
#include <cmath>

#include "ensx/core/error.hpp"
#include "ensx/core/linalg.hpp"
#include "families.hpp"

namespace ensx::models::detail {

namespace {

// Multinomial logistic regression; the last class is the reference with logit 0.
// Weights are stored as (K-1) rows of D coefficients plus an intercept.
class Logistic final : public Classifier {
 public:
  Logistic(std::size_t width, int k, std::vector<double> weights)
      : width_(width), k_(k), weights_(std::move(weights)) {}

  Family family() const override { return Family::LogisticRegression; }
  std::size_t input_width() const override { return width_; }
  int num_classes() const override { return k_; }

  void predict_rows(const Matrix& features, std::span<const std::size_t> rows, Matrix& out) const override {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto p = out.row(i);
      probabilities(weights_, width_, k_, features.row(rows[i]), p);
    }
  }

  static void probabilities(const std::vector<double>& w, std::size_t width, int k, std::span<const double> x,
                            std::span<double> p) {
    const std::size_t stride = width + 1;
    const auto free = static_cast<std::size_t>(k - 1);
    double top = 0.0;
    for (std::size_t a = 0; a < free; ++a) {
      double z = w[a * stride + width];
      for (std::size_t j = 0; j < width; ++j) z += w[a * stride + j] * x[j];
      p[a] = z;
      top = std::max(top, z);
    }
    p[free] = 0.0;
    double sum = 0.0;
    for (std::size_t a = 0; a <= free; ++a) {
      p[a] = std::exp(p[a] - top);
      sum += p[a];
    }
    for (std::size_t a = 0; a <= free; ++a) p[a] /= sum;
  }

  void save(ByteWriter& out) const override {
    out.put(static_cast<std::uint64_t>(width_));
    out.put(static_cast<std::int32_t>(k_));
    out.put_vector(weights_);
  }

  static std::shared_ptr<const Classifier> load(ByteReader& in) {
    const auto width = static_cast<std::size_t>(in.get<std::uint64_t>());
    const int k = in.get<std::int32_t>();
    auto w = in.get_vector<double>();
    if (k < 2 || w.size() != static_cast<std::size_t>(k - 1) * (width + 1)) {
      throw Error(ErrorCode::Corrupt, "logistic weight block has wrong size");
    }
    return std::make_shared<Logistic>(width, k, std::move(w));
  }

 private:
  std::size_t width_;
  int k_;
  std::vector<double> weights_;
};

struct SparseRow {
  std::vector<std::uint32_t> index;  // includes the intercept slot `width`
  std::vector<double> value;
};

}  // namespace

std::shared_ptr<const Classifier> train_logistic(const LogisticParams& p, const TrainingData& data) {
  const std::size_t width = data.features.cols();
  const std::size_t stride = width + 1;
  const int k = data.num_classes;
  const auto free = static_cast<std::size_t>(k - 1);
  const std::size_t dim = free * stride;
  const std::size_t n = data.rows.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  constexpr double kRidge = 1e-8;

  std::vector<SparseRow> xs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = data.features.row(data.rows[i]);
    for (std::size_t j = 0; j < width; ++j) {
      if (x[j] != 0.0) {
        xs[i].index.push_back(static_cast<std::uint32_t>(j));
        xs[i].value.push_back(x[j]);
      }
    }
    xs[i].index.push_back(static_cast<std::uint32_t>(width));
    xs[i].value.push_back(1.0);
  }

  auto penalty = [&](std::size_t param) { return (param % stride == width ? 0.0 : p.lambda) + kRidge; };

  std::vector<double> probs(static_cast<std::size_t>(k));
  auto objective = [&](const std::vector<double>& w) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Logistic::probabilities(w, width, k, data.features.row(data.rows[i]), probs);
      f -= std::log(std::max(probs[static_cast<std::size_t>(data.labels[data.rows[i]])], 1e-300));
    }
    f *= inv_n;
    for (std::size_t q = 0; q < dim; ++q) f += 0.5 * penalty(q) * w[q] * w[q];
    return f;
  };

  std::vector<double> w(dim, 0.0), grad(dim), step(dim), trial(dim);
  Matrix hess(dim, dim);
  double f = objective(w);
  for (int iter = 0; iter < 100; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(hess.data().begin(), hess.data().end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      Logistic::probabilities(w, width, k, data.features.row(data.rows[i]), probs);
      const auto y = static_cast<std::size_t>(data.labels[data.rows[i]]);
      const auto& row = xs[i];
      for (std::size_t a = 0; a < free; ++a) {
        const double r = probs[a] - (a == y ? 1.0 : 0.0);
        for (std::size_t s = 0; s < row.index.size(); ++s) grad[a * stride + row.index[s]] += r * row.value[s];
        for (std::size_t b = 0; b < free; ++b) {
          const double h = probs[a] * ((a == b ? 1.0 : 0.0) - probs[b]);
          if (h == 0.0) continue;
          for (std::size_t s = 0; s < row.index.size(); ++s) {
            const double hs = h * row.value[s];
            double* dst = &hess(a * stride + row.index[s], b * stride);
            for (std::size_t t = 0; t < row.index.size(); ++t) dst[row.index[t]] += hs * row.value[t];
          }
        }
      }
    }
    for (std::size_t q = 0; q < dim; ++q) {
      grad[q] = grad[q] * inv_n + penalty(q) * w[q];
      for (std::size_t r = 0; r < dim; ++r) hess(q, r) *= inv_n;
      hess(q, q) += penalty(q);
    }

    double shift = 0.0;
    while (!linalg::cholesky_solve(hess, grad, step)) {
      shift = shift == 0.0 ? 1e-8 : shift * 10.0;
      for (std::size_t q = 0; q < dim; ++q) hess(q, q) += shift;
    }

    double slope = 0.0;
    for (std::size_t q = 0; q < dim; ++q) slope += grad[q] * step[q];
    double t = 1.0, f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      for (std::size_t q = 0; q < dim; ++q) trial[q] = w[q] - t * step[q];
      f_new = objective(trial);
      if (f_new <= f - 1e-4 * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    double max_move = 0.0;
    for (std::size_t q = 0; q < dim; ++q) max_move = std::max(max_move, std::abs(trial[q] - w[q]));
    w.swap(trial);
    const double f_old = f;
    f = f_new;
    if (max_move < 1e-8 || f_old - f < 1e-13 * std::max(1.0, std::abs(f))) break;
  }
  return std::make_shared<Logistic>(width, k, std::move(w));
}

std::shared_ptr<const Classifier> load_logistic(ByteReader& in) { return Logistic::load(in); }

}  // namespace ensx::models::detail
