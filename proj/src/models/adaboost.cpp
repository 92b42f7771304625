#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ensx/core/error.hpp"
#include "families.hpp"

namespace ensx::models::detail {

namespace {

struct Stump {
  std::int32_t feature = 0;
  double threshold = 0.0;
  std::int32_t left_class = 0;
  std::int32_t right_class = 0;
  double alpha = 0.0;
};

// Multi-class SAMME over depth-1 trees. Probabilities are a softmax over the
// per-class sums of stump weights.
class AdaBoostStumps final : public Classifier {
 public:
  AdaBoostStumps(std::size_t width, int k, std::vector<Stump> stumps)
      : width_(width), k_(k), stumps_(std::move(stumps)) {}

  Family family() const override { return Family::AdaBoostStumps; }
  std::size_t input_width() const override { return width_; }
  int num_classes() const override { return k_; }

  void predict_rows(const Matrix& features, std::span<const std::size_t> rows, Matrix& out) const override {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto margin = out.row(i);
      std::fill(margin.begin(), margin.end(), 0.0);
      const auto x = features.row(rows[i]);
      for (const auto& s : stumps_) {
        const int c = x[static_cast<std::size_t>(s.feature)] <= s.threshold ? s.left_class : s.right_class;
        margin[static_cast<std::size_t>(c)] += s.alpha;
      }
      const double top = *std::max_element(margin.begin(), margin.end());
      double z = 0.0;
      for (double& m : margin) {
        m = std::exp(m - top);
        z += m;
      }
      for (double& m : margin) m /= z;
    }
  }

  void save(ByteWriter& out) const override {
    out.put(static_cast<std::uint64_t>(width_));
    out.put(static_cast<std::int32_t>(k_));
    out.put(static_cast<std::uint32_t>(stumps_.size()));
    for (const auto& s : stumps_) {
      out.put(s.feature);
      out.put(s.threshold);
      out.put(s.left_class);
      out.put(s.right_class);
      out.put(s.alpha);
    }
  }

  static std::shared_ptr<const Classifier> load(ByteReader& in) {
    const auto width = static_cast<std::size_t>(in.get<std::uint64_t>());
    const int k = in.get<std::int32_t>();
    const auto count = in.get<std::uint32_t>();
    if (count > in.remaining()) throw Error(ErrorCode::Corrupt, "stump count exceeds payload");
    std::vector<Stump> stumps(count);
    for (auto& s : stumps) {
      s.feature = in.get<std::int32_t>();
      s.threshold = in.get<double>();
      s.left_class = in.get<std::int32_t>();
      s.right_class = in.get<std::int32_t>();
      s.alpha = in.get<double>();
      if (s.feature < 0 || static_cast<std::size_t>(s.feature) >= width || s.left_class < 0 || s.left_class >= k ||
          s.right_class < 0 || s.right_class >= k) {
        throw Error(ErrorCode::Corrupt, "stump references out of range");
      }
    }
    return std::make_shared<AdaBoostStumps>(width, k, std::move(stumps));
  }

 private:
  std::size_t width_;
  int k_;
  std::vector<Stump> stumps_;
};

struct SortedColumn {
  std::vector<double> values;         // ascending
  std::vector<std::uint32_t> order;   // local row per position
};

}  // namespace

std::shared_ptr<const Classifier> train_adaboost(const AdaBoostParams& p, const TrainingData& data) {
  const std::size_t n = data.rows.size();
  const std::size_t width = data.features.cols();
  const auto k = static_cast<std::size_t>(data.num_classes);

  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = data.labels[data.rows[i]];

  std::vector<SortedColumn> columns(width);
  for (std::size_t f = 0; f < width; ++f) {
    auto& col = columns[f];
    col.order.resize(n);
    for (std::size_t i = 0; i < n; ++i) col.order[i] = static_cast<std::uint32_t>(i);
    std::stable_sort(col.order.begin(), col.order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return data.features(data.rows[a], f) < data.features(data.rows[b], f);
    });
    col.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) col.values[i] = data.features(data.rows[col.order[i]], f);
  }

  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  std::vector<Stump> stumps;
  std::vector<double> left(k), total(k);

  for (int round = 0; round < p.rounds; ++round) {
    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) total[static_cast<std::size_t>(y[i])] += w[i];
    const double wsum = std::accumulate(total.begin(), total.end(), 0.0);

    // Weighted error of a side that predicts its heaviest class.
    auto side_error = [&](const std::vector<double>& counts, double mass, int& cls) {
      cls = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      return mass - counts[static_cast<std::size_t>(cls)];
    };

    Stump best;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < width; ++f) {
      const auto& col = columns[f];
      std::fill(left.begin(), left.end(), 0.0);
      double left_mass = 0.0;
      std::vector<double> right(k);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto row = col.order[i];
        left[static_cast<std::size_t>(y[row])] += w[row];
        left_mass += w[row];
        if (!(col.values[i] < col.values[i + 1])) continue;
        for (std::size_t c = 0; c < k; ++c) right[c] = total[c] - left[c];
        int lc = 0, rc = 0;
        const double err = side_error(left, left_mass, lc) + side_error(right, wsum - left_mass, rc);
        if (err < best_err) {
          const double a = col.values[i], b = col.values[i + 1];
          double t = a + (b - a) / 2.0;
          if (!(t < b)) t = a;
          best_err = err;
          best = {static_cast<std::int32_t>(f), t, lc, rc, 0.0};
        }
      }
    }
    if (!std::isfinite(best_err)) break;  // every feature constant

    const double err = std::clamp(best_err / wsum, 1e-10, 1.0);
    if (err >= 1.0 - 1.0 / static_cast<double>(k)) {
      // No better than chance: stop, but keep one weak stump so the model is defined.
      if (stumps.empty()) {
        best.alpha = 1e-3;
        stumps.push_back(best);
      }
      break;
    }
    best.alpha = p.learning_rate * (std::log((1.0 - err) / err) + std::log(static_cast<double>(k) - 1.0));
    stumps.push_back(best);

    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = data.features.row(data.rows[i]);
      const int pred = x[static_cast<std::size_t>(best.feature)] <= best.threshold ? best.left_class : best.right_class;
      if (pred != y[i]) w[i] *= std::exp(best.alpha);
      norm += w[i];
    }
    for (double& v : w) v /= norm;
    if (best_err <= 0.0) break;
  }
  if (stumps.empty()) {
    // Constant features: a stump that always predicts the majority class.
    const auto major = static_cast<std::int32_t>(std::max_element(total.begin(), total.end()) - total.begin());
    stumps.push_back({0, std::numeric_limits<double>::infinity(), major, major, 1e-3});
  }
  return std::make_shared<AdaBoostStumps>(width, data.num_classes, std::move(stumps));
}

std::shared_ptr<const Classifier> load_adaboost(ByteReader& in) { return AdaBoostStumps::load(in); }

}  // namespace ensx::models::detail
