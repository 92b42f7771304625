#include <algorithm>
#include <cmath>

#include "ensx/core/error.hpp"
#include "families.hpp"

namespace ensx::models::detail {

namespace {

// Reference rows are kept in single precision; the stored state is exactly
// what predictions read, so a reloaded model predicts identically.
class NearestNeighbors final : public Classifier {
 public:
  NearestNeighbors(KnnParams params, std::size_t width, int k, std::vector<float> refs, std::vector<std::int32_t> labels)
      : params_(params), width_(width), k_(k), refs_(std::move(refs)), labels_(std::move(labels)) {}

  Family family() const override { return Family::Knn; }
  std::size_t input_width() const override { return width_; }
  int num_classes() const override { return k_; }

  void predict_rows(const Matrix& features, std::span<const std::size_t> rows, Matrix& out) const override {
    const std::size_t n = labels_.size();
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(params_.k), n);
    const std::size_t padded = padded_width();
    std::vector<float> query(padded, 0.0f);
    std::vector<std::pair<float, std::uint32_t>> dist(n);
    std::vector<double> votes(static_cast<std::size_t>(k_));

    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto x = features.row(rows[i]);
      for (std::size_t j = 0; j < width_; ++j) query[j] = static_cast<float>(x[j]);
      for (std::size_t r = 0; r < n; ++r) dist[r] = {squared_distance(query.data(), refs_.data() + r * padded, padded),
                                                     static_cast<std::uint32_t>(r)};
      // Pairs compare by distance then reference index, so ties go to the earlier row.
      std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
      std::sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k));

      std::fill(votes.begin(), votes.end(), 0.0);
      double total = 0.0;
      const bool exact_match = dist[0].first == 0.0f;
      for (std::size_t j = 0; j < k; ++j) {
        double weight = 1.0;
        if (params_.weighting == KnnWeighting::Distance) {
          // Exact matches take all the weight; otherwise inverse distance.
          weight = exact_match ? (dist[j].first == 0.0f ? 1.0 : 0.0) : 1.0 / std::sqrt(static_cast<double>(dist[j].first));
        }
        votes[static_cast<std::size_t>(labels_[dist[j].second])] += weight;
        total += weight;
      }
      // Laplace alpha = 1 over k effective votes.
      auto dst = out.row(i);
      const double kk = static_cast<double>(k);
      for (std::size_t c = 0; c < votes.size(); ++c) {
        dst[c] = (kk * votes[c] / total + 1.0) / (kk + static_cast<double>(k_));
      }
    }
  }

  void save(ByteWriter& out) const override {
    out.put(static_cast<std::int32_t>(params_.k));
    out.put(static_cast<std::uint8_t>(params_.weighting));
    out.put(static_cast<std::uint64_t>(width_));
    out.put(static_cast<std::int32_t>(k_));
    out.put_vector(labels_);
    out.put_vector(refs_);
  }

  static std::shared_ptr<const Classifier> load(ByteReader& in) {
    KnnParams p;
    p.k = in.get<std::int32_t>();
    p.weighting = static_cast<KnnWeighting>(in.get<std::uint8_t>());
    const auto width = static_cast<std::size_t>(in.get<std::uint64_t>());
    const int k = in.get<std::int32_t>();
    auto labels = in.get_vector<std::int32_t>();
    auto refs = in.get_vector<float>();
    const std::size_t padded = (width + 7) / 8 * 8;
    if (refs.size() != labels.size() * padded || labels.empty() || p.k < 1) {
      throw Error(ErrorCode::Corrupt, "knn reference block has wrong size");
    }
    for (auto l : labels) {
      if (l < 0 || l >= k) throw Error(ErrorCode::Corrupt, "knn label out of range");
    }
    return std::make_shared<NearestNeighbors>(p, width, k, std::move(refs), std::move(labels));
  }

 private:
  std::size_t padded_width() const { return (width_ + 7) / 8 * 8; }

  // Eight independent lanes so the compiler can vectorize the reduction.
  static float squared_distance(const float* a, const float* b, std::size_t padded) {
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    for (std::size_t j = 0; j < padded; j += 8) {
      for (std::size_t l = 0; l < 8; ++l) {
        const float d = a[j + l] - b[j + l];
        acc[l] += d * d;
      }
    }
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  }

  KnnParams params_;
  std::size_t width_;
  int k_;
  std::vector<float> refs_;  // rows padded to a multiple of 8
  std::vector<std::int32_t> labels_;
};

}  // namespace

std::shared_ptr<const Classifier> train_knn(const KnnParams& p, const TrainingData& data) {
  const std::size_t width = data.features.cols();
  const std::size_t padded = (width + 7) / 8 * 8;
  std::vector<float> refs(data.rows.size() * padded, 0.0f);
  std::vector<std::int32_t> labels;
  labels.reserve(data.rows.size());
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    const auto x = data.features.row(data.rows[i]);
    for (std::size_t j = 0; j < width; ++j) refs[i * padded + j] = static_cast<float>(x[j]);
    labels.push_back(data.labels[data.rows[i]]);
  }
  return std::make_shared<NearestNeighbors>(p, width, data.num_classes, std::move(refs), std::move(labels));
}

std::shared_ptr<const Classifier> load_knn(ByteReader& in) { return NearestNeighbors::load(in); }

}  // namespace ensx::models::detail
