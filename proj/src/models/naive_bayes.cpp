#include <algorithm>
#include <cmath>
#include <limits>

#include "ensx/core/error.hpp"
#include "families.hpp"

namespace ensx::models::detail {

namespace {

constexpr int kBins = 10;

// One likelihood term per source attribute. Categorical terms read the
// position of the active column of a one-hot block; numeric terms read one
// standardized column.
struct Term {
  enum Kind : std::uint8_t { Categorical = 0, Gaussian = 1, Binned = 2 };
  Kind kind = Gaussian;
  std::vector<std::uint32_t> columns;  // one-hot block, or a single numeric column
  double lo = 0.0, hi = 0.0;           // binned range
  std::vector<double> table;           // per class: log P(value|c) (cat/binned) or (mean, var) pairs
};

class NaiveBayes final : public Classifier {
 public:
  NaiveBayes(std::size_t width, int k, std::vector<double> log_prior, std::vector<Term> terms)
      : width_(width), k_(k), log_prior_(std::move(log_prior)), terms_(std::move(terms)) {}

  Family family() const override { return Family::NaiveBayes; }
  std::size_t input_width() const override { return width_; }
  int num_classes() const override { return k_; }

  void predict_rows(const Matrix& features, std::span<const std::size_t> rows, Matrix& out) const override {
    const auto k = static_cast<std::size_t>(k_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto x = features.row(rows[i]);
      auto post = out.row(i);
      std::copy(log_prior_.begin(), log_prior_.end(), post.begin());
      for (const auto& t : terms_) {
        switch (t.kind) {
          case Term::Categorical: {
            const auto slots = t.columns.size();
            std::size_t active = slots;
            for (std::size_t s = 0; s < slots; ++s) {
              if (x[t.columns[s]] > 0.5) {
                active = s;
                break;
              }
            }
            if (active == slots) break;  // no active category: term carries no evidence
            for (std::size_t c = 0; c < k; ++c) post[c] += t.table[c * slots + active];
            break;
          }
          case Term::Binned: {
            const auto b = bin_of(x[t.columns[0]], t.lo, t.hi);
            for (std::size_t c = 0; c < k; ++c) post[c] += t.table[c * kBins + b];
            break;
          }
          case Term::Gaussian: {
            const double v = x[t.columns[0]];
            for (std::size_t c = 0; c < k; ++c) {
              const double mean = t.table[2 * c], var = t.table[2 * c + 1];
              post[c] += -0.5 * std::log(2.0 * M_PI * var) - (v - mean) * (v - mean) / (2.0 * var);
            }
            break;
          }
        }
      }
      const double top = *std::max_element(post.begin(), post.end());
      double z = 0.0;
      for (double& v : post) {
        v = std::exp(v - top);
        z += v;
      }
      for (double& v : post) v /= z;
    }
  }

  static std::size_t bin_of(double v, double lo, double hi) {
    if (!(hi > lo)) return 0;
    const double pos = (v - lo) / (hi - lo) * kBins;
    return static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(kBins - 1)));
  }

  void save(ByteWriter& out) const override {
    out.put(static_cast<std::uint64_t>(width_));
    out.put(static_cast<std::int32_t>(k_));
    out.put_vector(log_prior_);
    out.put(static_cast<std::uint32_t>(terms_.size()));
    for (const auto& t : terms_) {
      out.put(static_cast<std::uint8_t>(t.kind));
      out.put_vector(t.columns);
      out.put(t.lo);
      out.put(t.hi);
      out.put_vector(t.table);
    }
  }

  static std::shared_ptr<const Classifier> load(ByteReader& in) {
    const auto width = static_cast<std::size_t>(in.get<std::uint64_t>());
    const int k = in.get<std::int32_t>();
    auto prior = in.get_vector<double>();
    const auto count = in.get<std::uint32_t>();
    if (count > in.remaining() || prior.size() != static_cast<std::size_t>(k)) {
      throw Error(ErrorCode::Corrupt, "naive bayes header inconsistent");
    }
    std::vector<Term> terms(count);
    for (auto& t : terms) {
      t.kind = static_cast<Term::Kind>(in.get<std::uint8_t>());
      t.columns = in.get_vector<std::uint32_t>();
      t.lo = in.get<double>();
      t.hi = in.get<double>();
      t.table = in.get_vector<double>();
      std::size_t expected = 0;
      switch (t.kind) {
        case Term::Categorical: expected = static_cast<std::size_t>(k) * t.columns.size(); break;
        case Term::Binned: expected = static_cast<std::size_t>(k) * kBins; break;
        case Term::Gaussian: expected = static_cast<std::size_t>(k) * 2; break;
        default: throw Error(ErrorCode::Corrupt, "unknown naive bayes term");
      }
      const bool bad_cols = t.columns.empty() || std::any_of(t.columns.begin(), t.columns.end(),
                                                             [&](std::uint32_t c) { return c >= width; });
      if (t.table.size() != expected || bad_cols) throw Error(ErrorCode::Corrupt, "naive bayes term malformed");
    }
    return std::make_shared<NaiveBayes>(width, k, std::move(prior), std::move(terms));
  }

 private:
  std::size_t width_;
  int k_;
  std::vector<double> log_prior_;
  std::vector<Term> terms_;
};

}  // namespace

std::shared_ptr<const Classifier> train_naive_bayes(const NaiveBayesParams& p, const TrainingData& data) {
  const std::size_t width = data.features.cols();
  const auto k = static_cast<std::size_t>(data.num_classes);
  const double alpha = p.alpha;

  std::vector<double> class_n(k, 0.0);
  for (std::size_t r : data.rows) class_n[static_cast<std::size_t>(data.labels[r])] += 1.0;
  const double n = static_cast<double>(data.rows.size());
  std::vector<double> log_prior(k);
  for (std::size_t c = 0; c < k; ++c) log_prior[c] = std::log((class_n[c] + alpha) / (n + alpha * static_cast<double>(k)));

  // Group encoded columns back into source attributes.
  std::vector<Term> terms;
  for (std::size_t col = 0; col < width;) {
    const bool one_hot = !data.columns.empty() && data.columns[col].category >= 0;
    Term t;
    if (one_hot) {
      const auto attr = data.columns[col].attribute;
      t.kind = Term::Categorical;
      while (col < width && data.columns[col].attribute == attr && data.columns[col].category >= 0) {
        t.columns.push_back(static_cast<std::uint32_t>(col++));
      }
    } else {
      t.kind = p.numeric == NumericLikelihood::Gaussian ? Term::Gaussian : Term::Binned;
      t.columns.push_back(static_cast<std::uint32_t>(col++));
    }
    terms.push_back(std::move(t));
  }

  // Gaussian variance floor, as a fraction of the largest column variance.
  double max_var = 0.0;
  for (auto& t : terms) {
    const std::size_t c0 = t.columns[0];
    switch (t.kind) {
      case Term::Categorical: {
        const std::size_t slots = t.columns.size();
        std::vector<double> counts(k * slots, 0.0);
        for (std::size_t r : data.rows) {
          const auto x = data.features.row(r);
          for (std::size_t s = 0; s < slots; ++s) {
            if (x[t.columns[s]] > 0.5) {
              counts[static_cast<std::size_t>(data.labels[r]) * slots + s] += 1.0;
              break;
            }
          }
        }
        t.table.resize(k * slots);
        for (std::size_t c = 0; c < k; ++c) {
          double row_total = 0.0;
          for (std::size_t s = 0; s < slots; ++s) row_total += counts[c * slots + s];
          for (std::size_t s = 0; s < slots; ++s) {
            t.table[c * slots + s] = std::log((counts[c * slots + s] + alpha) / (row_total + alpha * static_cast<double>(slots)));
          }
        }
        break;
      }
      case Term::Binned: {
        t.lo = std::numeric_limits<double>::infinity();
        t.hi = -t.lo;
        for (std::size_t r : data.rows) {
          t.lo = std::min(t.lo, data.features(r, c0));
          t.hi = std::max(t.hi, data.features(r, c0));
        }
        std::vector<double> counts(k * kBins, 0.0);
        for (std::size_t r : data.rows) {
          counts[static_cast<std::size_t>(data.labels[r]) * kBins + NaiveBayes::bin_of(data.features(r, c0), t.lo, t.hi)] += 1.0;
        }
        t.table.resize(k * kBins);
        for (std::size_t c = 0; c < k; ++c) {
          for (std::size_t b = 0; b < kBins; ++b) {
            t.table[c * kBins + b] = std::log((counts[c * kBins + b] + alpha) / (class_n[c] + alpha * kBins));
          }
        }
        break;
      }
      case Term::Gaussian: {
        t.table.assign(2 * k, 0.0);
        for (std::size_t r : data.rows) t.table[2 * static_cast<std::size_t>(data.labels[r])] += data.features(r, c0);
        for (std::size_t c = 0; c < k; ++c) t.table[2 * c] /= std::max(class_n[c], 1.0);
        for (std::size_t r : data.rows) {
          const auto c = static_cast<std::size_t>(data.labels[r]);
          const double d = data.features(r, c0) - t.table[2 * c];
          t.table[2 * c + 1] += d * d;
        }
        for (std::size_t c = 0; c < k; ++c) {
          t.table[2 * c + 1] /= std::max(class_n[c], 1.0);
          max_var = std::max(max_var, t.table[2 * c + 1]);
        }
        break;
      }
    }
  }
  const double floor = 1e-9 * std::max(max_var, 1.0);
  for (auto& t : terms) {
    if (t.kind != Term::Gaussian) continue;
    for (std::size_t c = 0; c < k; ++c) t.table[2 * c + 1] += floor;
  }
  return std::make_shared<NaiveBayes>(width, data.num_classes, std::move(log_prior), std::move(terms));
}

std::shared_ptr<const Classifier> load_naive_bayes(ByteReader& in) { return NaiveBayes::load(in); }

}  // namespace ensx::models::detail
