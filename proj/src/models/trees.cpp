#include <algorithm>
#include <cmath>
#include <numeric>

#include "ensx/core/error.hpp"
#include "families.hpp"

namespace ensx::models::detail {

namespace {

// Training rows re-indexed 0..n-1 with every feature replaced by the rank of
// its value among the distinct training values. Split search then works on
// integer codes, and thresholds are midpoints between adjacent distinct values.
struct CodedFeatures {
  std::size_t rows = 0;
  std::vector<std::vector<double>> distinct;
  std::vector<std::vector<std::uint32_t>> codes;
  std::vector<int> labels;
};

CodedFeatures code_features(const TrainingData& data) {
  CodedFeatures cf;
  cf.rows = data.rows.size();
  const std::size_t width = data.features.cols();
  cf.distinct.resize(width);
  cf.codes.resize(width);
  cf.labels.reserve(cf.rows);
  for (std::size_t r : data.rows) cf.labels.push_back(data.labels[r]);

  std::vector<double> column(cf.rows);
  for (std::size_t f = 0; f < width; ++f) {
    for (std::size_t i = 0; i < cf.rows; ++i) column[i] = data.features(data.rows[i], f);
    auto& d = cf.distinct[f];
    d = column;
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
    auto& codes = cf.codes[f];
    codes.resize(cf.rows);
    for (std::size_t i = 0; i < cf.rows; ++i) {
      codes[i] = static_cast<std::uint32_t>(std::lower_bound(d.begin(), d.end(), column[i]) - d.begin());
    }
  }
  return cf;
}

struct Node {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::int32_t leaf = -1;  // offset into Tree::leaf_probs
};

struct Tree {
  std::vector<Node> nodes;
  std::vector<double> leaf_probs;

  const double* leaf_for(std::span<const double> x) const {
    std::size_t n = 0;
    while (nodes[n].feature >= 0) {
      n = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[n].feature)] <= nodes[n].threshold ? nodes[n].left
                                                                                                      : nodes[n].right);
    }
    return leaf_probs.data() + static_cast<std::size_t>(nodes[n].leaf);
  }
};

struct GrowOptions {
  int max_depth = 0;  // 0 = unlimited
  int min_leaf = 1;
  std::size_t mtry = 0;  // 0 = all features
};

struct SplitChoice {
  int feature = -1;
  std::uint32_t left_max_code = 0;
  double threshold = 0.0;
  double score = -1.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const CodedFeatures& cf, int num_classes, GrowOptions options, Rng* rng)
      : cf_(cf), k_(static_cast<std::size_t>(num_classes)), options_(options), rng_(rng) {
    features_.resize(cf.codes.size());
    std::iota(features_.begin(), features_.end(), 0);
  }

  Tree grow(const std::vector<double>& weights) {
    weights_ = &weights;
    members_.clear();
    for (std::size_t i = 0; i < cf_.rows; ++i) {
      if (weights[i] > 0.0) members_.push_back(static_cast<std::uint32_t>(i));
    }
    tree_ = Tree{};
    build(0, members_.size(), 0);
    return std::move(tree_);
  }

 private:
  int make_leaf(const std::vector<double>& totals, double n) {
    Node node;
    node.leaf = static_cast<std::int32_t>(tree_.leaf_probs.size());
    for (std::size_t c = 0; c < k_; ++c) tree_.leaf_probs.push_back((totals[c] + 1.0) / (n + static_cast<double>(k_)));
    tree_.nodes.push_back(node);
    return static_cast<int>(tree_.nodes.size() - 1);
  }

  static double purity_score(const double* counts, std::size_t k, double n) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += counts[c] * counts[c];
    return s / n;
  }

  // Visits the node's rows in ascending code order, evaluating a split between
  // every pair of adjacent codes present.
  void scan_feature(int f, std::size_t begin, std::size_t end, const std::vector<double>& totals, double n,
                    SplitChoice& best) {
    const auto& codes = cf_.codes[static_cast<std::size_t>(f)];
    const auto& distinct = cf_.distinct[static_cast<std::size_t>(f)];
    const std::size_t nd = distinct.size();
    if (nd < 2) return;
    const std::size_t count = end - begin;
    left_.assign(k_, 0.0);
    double left_n = 0.0;
    bool have_prev = false;
    std::uint32_t prev = 0;

    auto evaluate = [&](std::uint32_t next_code) {
      const double right_n = n - left_n;
      if (left_n < options_.min_leaf || right_n < options_.min_leaf) return;
      double right_sq = 0.0;
      for (std::size_t c = 0; c < k_; ++c) {
        const double r = totals[c] - left_[c];
        right_sq += r * r;
      }
      const double score = purity_score(left_.data(), k_, left_n) + right_sq / right_n;
      if (score > best.score) {
        const double a = distinct[prev];
        const double b = distinct[next_code];
        double t = a + (b - a) / 2.0;
        if (!(t < b)) t = a;
        best = {f, prev, t, score};
      }
    };

    if (nd <= 4 * count) {
      buckets_.assign(nd * k_, 0.0);
      bucket_n_.assign(nd, 0.0);
      for (std::size_t i = begin; i < end; ++i) {
        const auto row = members_[i];
        const double w = (*weights_)[row];
        buckets_[codes[row] * k_ + static_cast<std::size_t>(cf_.labels[row])] += w;
        bucket_n_[codes[row]] += w;
      }
      for (std::uint32_t code = 0; code < nd; ++code) {
        if (bucket_n_[code] == 0.0) continue;
        if (have_prev) evaluate(code);
        for (std::size_t c = 0; c < k_; ++c) left_[c] += buckets_[code * k_ + c];
        left_n += bucket_n_[code];
        prev = code;
        have_prev = true;
      }
    } else {
      sorted_.clear();
      for (std::size_t i = begin; i < end; ++i) sorted_.emplace_back(codes[members_[i]], members_[i]);
      std::sort(sorted_.begin(), sorted_.end());
      for (std::size_t i = 0; i < sorted_.size();) {
        const std::uint32_t code = sorted_[i].first;
        if (have_prev) evaluate(code);
        for (; i < sorted_.size() && sorted_[i].first == code; ++i) {
          const auto row = sorted_[i].second;
          const double w = (*weights_)[row];
          left_[static_cast<std::size_t>(cf_.labels[row])] += w;
          left_n += w;
        }
        prev = code;
        have_prev = true;
      }
    }
  }

  int build(std::size_t begin, std::size_t end, int depth) {
    std::vector<double> totals(k_, 0.0);
    double n = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = members_[i];
      totals[static_cast<std::size_t>(cf_.labels[row])] += (*weights_)[row];
      n += (*weights_)[row];
    }
    const bool pure = std::count_if(totals.begin(), totals.end(), [](double t) { return t > 0.0; }) <= 1;
    if (pure || (options_.max_depth > 0 && depth >= options_.max_depth) || n < 2.0 * options_.min_leaf) {
      return make_leaf(totals, n);
    }

    std::span<const std::size_t> candidates(features_);
    if (options_.mtry > 0 && options_.mtry < features_.size()) {
      for (std::size_t i = 0; i < options_.mtry; ++i) {
        std::swap(features_[i], features_[i + rng_->below(features_.size() - i)]);
      }
      chosen_.assign(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(options_.mtry));
      std::sort(chosen_.begin(), chosen_.end());
      candidates = chosen_;
    }

    SplitChoice best;
    const double parent = purity_score(totals.data(), k_, n);
    best.score = parent + 1e-12;
    for (std::size_t f : candidates) scan_feature(static_cast<int>(f), begin, end, totals, n, best);
    if (best.feature < 0) return make_leaf(totals, n);

    const auto& codes = cf_.codes[static_cast<std::size_t>(best.feature)];
    const auto mid = std::stable_partition(members_.begin() + static_cast<std::ptrdiff_t>(begin),
                                           members_.begin() + static_cast<std::ptrdiff_t>(end),
                                           [&](std::uint32_t row) { return codes[row] <= best.left_max_code; });
    const auto split = static_cast<std::size_t>(mid - members_.begin());

    const int self = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back(Node{best.feature, best.threshold, -1, -1, -1});
    const int left = build(begin, split, depth + 1);
    const int right = build(split, end, depth + 1);
    tree_.nodes[static_cast<std::size_t>(self)].left = left;
    tree_.nodes[static_cast<std::size_t>(self)].right = right;
    return self;
  }

  const CodedFeatures& cf_;
  std::size_t k_;
  GrowOptions options_;
  Rng* rng_;
  const std::vector<double>* weights_ = nullptr;
  std::vector<std::uint32_t> members_;
  std::vector<std::size_t> features_;
  std::vector<std::size_t> chosen_;
  std::vector<double> left_;
  std::vector<double> buckets_;
  std::vector<double> bucket_n_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> sorted_;
  Tree tree_;
};

class TreeEnsemble final : public Classifier {
 public:
  TreeEnsemble(Family family, std::size_t width, int num_classes, std::vector<Tree> trees)
      : family_(family), width_(width), k_(num_classes), trees_(std::move(trees)) {}

  Family family() const override { return family_; }
  std::size_t input_width() const override { return width_; }
  int num_classes() const override { return k_; }

  void predict_rows(const Matrix& features, std::span<const std::size_t> rows, Matrix& out) const override {
    const auto k = static_cast<std::size_t>(k_);
    const double inv = 1.0 / static_cast<double>(trees_.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto dst = out.row(i);
      std::fill(dst.begin(), dst.end(), 0.0);
      const auto x = features.row(rows[i]);
      for (const auto& tree : trees_) {
        const double* p = tree.leaf_for(x);
        for (std::size_t c = 0; c < k; ++c) dst[c] += p[c];
      }
      for (double& v : dst) v *= inv;
    }
  }

  void save(ByteWriter& out) const override {
    out.put(static_cast<std::uint64_t>(width_));
    out.put(static_cast<std::int32_t>(k_));
    out.put(static_cast<std::uint32_t>(trees_.size()));
    for (const auto& t : trees_) {
      out.put(static_cast<std::uint32_t>(t.nodes.size()));
      for (const auto& n : t.nodes) {
        out.put(n.feature);
        out.put(n.threshold);
        out.put(n.left);
        out.put(n.right);
        out.put(n.leaf);
      }
      out.put_vector(t.leaf_probs);
    }
  }

  static std::shared_ptr<const Classifier> load(Family family, ByteReader& in) {
    const auto width = static_cast<std::size_t>(in.get<std::uint64_t>());
    const int k = in.get<std::int32_t>();
    const auto count = in.get<std::uint32_t>();
    std::vector<Tree> trees(count);
    for (auto& t : trees) {
      const auto nodes = in.get<std::uint32_t>();
      if (nodes > in.remaining()) throw Error(ErrorCode::Corrupt, "tree node count exceeds payload");
      t.nodes.resize(nodes);
      for (auto& n : t.nodes) {
        n.feature = in.get<std::int32_t>();
        n.threshold = in.get<double>();
        n.left = in.get<std::int32_t>();
        n.right = in.get<std::int32_t>();
        n.leaf = in.get<std::int32_t>();
      }
      t.leaf_probs = in.get_vector<double>();
      for (const auto& n : t.nodes) {
        const bool bad_leaf = n.feature < 0 && (n.leaf < 0 || static_cast<std::size_t>(n.leaf) + static_cast<std::size_t>(k) > t.leaf_probs.size());
        const bool bad_split = n.feature >= 0 && (static_cast<std::size_t>(n.feature) >= width || n.left < 0 ||
                                                  n.right < 0 || static_cast<std::size_t>(n.left) >= nodes ||
                                                  static_cast<std::size_t>(n.right) >= nodes);
        if (bad_leaf || bad_split) throw Error(ErrorCode::Corrupt, "tree node references out of range");
      }
    }
    return std::make_shared<TreeEnsemble>(family, width, k, std::move(trees));
  }

 private:
  Family family_;
  std::size_t width_;
  int k_;
  std::vector<Tree> trees_;
};

std::vector<double> bootstrap_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) w[rng.below(n)] += 1.0;
  return w;
}

std::size_t resolve_mtry(Mtry m, std::size_t width) {
  const double d = static_cast<double>(width);
  const double v = m == Mtry::Sqrt ? std::floor(std::sqrt(d)) : std::floor(d / 3.0);
  return std::max<std::size_t>(1, static_cast<std::size_t>(v));
}

}  // namespace

std::shared_ptr<const Classifier> train_decision_tree(const DecisionTreeParams& p, const TrainingData& data) {
  const auto cf = code_features(data);
  TreeBuilder builder(cf, data.num_classes, {p.max_depth, p.min_leaf, 0}, nullptr);
  std::vector<Tree> trees;
  trees.push_back(builder.grow(std::vector<double>(cf.rows, 1.0)));
  return std::make_shared<TreeEnsemble>(Family::DecisionTree, data.features.cols(), data.num_classes, std::move(trees));
}

std::shared_ptr<const Classifier> train_random_forest(const RandomForestParams& p, const TrainingData& data, Rng& rng) {
  const auto cf = code_features(data);
  TreeBuilder builder(cf, data.num_classes, {0, p.min_leaf, resolve_mtry(p.mtry, data.features.cols())}, &rng);
  std::vector<Tree> trees;
  for (int t = 0; t < p.trees; ++t) trees.push_back(builder.grow(bootstrap_weights(cf.rows, rng)));
  return std::make_shared<TreeEnsemble>(Family::RandomForest, data.features.cols(), data.num_classes, std::move(trees));
}

std::shared_ptr<const Classifier> train_bagged_trees(const BaggedTreesParams& p, const TrainingData& data, Rng& rng) {
  const auto cf = code_features(data);
  TreeBuilder builder(cf, data.num_classes, {p.max_depth, 1, 0}, nullptr);
  std::vector<Tree> trees;
  for (int t = 0; t < p.bags; ++t) trees.push_back(builder.grow(bootstrap_weights(cf.rows, rng)));
  return std::make_shared<TreeEnsemble>(Family::BaggedTrees, data.features.cols(), data.num_classes, std::move(trees));
}

std::shared_ptr<const Classifier> load_forest(Family family, ByteReader& in) { return TreeEnsemble::load(family, in); }

}  // namespace ensx::models::detail
