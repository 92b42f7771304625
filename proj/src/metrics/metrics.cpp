#include "ensx/metrics/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "ensx/core/error.hpp"
#include "ensx/core/linalg.hpp"
#include "ensx/library/library.hpp"

namespace ensx::metrics {

namespace {

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) throw Error(ErrorCode::InvalidArgument, "length mismatch");
}

}  // namespace

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  require_same_length(predicted.size(), truth.size());
  if (truth.empty()) throw Error(ErrorCode::InvalidArgument, "accuracy over an empty set");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += predicted[i] == truth[i];
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

double accuracy(std::span<const int> predicted, std::span<const int> truth, std::span<const std::size_t> subset) {
  require_same_length(predicted.size(), truth.size());
  if (subset.empty()) throw Error(ErrorCode::InvalidArgument, "accuracy over an empty subset");
  std::size_t ok = 0;
  for (auto i : subset) {
    if (i >= truth.size()) throw Error(ErrorCode::InvalidArgument, "instance id out of range");
    ok += predicted[i] == truth[i];
  }
  return static_cast<double>(ok) / static_cast<double>(subset.size());
}

FMeasure f_measure(std::span<const int> predicted, std::span<const int> truth, int cls) {
  require_same_length(predicted.size(), truth.size());
  if (truth.empty()) throw Error(ErrorCode::InvalidArgument, "f-measure over an empty set");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == cls, t = truth[i] == cls;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp + fn == 0) return {1.0, true};
  if (tp == 0) return {0.0, false};
  // 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN).
  return {2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn), false};
}

Auc binary_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  require_same_length(scores.size(), positive.size());
  const std::size_t n = scores.size();
  std::size_t npos = 0;
  for (auto p : positive) npos += p != 0;
  const std::size_t nneg = n - npos;
  Auc out;
  if (npos == 0 || nneg == 0) {
    out.degenerate = true;
    return out;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j+1 share their midrank.
    const double midrank = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t t = i; t <= j; ++t) {
      if (positive[order[t]]) rank_sum += midrank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(npos), q = static_cast<double>(nneg);
  out.value = (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
  return out;
}

Auc auc_weighted(const Matrix& probs, std::span<const int> truth) {
  require_same_length(probs.rows(), truth.size());
  if (truth.size() < 2) throw Error(ErrorCode::InvalidArgument, "auc needs at least 2 instances");
  const std::size_t n = truth.size(), k = probs.cols();
  std::vector<double> column(n);
  std::vector<std::uint8_t> positive(n);
  std::vector<std::size_t> count(k, 0);
  for (int t : truth) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) throw Error(ErrorCode::InvalidArgument, "label out of range");
    ++count[static_cast<std::size_t>(t)];
  }
  Auc out;
  out.per_class.assign(k, 0.5);
  double weighted = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = probs(i, c);
      positive[i] = truth[i] == static_cast<int>(c);
    }
    const auto a = binary_auc(column, positive);
    out.per_class[c] = a.value;
    if (count[c] > 0) {
      out.degenerate = out.degenerate || a.degenerate;
      weighted += a.value * static_cast<double>(count[c]) / static_cast<double>(n);
    }
  }
  out.value = k == 2 ? out.per_class[1] : weighted;
  return out;
}

QStat q_statistic(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  require_same_length(a.size(), b.size());
  if (a.empty()) throw Error(ErrorCode::InvalidArgument, "q-statistic over empty vectors");
  double n11 = 0, n00 = 0, n10 = 0, n01 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    n11 += x && y;
    n00 += !x && !y;
    n10 += x && !y;
    n01 += !x && y;
  }
  const double den = n11 * n00 + n01 * n10;
  if (den == 0.0) return {0.0, true};
  return {(n11 * n00 - n01 * n10) / den, false};
}

Matrix q_matrix(const std::vector<std::vector<std::uint8_t>>& correct) {
  const std::size_t m = correct.size();
  Matrix q(m, m, 1.0);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      const double v = q_statistic(correct[a], correct[b]).value;
      q(a, b) = v;
      q(b, a) = v;
    }
  }
  return q;
}

DiversityCoords diversity_coordinates(const Matrix& q) {
  const std::size_t m = q.rows();
  DiversityCoords out;
  out.values.assign(m, 0.0);
  if (m < 2) {
    out.degenerate = true;
    return out;
  }
  const Matrix centered = linalg::center_columns(q);
  double total = 0.0;
  for (double v : centered.data()) total += v * v;
  if (total / static_cast<double>(m - 1) < 1e-12) {
    out.degenerate = true;
    return out;
  }
  const auto eig = linalg::top_eigenpairs(linalg::covariance(centered), 1);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += centered(i, j) * eig.vectors(j, 0);
    out.values[i] = s;
  }
  std::vector<double> row_mean(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) row_mean[i] += q(i, j);
    row_mean[i] /= static_cast<double>(m);
  }
  const double mean_of_means = std::accumulate(row_mean.begin(), row_mean.end(), 0.0) / static_cast<double>(m);
  double cov = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    cov += out.values[i] * (row_mean[i] - mean_of_means);
    scale += std::abs(out.values[i]);
  }
  bool flip = cov < 0.0;
  if (std::abs(cov) <= 1e-12 * std::max(scale, 1.0)) {
    // Uncorrelated with the row means: make the first nonzero coordinate positive.
    flip = false;
    for (double v : out.values) {
      if (std::abs(v) > 1e-12) {
        flip = v < 0.0;
        break;
      }
    }
  }
  if (flip) {
    for (auto& v : out.values) v = -v;
  }
  return out;
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) out[r] = argmax(probs.row(r));
  return out;
}

std::vector<std::uint8_t> correctness(std::span<const int> predicted, std::span<const int> truth) {
  require_same_length(predicted.size(), truth.size());
  std::vector<std::uint8_t> out(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) out[i] = predicted[i] == truth[i];
  return out;
}

std::vector<double> local_accuracy_all_models(const library::ModelLibrary& lib,
                                              std::span<const std::size_t> selection) {
  if (selection.empty()) throw Error(ErrorCode::InvalidArgument, "empty selection");
  for (auto id : selection) {
    if (id >= lib.test_rows()) throw Error(ErrorCode::InvalidArgument, "instance id out of range");
  }
  std::vector<double> out(lib.size());
  for (std::size_t m = 0; m < lib.size(); ++m) {
    const Matrix& p = lib.caches[m].test_probs;
    std::size_t ok = 0;
    for (auto id : selection) ok += argmax(p.row(id)) == lib.test_labels[id];
    out[m] = static_cast<double>(ok) / static_cast<double>(selection.size());
  }
  return out;
}

std::string MetricName::str(const std::vector<std::string>& classes) const {
  switch (kind) {
    case MetricKind::Acc: return "acc";
    case MetricKind::AucW: return "auc_w";
    case MetricKind::AccCv: return "acc_cv";
    case MetricKind::DivQ: return "div_q";
    case MetricKind::AccLocal: return "acc_local";
    case MetricKind::F1:
      return "f1:" + (cls >= 0 && static_cast<std::size_t>(cls) < classes.size() ? classes[static_cast<std::size_t>(cls)]
                                                                                   : std::to_string(cls));
  }
  return "?";
}

MetricName parse_metric(const std::string& name, const std::vector<std::string>& classes) {
  if (name == "acc") return {MetricKind::Acc};
  if (name == "auc_w") return {MetricKind::AucW};
  if (name == "acc_cv") return {MetricKind::AccCv};
  if (name == "div_q") return {MetricKind::DivQ};
  if (name == "acc_local") return {MetricKind::AccLocal};
  if (name.rfind("f1:", 0) == 0) {
    const std::string cls = name.substr(3);
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (classes[c] == cls) return {MetricKind::F1, static_cast<int>(c)};
    }
    int idx = -1;
    const auto [ptr, ec] = std::from_chars(cls.data(), cls.data() + cls.size(), idx);
    if (ec == std::errc() && ptr == cls.data() + cls.size() && idx >= 0 &&
        static_cast<std::size_t>(idx) < classes.size()) {
      return {MetricKind::F1, idx};
    }
    throw Error(ErrorCode::InvalidArgument, "unknown class in metric '" + name + "'");
  }
  throw Error(ErrorCode::InvalidArgument, "unknown metric '" + name + "'");
}

}  // namespace ensx::metrics
