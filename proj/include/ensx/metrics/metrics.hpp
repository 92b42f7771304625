#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ensx/core/matrix.hpp"

namespace ensx::library {
struct ModelLibrary;
}

namespace ensx::metrics {

/// Fraction of correct predictions over all rows. Throws on empty input.
double accuracy(std::span<const int> predicted, std::span<const int> truth);
/// Fraction of correct predictions over the given row indices. Throws on an empty subset.
double accuracy(std::span<const int> predicted, std::span<const int> truth, std::span<const std::size_t> subset);

struct FMeasure {
  double value = 0.0;
  bool vacuous = false;  // class never true and never predicted
};
FMeasure f_measure(std::span<const int> predicted, std::span<const int> truth, int cls);

struct Auc {
  double value = 0.5;
  bool degenerate = false;        // some present class had no negatives, or no class had both
  std::vector<double> per_class;  // one-vs-rest
};
/// Mann-Whitney AUC of `scores` for `positive` flags, midranks for ties.
/// Returns 0.5 (degenerate) without both positives and negatives.
Auc binary_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);
/// Prevalence-weighted one-vs-rest AUC. With K = 2 this is the AUC of column 1.
Auc auc_weighted(const Matrix& probs, std::span<const int> truth);

struct QStat {
  double value = 0.0;
  bool degenerate = false;
};
/// Yule's Q over two correctness vectors. Denominator 0 gives 0, flagged.
QStat q_statistic(std::span<const std::uint8_t> correct_a, std::span<const std::uint8_t> correct_b);
/// Symmetric Q matrix with unit diagonal.
Matrix q_matrix(const std::vector<std::vector<std::uint8_t>>& correct);

struct DiversityCoords {
  std::vector<double> values;
  bool degenerate = false;
};
/// Projects the column-centered rows of Q onto their first principal
/// component. Sign: non-negative correlation with the row means of Q.
DiversityCoords diversity_coordinates(const Matrix& q);

/// Argmax (lowest-index tie-break) of every row.
std::vector<int> argmax_rows(const Matrix& probs);
std::vector<std::uint8_t> correctness(std::span<const int> predicted, std::span<const int> truth);

/// Accuracy of each library model's test predictions over `selection`.
std::vector<double> local_accuracy_all_models(const library::ModelLibrary& lib,
                                              std::span<const std::size_t> selection);

enum class MetricKind { Acc, AucW, F1, AccCv, DivQ, AccLocal };

struct MetricName {
  MetricKind kind = MetricKind::Acc;
  int cls = -1;  // F1 only

  std::string str(const std::vector<std::string>& classes) const;
};
/// Parses acc, auc_w, f1:<class>, acc_cv, div_q, acc_local. The class of f1
/// may be given by name or index.
MetricName parse_metric(const std::string& name, const std::vector<std::string>& classes);

}  // namespace ensx::metrics
