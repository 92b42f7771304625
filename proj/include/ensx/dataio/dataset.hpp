#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ensx/core/matrix.hpp"

namespace ensx::dataio {

enum class AttributeKind { Numeric, Categorical };

struct Attribute {
  std::string name;
  AttributeKind kind = AttributeKind::Numeric;
  std::vector<std::string> categories;  // categorical only, first-appearance order
  double min = 0.0;                     // numeric only; over training rows once split
  double max = 0.0;

  bool is_numeric() const noexcept { return kind == AttributeKind::Numeric; }
  std::optional<int> category_index(const std::string& value) const;
};

enum class Split : std::uint8_t { Train, Test };

/// Typed tabular data. Categorical values are stored as category indices.
/// Immutable once split; all members are plain values so copies are cheap to reason about.
struct Dataset {
  std::vector<Attribute> attributes;
  std::vector<std::string> classes;
  std::string label_name;
  std::vector<double> values;  // row-major, rows() x attributes.size()
  std::vector<int> labels;
  std::vector<Split> split;    // empty until split_and_fold
  std::vector<int> folds;      // -1 for test rows; empty until split_and_fold
  int fold_count = 0;
  std::size_t dropped_rows = 0;

  std::size_t rows() const noexcept { return labels.size(); }
  std::size_t num_classes() const noexcept { return classes.size(); }
  bool is_split() const noexcept { return !split.empty(); }
  double value(std::size_t row, std::size_t attr) const { return values[row * attributes.size() + attr]; }

  /// Row indices of the training / test partition, ascending. A test row's
  /// position in test_rows() is its instance id.
  std::vector<std::size_t> train_rows() const;
  std::vector<std::size_t> test_rows() const;
  std::optional<std::size_t> attribute_index(const std::string& name) const;

  /// Hash over attributes, classes, rows, labels, split and folds, as 16 hex digits.
  std::string fingerprint() const;
};

using SchemaHints = std::map<std::string, AttributeKind>;

/// Reads an RFC-4180 style CSV with a header row. "?" and empty fields are
/// missing; rows with a missing value in any used column are dropped and
/// counted in Dataset::dropped_rows.
Dataset load_csv(const std::string& path, const std::string& label_column, const SchemaHints& hints = {});

/// Same as load_csv but from in-memory text.
Dataset parse_csv(const std::string& text, const std::string& label_column, const SchemaHints& hints = {});

/// Stratified train/test split and stratified folds over the training rows.
/// Deterministic for a fixed seed. Numeric min/max are recomputed over train rows.
Dataset split_and_fold(Dataset ds, double test_fraction, int folds, std::uint64_t seed);

/// Splits one CSV record into fields (quotes honored, unquoted fields trimmed).
std::vector<std::string> split_csv_record(const std::string& line);

}  // namespace ensx::dataio
