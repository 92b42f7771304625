#pragma once

#include <string>
#include <vector>

#include "ensx/core/matrix.hpp"
#include "ensx/dataio/dataset.hpp"

namespace ensx::dataio {

struct EncodedColumn {
  std::size_t attribute = 0;
  int category = -1;  // -1 for a standardized numeric column
};

/// Model-ready view of a Dataset: one-hot categoricals, standardized numerics.
/// Standardization constants come from training rows only.
struct EncodedView {
  Matrix matrix;  // rows = dataset rows, same order
  std::vector<EncodedColumn> column_map;
  std::vector<double> means;  // per encoded column; 0 for one-hot columns
  std::vector<double> scales;
  std::vector<std::string> zero_variance;  // numeric attributes encoded as all zeros

  std::size_t width() const noexcept { return matrix.cols(); }
  /// Encoded columns belonging to attribute `attr`, in order.
  std::vector<std::size_t> columns_of(std::size_t attr) const;
};

EncodedView encode(const Dataset& ds);

/// Recovers the category index of `attr` for `row` from its one-hot block.
int decode_category(const EncodedView& view, std::size_t row, std::size_t attr);

/// Copies the given rows of the encoded matrix.
Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows);

}  // namespace ensx::dataio
