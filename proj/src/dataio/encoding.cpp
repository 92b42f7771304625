#include "ensx/dataio/encoding.hpp"

#include <cmath>

#include "ensx/core/error.hpp"

namespace ensx::dataio {

std::vector<std::size_t> EncodedView::columns_of(std::size_t attr) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < column_map.size(); ++c) {
    if (column_map[c].attribute == attr) out.push_back(c);
  }
  return out;
}

EncodedView encode(const Dataset& ds) {
  if (!ds.is_split()) throw Error(ErrorCode::Precondition, "encode requires a split dataset");
  EncodedView view;
  for (std::size_t a = 0; a < ds.attributes.size(); ++a) {
    const auto& attr = ds.attributes[a];
    if (attr.is_numeric()) {
      view.column_map.push_back({a, -1});
    } else {
      for (std::size_t c = 0; c < attr.categories.size(); ++c) view.column_map.push_back({a, static_cast<int>(c)});
    }
  }
  const std::size_t width = view.column_map.size();
  view.means.assign(width, 0.0);
  view.scales.assign(width, 1.0);

  const auto train = ds.train_rows();
  for (std::size_t col = 0; col < width; ++col) {
    const auto& cm = view.column_map[col];
    if (cm.category >= 0) continue;
    double sum = 0.0;
    for (std::size_t r : train) sum += ds.value(r, cm.attribute);
    const double mean = sum / static_cast<double>(train.size());
    double ss = 0.0;
    for (std::size_t r : train) {
      const double d = ds.value(r, cm.attribute) - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(train.size()));
    view.means[col] = mean;
    if (sd > 0.0) {
      view.scales[col] = sd;
    } else {
      view.scales[col] = 0.0;
      view.zero_variance.push_back(ds.attributes[cm.attribute].name);
    }
  }

  view.matrix = Matrix(ds.rows(), width);
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t col = 0; col < width; ++col) {
      const auto& cm = view.column_map[col];
      const double v = ds.value(r, cm.attribute);
      if (cm.category >= 0) {
        view.matrix(r, col) = static_cast<int>(v) == cm.category ? 1.0 : 0.0;
      } else {
        view.matrix(r, col) = view.scales[col] > 0.0 ? (v - view.means[col]) / view.scales[col] : 0.0;
      }
    }
  }
  return view;
}

int decode_category(const EncodedView& view, std::size_t row, std::size_t attr) {
  for (std::size_t col = 0; col < view.column_map.size(); ++col) {
    const auto& cm = view.column_map[col];
    if (cm.attribute == attr && cm.category >= 0 && view.matrix(row, col) == 1.0) return cm.category;
  }
  throw Error(ErrorCode::InvalidArgument, "attribute has no active one-hot column");
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace ensx::dataio
