#include <algorithm>
#include <cmath>
#include <limits>

#include "ensx/core/error.hpp"
#include "ensx/layout/layout.hpp"

namespace ensx::layout {

namespace {

LayoutPoint point_for(const ensemble::EnsembleState& ens, std::size_t id) {
  LayoutPoint p;
  p.instance_id = id;
  p.predicted_class = ens.predicted[id];
  p.probability = ens.combined_test(id, static_cast<std::size_t>(p.predicted_class));
  p.correct = ens.correct[id] != 0;
  return p;
}

std::vector<std::size_t> resolve_ids(const ensemble::EnsembleState& ens, std::span<const std::size_t> ids) {
  std::vector<std::size_t> out;
  if (ids.empty()) {
    out.resize(ens.predicted.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  } else {
    out.assign(ids.begin(), ids.end());
    for (auto id : out) {
      if (id >= ens.predicted.size()) throw Error(ErrorCode::InvalidArgument, "instance id out of range");
    }
  }
  return out;
}

double metric_value(const library::ModelLibrary& lib, std::size_t m, const metrics::MetricName& name,
                    const std::vector<double>& local) {
  const auto& r = lib.metrics[m];
  switch (name.kind) {
    case metrics::MetricKind::Acc: return r.accuracy_test;
    case metrics::MetricKind::AucW: return r.auc_weighted;
    case metrics::MetricKind::AccCv: return r.accuracy_cv;
    case metrics::MetricKind::DivQ: return r.diversity_coord;
    case metrics::MetricKind::AccLocal: return local[m];
    case metrics::MetricKind::F1: return r.f_measure.at(static_cast<std::size_t>(name.cls));
  }
  return 0.0;
}

}  // namespace

nlohmann::json LayoutFrame::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) {
    pts.push_back({{"id", p.instance_id},
                   {"x", p.x},
                   {"y", p.y},
                   {"class", p.predicted_class},
                   {"p", p.probability},
                   {"correct", p.correct}});
  }
  return {{"mode", mode},
          {"points", pts},
          {"x_extent", {x_min, x_max}},
          {"y_extent", {y_min, y_max}},
          {"seed", seed},
          {"meta", meta}};
}

double attribute_x(int predicted_class, double probability, int num_classes) {
  const double c = static_cast<double>(predicted_class);
  const double floor_p = 1.0 / static_cast<double>(num_classes);
  const double offset = (probability - floor_p) / (1.0 - floor_p);
  return std::clamp(c + offset, c, std::nextafter(c + 1.0, c));
}

LayoutFrame attribute_layout(const ensemble::EnsembleState& ens, const dataio::Dataset& ds, const std::string& attr,
                             std::span<const std::size_t> instance_ids) {
  const auto a = ds.attribute_index(attr);
  if (!a) throw Error(ErrorCode::NotFound, "unknown attribute '" + attr + "'");
  const auto& attribute = ds.attributes[*a];
  const auto test_rows = ds.test_rows();
  if (test_rows.size() != ens.predicted.size()) {
    throw Error(ErrorCode::InvalidArgument, "ensemble state does not match the dataset's test rows");
  }
  const int k = static_cast<int>(ds.num_classes());
  LayoutFrame frame;
  frame.mode = "attribute:" + attr;
  frame.x_min = 0.0;
  frame.x_max = static_cast<double>(k);
  frame.y_min = 0.0;
  frame.y_max = 1.0;
  frame.meta = {{"x_axis", "predicted class bin + (p - 1/K) / (1 - 1/K)"},
                {"y_axis", attribute.is_numeric() ? "(value - train min) / (train max - train min)"
                                                  : "category index / (categories - 1)"},
                {"classes", ds.classes}};
  if (attribute.is_numeric()) {
    frame.meta["y_range"] = {attribute.min, attribute.max};
  } else {
    frame.meta["categories"] = attribute.categories;
  }
  for (auto id : resolve_ids(ens, instance_ids)) {
    auto p = point_for(ens, id);
    p.x = attribute_x(p.predicted_class, p.probability, k);
    const double v = ds.value(test_rows[id], *a);
    if (attribute.is_numeric()) {
      const double span = attribute.max - attribute.min;
      p.y = span > 0.0 ? std::clamp((v - attribute.min) / span, 0.0, 1.0) : 0.0;
    } else {
      const double n = static_cast<double>(attribute.categories.size());
      p.y = n > 1.0 ? v / (n - 1.0) : 0.0;
    }
    frame.points.push_back(p);
  }
  return frame;
}

LayoutFrame projection_layout(const ensemble::EnsembleState& ens, const Matrix& coords, const std::string& mode,
                              std::span<const std::size_t> instance_ids, std::uint64_t seed) {
  const auto ids = resolve_ids(ens, instance_ids);
  if (coords.rows() != ids.size() || coords.cols() != 2) {
    throw Error(ErrorCode::InvalidArgument, "projection coordinates do not match the laid-out instances");
  }
  LayoutFrame frame;
  frame.mode = mode;
  frame.seed = seed;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto p = point_for(ens, ids[i]);
    p.x = coords(i, 0);
    p.y = coords(i, 1);
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
    frame.points.push_back(p);
  }
  if (ids.empty()) x0 = x1 = y0 = y1 = 0.0;
  // A zero-width extent would make every grid column but one unreachable.
  if (!(x1 > x0)) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (!(y1 > y0)) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  frame.x_min = x0;
  frame.x_max = x1;
  frame.y_min = y0;
  frame.y_max = y1;
  return frame;
}

std::uint64_t DensityGrid::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

std::pair<int, int> DensityGrid::cell_of(double x, double y) const {
  auto bin = [](double v, double lo, double hi, int n) {
    const double t = (v - lo) / (hi - lo) * static_cast<double>(n);
    if (!(t >= 0.0)) return 0;
    return std::min(static_cast<int>(t), n - 1);
  };
  return {bin(x, x_min, x_max, cols), bin(y, y_min, y_max, rows)};
}

nlohmann::json DensityGrid::to_json() const {
  nlohmann::json grid = nlohmann::json::array();
  for (int r = 0; r < rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < cols; ++c) row.push_back(at(c, r));
    grid.push_back(std::move(row));
  }
  return {{"cols", cols},
          {"rows", rows},
          {"counts", grid},
          {"x_extent", {x_min, x_max}},
          {"y_extent", {y_min, y_max}},
          {"subset", errors_only ? "errors_only" : "all"},
          {"total", total()}};
}

DensityGrid density_grid(const LayoutFrame& frame, int cols, int rows, bool errors_only) {
  if (cols < 1 || rows < 1) throw Error(ErrorCode::InvalidArgument, "grid needs at least one column and row");
  DensityGrid g;
  g.cols = cols;
  g.rows = rows;
  g.counts.assign(static_cast<std::size_t>(cols) * static_cast<std::size_t>(rows), 0);
  g.x_min = frame.x_min;
  g.x_max = frame.x_max;
  g.y_min = frame.y_min;
  g.y_max = frame.y_max;
  g.errors_only = errors_only;
  for (const auto& p : frame.points) {
    if (errors_only && p.correct) continue;
    const auto [c, r] = g.cell_of(p.x, p.y);
    ++g.counts[static_cast<std::size_t>(r * cols + c)];
  }
  return g;
}

std::vector<ModelPoint> model_space_coords(const library::ModelLibrary& lib, const ensemble::EnsembleState* ens,
                                           const metrics::MetricName& axis_x, const metrics::MetricName& axis_y,
                                           std::span<const std::size_t> selection) {
  std::vector<double> local;
  if (axis_x.kind == metrics::MetricKind::AccLocal || axis_y.kind == metrics::MetricKind::AccLocal) {
    if (selection.empty()) throw Error(ErrorCode::Unavailable, "acc_local needs a non-empty selection");
    local = metrics::local_accuracy_all_models(lib, selection);
  }
  for (const auto* axis : {&axis_x, &axis_y}) {
    if (axis->kind == metrics::MetricKind::F1 && (axis->cls < 0 || axis->cls >= lib.num_classes())) {
      throw Error(ErrorCode::InvalidArgument, "f1 class out of range");
    }
  }
  std::vector<ModelPoint> out(lib.size());
  for (std::size_t m = 0; m < lib.size(); ++m) {
    out[m].model_id = static_cast<int>(m);
    out[m].x = metric_value(lib, m, axis_x, local);
    out[m].y = metric_value(lib, m, axis_y, local);
    out[m].is_member = ens && ens->contains(static_cast<int>(m));
  }
  return out;
}

}  // namespace ensx::layout
