#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ensx/core/linalg.hpp"
#include "ensx/core/matrix.hpp"
#include "ensx/dataio/dataset.hpp"
#include "ensx/ensemble/ensemble.hpp"
#include "ensx/library/library.hpp"
#include "ensx/metrics/metrics.hpp"
#include "json.hpp"

namespace ensx::layout {

struct LayoutPoint {
  std::size_t instance_id = 0;
  double x = 0.0;
  double y = 0.0;
  int predicted_class = 0;
  double probability = 0.0;  // combined probability of the predicted class
  bool correct = false;
};

struct LayoutFrame {
  std::string mode;  // "attribute:<name>", "pca", "mds" or "tsne"
  std::vector<LayoutPoint> points;
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  std::uint64_t seed = 0;
  nlohmann::json meta = nlohmann::json::object();

  nlohmann::json to_json() const;
};

/// x position of a point in the attribute layout: c + (p - 1/K) / (1 - 1/K),
/// kept inside [c, c + 1).
double attribute_x(int predicted_class, double probability, int num_classes);

/// Points binned by predicted class, probability on x and the attribute on y.
/// `instance_ids` empty lays out every test instance.
LayoutFrame attribute_layout(const ensemble::EnsembleState& ens, const dataio::Dataset& ds, const std::string& attr,
                             std::span<const std::size_t> instance_ids = {});

/// Frame over precomputed 2-D coordinates (row i belongs to instance_ids[i],
/// or to instance i when `instance_ids` is empty).
LayoutFrame projection_layout(const ensemble::EnsembleState& ens, const Matrix& coords, const std::string& mode,
                              std::span<const std::size_t> instance_ids = {}, std::uint64_t seed = 0);

struct Projection {
  Matrix coords;  // N x 2
  std::vector<double> eigenvalues;
  bool degenerate = false;  // zero total variance
  bool clamped = false;     // MDS: the spectrum has negative eigenvalues (non-Euclidean input), dropped as 0
  double min_eigenvalue = 0.0;  // MDS only
};

/// Projection on the top two principal directions of the centered data. Each
/// loading vector is oriented to have a non-negative sum.
Projection pca_2d(const Matrix& data, const linalg::PowerIterationOptions& options = {});

/// Classical (Torgerson) MDS of a symmetric distance matrix with zero diagonal.
Projection mds_2d(const Matrix& dist, const linalg::PowerIterationOptions& options = {});

Matrix euclidean_distances(const Matrix& data);

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 1;
  std::size_t max_points = 5000;
  int exaggeration_iterations = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
};

struct TsneResult {
  Matrix coords;
  double kl_after_exaggeration = 0.0;
  double kl_final = 0.0;
  double max_perplexity_error = 0.0;  // worst |H_i - log(perplexity)| after bisection
};

/// Exact O(N^2) t-SNE with early exaggeration, momentum and per-coordinate gains.
TsneResult tsne_2d(const Matrix& data, const TsneOptions& options = {});

struct DensityGrid {
  int cols = 1;
  int rows = 1;
  std::vector<std::uint64_t> counts;  // counts[row * cols + col]; row 0 is y_min
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  bool errors_only = false;

  std::uint64_t at(int col, int row) const { return counts[static_cast<std::size_t>(row * cols + col)]; }
  std::uint64_t total() const;
  /// Cell of a point; half-open bins with the top edge included in the last bin.
  std::pair<int, int> cell_of(double x, double y) const;
  nlohmann::json to_json() const;
};

DensityGrid density_grid(const LayoutFrame& frame, int cols, int rows, bool errors_only = false);

struct ModelPoint {
  int model_id = 0;
  double x = 0.0;
  double y = 0.0;
  bool is_member = false;
};

/// Model-space scatter: one point per library model under the chosen metrics.
/// acc_local needs a non-empty selection (Error Unavailable otherwise).
std::vector<ModelPoint> model_space_coords(const library::ModelLibrary& lib, const ensemble::EnsembleState* ens,
                                           const metrics::MetricName& axis_x, const metrics::MetricName& axis_y,
                                           std::span<const std::size_t> selection = {});

}  // namespace ensx::layout
