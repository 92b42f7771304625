#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ensx/core/matrix.hpp"
#include "ensx/dataio/dataset.hpp"
#include "ensx/dataio/encoding.hpp"
#include "ensx/models/model.hpp"
#include "json.hpp"

namespace ensx::library {

inline constexpr int kLibraryFormatVersion = 1;

/// Cached probabilities of one model. Test rows are indexed by instance id
/// (position in Dataset::test_rows()); cv rows by position in train_rows(), and
/// row i holds the prediction of the model trained without fold(i).
/// Every entry is a multiple of 2^-24 and every row sums to exactly 1, so the
/// float32 file format is lossless.
struct PredictionCache {
  Matrix test_probs;
  Matrix cv_probs;
};

struct MetricRecord {
  int model_id = 0;
  double accuracy_test = 0.0;
  double auc_weighted = 0.0;             // out-of-fold block
  std::vector<double> f_measure;         // per class, out-of-fold block
  double accuracy_cv = 0.0;
  double diversity_coord = 0.0;          // first PCA component of the Q matrix rows
};

/// How the dataset was loaded and split, so a library directory can be
/// re-attached to its data without extra flags.
struct DataSource {
  std::string path;
  std::string label;
  double test_fraction = 0.2;
  int folds = 5;
  std::uint64_t seed = 1;
  std::vector<std::string> categorical;
  std::vector<std::string> numeric;

  nlohmann::json to_json() const;
  static DataSource from_json(const nlohmann::json& j);
  dataio::Dataset load() const;
};

struct BuildFailure {
  std::string spec_id;
  std::string message;
};

struct Manifest {
  int format_version = kLibraryFormatVersion;
  std::string fingerprint;
  std::vector<std::string> classes;
  std::string grid_name;
  nlohmann::json grid_description;
  std::optional<DataSource> source;
  std::vector<models::ModelSpec> specs;  // indexed by model_id
  std::vector<std::uint64_t> seeds;
  std::vector<BuildFailure> failures;
  double build_seconds = 0.0;
  std::size_t training_runs = 0;  // successful train() calls, fold models included
};

/// Immutable collection of trained models, their caches and metrics.
/// model_id is the index into every vector.
struct ModelLibrary {
  Manifest manifest;
  std::vector<models::TrainedModel> models;  // may be empty for synthetic libraries
  std::vector<PredictionCache> caches;
  std::vector<MetricRecord> metrics;
  std::vector<int> test_labels;  // aligned with cache test rows
  std::vector<int> cv_labels;    // aligned with cache cv rows
  std::vector<int> cv_folds;

  std::size_t size() const noexcept { return caches.size(); }
  int num_classes() const noexcept { return static_cast<int>(manifest.classes.size()); }
  std::size_t test_rows() const noexcept { return test_labels.size(); }
  std::size_t cv_rows() const noexcept { return cv_labels.size(); }
  std::string spec_id(int model_id) const;
};

struct BuildProgress {
  std::size_t done = 0;
  std::size_t total = 0;
  std::string spec_id;
  bool ok = true;
  double seconds = 0.0;  // wall time of this spec's jobs
};

struct BuildOptions {
  unsigned threads = 0;  // 0 = hardware concurrency
  std::function<void(const BuildProgress&)> progress;
  std::string grid_name = "custom";
  std::optional<DataSource> source;
};

/// Trains F fold models (for out-of-fold caches) plus one full model per spec.
/// A spec whose training fails is recorded in manifest.failures and skipped.
ModelLibrary build_library(const dataio::Dataset& ds, const dataio::EncodedView& view,
                           const std::vector<models::ModelSpec>& specs, std::uint64_t seed,
                           const BuildOptions& options = {});

/// Library over given caches, with metrics computed. For tests and tools that
/// need selection or metrics without training.
ModelLibrary from_caches(std::vector<std::string> classes, std::vector<int> test_labels,
                         std::vector<int> cv_labels, std::vector<PredictionCache> caches);

void save_library(const ModelLibrary& lib, const std::string& dir);

/// Loads and verifies a saved library. When `ds` is given its fingerprint must
/// match the manifest.
ModelLibrary load_library(const std::string& dir, const dataio::Dataset* ds = nullptr);

/// Rounds a probability row onto the 2^-24 grid with largest-remainder
/// rounding so the result sums to exactly 1.
void quantize_row(std::span<double> row);

/// Recomputes every MetricRecord from the caches.
std::vector<MetricRecord> compute_metrics(const ModelLibrary& lib);

}  // namespace ensx::library
