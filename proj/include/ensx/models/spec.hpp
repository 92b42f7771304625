#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

namespace ensx::models {

enum class Family : std::uint8_t {
  DecisionTree = 1,
  RandomForest = 2,
  BaggedTrees = 3,
  AdaBoostStumps = 4,
  Knn = 5,
  NaiveBayes = 6,
  LogisticRegression = 7,
};

const char* family_name(Family family);
Family family_from_name(const std::string& name);

struct DecisionTreeParams {
  int max_depth = 0;  // 0 = unlimited
  int min_leaf = 1;
};

enum class Mtry : std::uint8_t { Sqrt, Third };

struct RandomForestParams {
  int trees = 64;
  Mtry mtry = Mtry::Sqrt;
  int min_leaf = 1;
};

struct BaggedTreesParams {
  int bags = 10;
  int max_depth = 0;  // 0 = unlimited
};

struct AdaBoostParams {
  int rounds = 50;
  double learning_rate = 1.0;
};

enum class KnnWeighting : std::uint8_t { Uniform, Distance };

struct KnnParams {
  int k = 5;
  KnnWeighting weighting = KnnWeighting::Uniform;
};

enum class NumericLikelihood : std::uint8_t { Gaussian, Binned };

struct NaiveBayesParams {
  double alpha = 1.0;
  NumericLikelihood numeric = NumericLikelihood::Gaussian;
};

struct LogisticParams {
  double lambda = 0.01;
};

using ModelParams = std::variant<DecisionTreeParams, RandomForestParams, BaggedTreesParams, AdaBoostParams,
                                 KnnParams, NaiveBayesParams, LogisticParams>;

/// One point of the model grid. The id is a canonical rendering of family and
/// params, so two specs share an id exactly when they are equal.
struct ModelSpec {
  ModelParams params;

  Family family() const;
  std::string id() const;
  /// Throws Error(InvalidArgument) on out-of-range params.
  void validate() const;

  nlohmann::json params_json() const;
  static ModelSpec from_json(const std::string& family, const nlohmann::json& params);

  friend bool operator==(const ModelSpec& a, const ModelSpec& b) { return a.id() == b.id(); }
};

/// Default model grid: 49 specs over all seven families. Order is fixed.
std::vector<ModelSpec> default_grid();

/// Larger 100-spec grid for paper-scale builds.
std::vector<ModelSpec> extended_grid();

/// Human-readable description of each family's grid axes (stored in the manifest).
nlohmann::json grid_description(const std::string& grid_name);

}  // namespace ensx::models
