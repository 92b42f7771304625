#pragma once

// Internal factory functions for the model families.

#include <memory>

#include "ensx/core/rng.hpp"
#include "ensx/models/model.hpp"

namespace ensx::models::detail {

std::shared_ptr<const Classifier> train_decision_tree(const DecisionTreeParams& p, const TrainingData& data);
std::shared_ptr<const Classifier> train_random_forest(const RandomForestParams& p, const TrainingData& data, Rng& rng);
std::shared_ptr<const Classifier> train_bagged_trees(const BaggedTreesParams& p, const TrainingData& data, Rng& rng);
std::shared_ptr<const Classifier> train_adaboost(const AdaBoostParams& p, const TrainingData& data);
std::shared_ptr<const Classifier> train_knn(const KnnParams& p, const TrainingData& data);
std::shared_ptr<const Classifier> train_naive_bayes(const NaiveBayesParams& p, const TrainingData& data);
std::shared_ptr<const Classifier> train_logistic(const LogisticParams& p, const TrainingData& data);

std::shared_ptr<const Classifier> load_forest(Family family, ByteReader& in);
std::shared_ptr<const Classifier> load_adaboost(ByteReader& in);
std::shared_ptr<const Classifier> load_knn(ByteReader& in);
std::shared_ptr<const Classifier> load_naive_bayes(ByteReader& in);
std::shared_ptr<const Classifier> load_logistic(ByteReader& in);

}  // namespace ensx::models::detail
