#include "ensx/models/model.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "ensx/core/error.hpp"
#include "ensx/core/rng.hpp"
#include "families.hpp"

namespace ensx::models {

namespace {

constexpr char kMagic[4] = {'E', 'A', 'T', 'M'};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace

Matrix TrainedModel::predict_proba(const Matrix& features, std::span<const std::size_t> rows) const {
  if (features.cols() != state->input_width()) {
    throw Error(ErrorCode::InvalidArgument, "feature width " + std::to_string(features.cols()) +
                                                " does not match trained width " + std::to_string(state->input_width()));
  }
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(features.rows());
    std::iota(all.begin(), all.end(), 0);
    rows = all;
  }
  Matrix out(rows.size(), static_cast<std::size_t>(state->num_classes()));
  state->predict_rows(features, rows, out);
  return out;
}

std::string TrainedModel::serialize() const {
  ByteWriter w;
  w.put_bytes({kMagic, 4});
  w.put(kModelFormatVersion);
  w.put(static_cast<std::uint8_t>(spec.family()));
  w.put_string(spec.params_json().dump());
  w.put(train_seed);
  state->save(w);
  return w.release();
}

TrainedModel TrainedModel::deserialize(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < 4 || r.get_bytes(4) != std::string_view(kMagic, 4)) {
    throw Error(ErrorCode::Corrupt, "model state lacks EATM magic");
  }
  const auto version = r.get<std::uint16_t>();
  if (version != kModelFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "unsupported model format version " + std::to_string(version));
  }
  const auto tag = r.get<std::uint8_t>();
  if (tag < 1 || tag > 7) throw Error(ErrorCode::Corrupt, "unknown family tag");
  const auto family = static_cast<Family>(tag);

  TrainedModel model;
  try {
    model.spec = ModelSpec::from_json(family_name(family), nlohmann::json::parse(r.get_string()));
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::Corrupt, "model spec block is not valid JSON");
  }
  model.train_seed = r.get<std::uint64_t>();
  switch (family) {
    case Family::DecisionTree:
    case Family::RandomForest:
    case Family::BaggedTrees: model.state = detail::load_forest(family, r); break;
    case Family::AdaBoostStumps: model.state = detail::load_adaboost(r); break;
    case Family::Knn: model.state = detail::load_knn(r); break;
    case Family::NaiveBayes: model.state = detail::load_naive_bayes(r); break;
    case Family::LogisticRegression: model.state = detail::load_logistic(r); break;
  }
  if (!r.at_end()) throw Error(ErrorCode::Corrupt, "trailing bytes after model payload");
  return model;
}

TrainedModel train(const ModelSpec& spec, const TrainingData& data, std::uint64_t seed) {
  spec.validate();
  if (data.rows.empty()) throw Error(ErrorCode::Precondition, "no training rows");
  if (data.num_classes < 2) throw Error(ErrorCode::Precondition, "need at least 2 classes");
  if (!data.columns.empty() && data.columns.size() != data.features.cols()) {
    throw Error(ErrorCode::InvalidArgument, "column map does not match feature width");
  }
  std::set<int> present;
  for (std::size_t r : data.rows) {
    const int y = data.labels[r];
    if (y < 0 || y >= data.num_classes) throw Error(ErrorCode::InvalidArgument, "label index out of range");
    present.insert(y);
    for (double v : data.features.row(r)) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite feature value in training rows");
    }
  }
  if (present.size() < 2) throw Error(ErrorCode::Precondition, "training subset contains a single class");

  Rng rng(seed, spec.id());
  TrainedModel model;
  model.spec = spec;
  model.train_seed = seed;
  model.state = std::visit(
      overloaded{
          [&](const DecisionTreeParams& p) { return detail::train_decision_tree(p, data); },
          [&](const RandomForestParams& p) { return detail::train_random_forest(p, data, rng); },
          [&](const BaggedTreesParams& p) { return detail::train_bagged_trees(p, data, rng); },
          [&](const AdaBoostParams& p) { return detail::train_adaboost(p, data); },
          [&](const KnnParams& p) { return detail::train_knn(p, data); },
          [&](const NaiveBayesParams& p) { return detail::train_naive_bayes(p, data); },
          [&](const LogisticParams& p) { return detail::train_logistic(p, data); },
      },
      spec.params);
  return model;
}

}  // namespace ensx::models
