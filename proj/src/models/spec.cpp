#include "ensx/models/spec.hpp"

#include <charconv>
#include <cmath>

#include "ensx/core/error.hpp"

namespace ensx::models {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt_depth(int depth) { return depth == 0 ? "inf" : std::to_string(depth); }

const char* mtry_name(Mtry m) { return m == Mtry::Sqrt ? "sqrt" : "third"; }
const char* weighting_name(KnnWeighting w) { return w == KnnWeighting::Uniform ? "uniform" : "distance"; }
const char* likelihood_name(NumericLikelihood n) { return n == NumericLikelihood::Gaussian ? "gaussian" : "binned"; }

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, "invalid model parameter: " + what);
}

int depth_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    require(j.get<std::string>() == "inf", "max_depth");
    return 0;
  }
  return j.get<int>();
}

}  // namespace

const char* family_name(Family family) {
  switch (family) {
    case Family::DecisionTree: return "decision_tree";
    case Family::RandomForest: return "random_forest";
    case Family::BaggedTrees: return "bagged_trees";
    case Family::AdaBoostStumps: return "adaboost_stumps";
    case Family::Knn: return "knn";
    case Family::NaiveBayes: return "naive_bayes";
    case Family::LogisticRegression: return "logistic_regression";
  }
  return "unknown";
}

Family family_from_name(const std::string& name) {
  for (int f = 1; f <= 7; ++f) {
    if (name == family_name(static_cast<Family>(f))) return static_cast<Family>(f);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown model family: " + name);
}

Family ModelSpec::family() const {
  return std::visit(overloaded{
                        [](const DecisionTreeParams&) { return Family::DecisionTree; },
                        [](const RandomForestParams&) { return Family::RandomForest; },
                        [](const BaggedTreesParams&) { return Family::BaggedTrees; },
                        [](const AdaBoostParams&) { return Family::AdaBoostStumps; },
                        [](const KnnParams&) { return Family::Knn; },
                        [](const NaiveBayesParams&) { return Family::NaiveBayes; },
                        [](const LogisticParams&) { return Family::LogisticRegression; },
                    },
                    params);
}

std::string ModelSpec::id() const {
  const std::string body = std::visit(
      overloaded{
          [](const DecisionTreeParams& p) {
            return "max_depth=" + fmt_depth(p.max_depth) + ",min_leaf=" + std::to_string(p.min_leaf);
          },
          [](const RandomForestParams& p) {
            return "min_leaf=" + std::to_string(p.min_leaf) + ",mtry=" + mtry_name(p.mtry) +
                   ",trees=" + std::to_string(p.trees);
          },
          [](const BaggedTreesParams& p) {
            return "bags=" + std::to_string(p.bags) + ",max_depth=" + fmt_depth(p.max_depth);
          },
          [](const AdaBoostParams& p) {
            return "learning_rate=" + fmt_double(p.learning_rate) + ",rounds=" + std::to_string(p.rounds);
          },
          [](const KnnParams& p) { return "k=" + std::to_string(p.k) + ",weighting=" + weighting_name(p.weighting); },
          [](const NaiveBayesParams& p) {
            return "alpha=" + fmt_double(p.alpha) + ",numeric=" + likelihood_name(p.numeric);
          },
          [](const LogisticParams& p) { return "lambda=" + fmt_double(p.lambda); },
      },
      params);
  return std::string(family_name(family())) + "(" + body + ")";
}

void ModelSpec::validate() const {
  std::visit(overloaded{
                 [](const DecisionTreeParams& p) {
                   require(p.max_depth >= 0, "max_depth");
                   require(p.min_leaf >= 1, "min_leaf");
                 },
                 [](const RandomForestParams& p) {
                   require(p.trees >= 1, "trees");
                   require(p.min_leaf >= 1, "min_leaf");
                 },
                 [](const BaggedTreesParams& p) {
                   require(p.bags >= 1, "bags");
                   require(p.max_depth >= 0, "max_depth");
                 },
                 [](const AdaBoostParams& p) {
                   require(p.rounds >= 1, "rounds");
                   require(p.learning_rate > 0.0 && std::isfinite(p.learning_rate), "learning_rate");
                 },
                 [](const KnnParams& p) { require(p.k >= 1, "k"); },
                 [](const NaiveBayesParams& p) { require(p.alpha > 0.0 && std::isfinite(p.alpha), "alpha"); },
                 [](const LogisticParams& p) { require(p.lambda >= 0.0 && std::isfinite(p.lambda), "lambda"); },
             },
             params);
}

nlohmann::json ModelSpec::params_json() const {
  return std::visit(overloaded{
                        [](const DecisionTreeParams& p) {
                          return nlohmann::json{{"max_depth", p.max_depth}, {"min_leaf", p.min_leaf}};
                        },
                        [](const RandomForestParams& p) {
                          return nlohmann::json{{"trees", p.trees}, {"mtry", mtry_name(p.mtry)}, {"min_leaf", p.min_leaf}};
                        },
                        [](const BaggedTreesParams& p) {
                          return nlohmann::json{{"bags", p.bags}, {"max_depth", p.max_depth}};
                        },
                        [](const AdaBoostParams& p) {
                          return nlohmann::json{{"rounds", p.rounds}, {"learning_rate", p.learning_rate}};
                        },
                        [](const KnnParams& p) {
                          return nlohmann::json{{"k", p.k}, {"weighting", weighting_name(p.weighting)}};
                        },
                        [](const NaiveBayesParams& p) {
                          return nlohmann::json{{"alpha", p.alpha}, {"numeric", likelihood_name(p.numeric)}};
                        },
                        [](const LogisticParams& p) { return nlohmann::json{{"lambda", p.lambda}}; },
                    },
                    params);
}

ModelSpec ModelSpec::from_json(const std::string& family, const nlohmann::json& j) {
  ModelSpec spec;
  try {
    switch (family_from_name(family)) {
      case Family::DecisionTree:
        spec.params = DecisionTreeParams{depth_from_json(j.at("max_depth")), j.at("min_leaf").get<int>()};
        break;
      case Family::RandomForest: {
        const auto m = j.at("mtry").get<std::string>();
        require(m == "sqrt" || m == "third", "mtry");
        spec.params = RandomForestParams{j.at("trees").get<int>(), m == "sqrt" ? Mtry::Sqrt : Mtry::Third,
                                         j.at("min_leaf").get<int>()};
        break;
      }
      case Family::BaggedTrees:
        spec.params = BaggedTreesParams{j.at("bags").get<int>(), depth_from_json(j.at("max_depth"))};
        break;
      case Family::AdaBoostStumps:
        spec.params = AdaBoostParams{j.at("rounds").get<int>(), j.at("learning_rate").get<double>()};
        break;
      case Family::Knn: {
        const auto w = j.at("weighting").get<std::string>();
        require(w == "uniform" || w == "distance", "weighting");
        spec.params = KnnParams{j.at("k").get<int>(), w == "uniform" ? KnnWeighting::Uniform : KnnWeighting::Distance};
        break;
      }
      case Family::NaiveBayes: {
        const auto n = j.at("numeric").get<std::string>();
        require(n == "gaussian" || n == "binned", "numeric");
        spec.params = NaiveBayesParams{j.at("alpha").get<double>(),
                                       n == "gaussian" ? NumericLikelihood::Gaussian : NumericLikelihood::Binned};
        break;
      }
      case Family::LogisticRegression:
        spec.params = LogisticParams{j.at("lambda").get<double>()};
        break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad params for ") + family + ": " + e.what());
  }
  spec.validate();
  return spec;
}

std::vector<ModelSpec> default_grid() {
  std::vector<ModelSpec> grid;
  for (int depth : {2, 4, 8, 0}) {
    for (int leaf : {1, 5, 25}) grid.push_back({DecisionTreeParams{depth, leaf}});
  }
  for (int trees : {16, 64}) {
    for (Mtry m : {Mtry::Sqrt, Mtry::Third}) {
      for (int leaf : {1, 5}) grid.push_back({RandomForestParams{trees, m, leaf}});
    }
  }
  for (int bags : {10, 30}) {
    for (int depth : {4, 8, 0}) grid.push_back({BaggedTreesParams{bags, depth}});
  }
  for (int rounds : {25, 100}) {
    for (double lr : {0.25, 0.5, 1.0}) grid.push_back({AdaBoostParams{rounds, lr}});
  }
  for (int k : {1, 5, 15, 51}) {
    for (KnnWeighting w : {KnnWeighting::Uniform, KnnWeighting::Distance}) grid.push_back({KnnParams{k, w}});
  }
  for (double lambda : {0.0, 0.001, 0.01, 0.1, 1.0}) grid.push_back({LogisticParams{lambda}});
  for (double alpha : {0.1, 1.0}) {
    for (NumericLikelihood n : {NumericLikelihood::Gaussian, NumericLikelihood::Binned}) {
      grid.push_back({NaiveBayesParams{alpha, n}});
    }
  }
  return grid;
}

std::vector<ModelSpec> extended_grid() {
  std::vector<ModelSpec> grid;
  for (int depth : {2, 3, 4, 5, 6, 8, 10, 12, 0}) {
    for (int leaf : {1, 5, 25}) grid.push_back({DecisionTreeParams{depth, leaf}});
  }
  for (int trees : {16, 32, 64}) {
    for (Mtry m : {Mtry::Sqrt, Mtry::Third}) {
      for (int leaf : {1, 5}) grid.push_back({RandomForestParams{trees, m, leaf}});
    }
  }
  for (int bags : {10, 20, 30}) {
    for (int depth : {4, 8, 0}) grid.push_back({BaggedTreesParams{bags, depth}});
  }
  for (int rounds : {10, 25, 50, 100}) {
    for (double lr : {0.25, 0.5, 1.0}) grid.push_back({AdaBoostParams{rounds, lr}});
  }
  for (int k : {1, 3, 5, 9, 15, 25, 35, 51, 75}) {
    for (KnnWeighting w : {KnnWeighting::Uniform, KnnWeighting::Distance}) grid.push_back({KnnParams{k, w}});
  }
  for (double lambda : {0.0, 0.0001, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0}) {
    grid.push_back({LogisticParams{lambda}});
  }
  for (double alpha : {0.01, 0.05, 0.1, 0.5, 1.0, 2.0}) {
    for (NumericLikelihood n : {NumericLikelihood::Gaussian, NumericLikelihood::Binned}) {
      grid.push_back({NaiveBayesParams{alpha, n}});
    }
  }
  return grid;
}

nlohmann::json grid_description(const std::string& grid_name) {
  if (grid_name == "extended") {
    return {
        {"decision_tree", "max_depth in {2,3,4,5,6,8,10,12,inf} x min_leaf in {1,5,25}"},
        {"random_forest", "trees in {16,32,64} x mtry in {sqrt(D), D/3} x min_leaf in {1,5}"},
        {"bagged_trees", "bags in {10,20,30} x max_depth in {4,8,inf}"},
        {"adaboost_stumps", "rounds in {10,25,50,100} x learning_rate in {0.25,0.5,1}"},
        {"knn", "k in {1,3,5,9,15,25,35,51,75} x weighting in {uniform,distance}"},
        {"logistic_regression", "lambda in {0,1e-4,1e-3,3e-3,0.01,0.03,0.1,0.3,1,3}"},
        {"naive_bayes", "alpha in {0.01,0.05,0.1,0.5,1,2} x numeric in {gaussian,binned}"},
    };
  }
  return {
      {"decision_tree", "max_depth in {2,4,8,inf} x min_leaf in {1,5,25}"},
      {"random_forest", "trees in {16,64} x mtry in {sqrt(D), D/3} x min_leaf in {1,5}"},
      {"bagged_trees", "bags in {10,30} x max_depth in {4,8,inf}"},
      {"adaboost_stumps", "rounds in {25,100} x learning_rate in {0.25,0.5,1}"},
      {"knn", "k in {1,5,15,51} x weighting in {uniform,distance}"},
      {"logistic_regression", "lambda in {0,0.001,0.01,0.1,1}"},
      {"naive_bayes", "alpha in {0.1,1} x numeric in {gaussian,binned}"},
  };
}

}  // namespace ensx::models
