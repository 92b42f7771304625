#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ensx/core/error.hpp"
#include "ensx/ensemble/ensemble.hpp"
#include "ensx/library/library.hpp"
#include "fixtures.hpp"
#include "json.hpp"

using namespace ensx;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto dir = fs::temp_directory_path() / ("ensx_lib_" + name + "_" + std::to_string(::getpid()) + "_" +
                                          std::to_string(counter++));
  fs::remove_all(dir);
  return dir;
}

std::vector<models::ModelSpec> small_specs() {
  using namespace models;
  return {{DecisionTreeParams{4, 2}}, {KnnParams{5, KnnWeighting::Uniform}}, {NaiveBayesParams{}},
          {LogisticParams{}}, {RandomForestParams{8, Mtry::Sqrt, 1}}};
}

struct Built {
  dataio::Dataset ds;
  dataio::EncodedView view;
  library::ModelLibrary lib;
};

Built build_small(int n = 300, double offset = 1.5) {
  Built b;
  b.ds = fixtures::blobs(n, offset, 3);
  b.view = dataio::encode(b.ds);
  library::BuildOptions opts;
  opts.threads = 2;
  b.lib = library::build_library(b.ds, b.view, small_specs(), 11, opts);
  return b;
}

void flip_byte(const fs::path& file, std::size_t offset) {
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(static_cast<std::streamoff>(offset));
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5a);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(&c, 1);
}

}  // namespace

TEST_CASE("quantize_row lands on the 2^-24 grid and sums to one") {
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t k = 2 + rng.below(6);
    std::vector<double> row(k);
    double sum = 0.0;
    for (auto& v : row) {
      v = rng.uniform01();
      if (rng.below(5) == 0) v = 0.0;
      sum += v;
    }
    if (sum == 0.0) row[0] = sum = 1.0;
    auto q = row;
    library::quantize_row(q);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double units = q[c] * 16777216.0;
      CHECK(units == std::floor(units));
      CHECK(std::fabs(q[c] - row[c] / sum) <= 1.0 / 16777216.0);
      CHECK(static_cast<float>(q[c]) == q[c]);
      total += q[c];
    }
    CHECK(total == 1.0);
  }
  std::vector<double> zeros{0.0, 0.0, 0.0, 0.0};
  library::quantize_row(zeros);
  for (double v : zeros) CHECK(v == 0.25);
}

TEST_CASE("built library bookkeeping") {
  const auto b = build_small();
  const auto& lib = b.lib;
  REQUIRE(lib.size() == 5);
  CHECK(lib.manifest.failures.empty());
  CHECK(lib.manifest.training_runs == 5 * (5 + 1));
  CHECK(lib.test_rows() == b.ds.test_rows().size());
  CHECK(lib.cv_rows() == b.ds.train_rows().size());
  CHECK(lib.manifest.fingerprint == b.ds.fingerprint());

  const auto train = b.ds.train_rows();
  const auto test = b.ds.test_rows();
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(lib.cv_labels[i] == b.ds.labels[train[i]]);
    CHECK(lib.cv_folds[i] == b.ds.folds[train[i]]);
  }
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(lib.test_labels[i] == b.ds.labels[test[i]]);

  for (std::size_t m = 0; m < lib.size(); ++m) {
    for (const Matrix* p : {&lib.caches[m].test_probs, &lib.caches[m].cv_probs}) {
      for (std::size_t r = 0; r < p->rows(); ++r) {
        double s = 0.0;
        for (double v : p->row(r)) {
          CHECK(v >= 0.0);
          s += v;
        }
        CHECK(s == 1.0);
      }
    }
  }
}

TEST_CASE("cached test accuracy equals argmax agreement with labels") {
  const auto b = build_small();
  for (std::size_t m = 0; m < b.lib.size(); ++m) {
    const auto& probs = b.lib.caches[m].test_probs;
    int ok = 0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      int best = 0;
      for (int c = 1; c < static_cast<int>(probs.cols()); ++c) {
        if (probs(r, static_cast<std::size_t>(c)) > probs(r, static_cast<std::size_t>(best))) best = c;
      }
      ok += best == b.lib.test_labels[r];
    }
    CHECK(b.lib.metrics[m].accuracy_test == static_cast<double>(ok) / static_cast<double>(probs.rows()));
  }
}

TEST_CASE("cv rows come from the model trained without their fold") {
  // kNN, naive Bayes and logistic regression ignore the seed, so retraining
  // each fold here must reproduce the cache exactly.
  const auto b = build_small();
  const auto train = b.ds.train_rows();
  const int k = static_cast<int>(b.ds.num_classes());
  for (int m : {1, 2, 3}) {
    const auto& spec = b.lib.manifest.specs[static_cast<std::size_t>(m)];
    for (int f = 0; f < b.ds.fold_count; ++f) {
      std::vector<std::size_t> fit, held, held_pos;
      for (std::size_t i = 0; i < train.size(); ++i) {
        if (b.ds.folds[train[i]] == f) {
          held.push_back(train[i]);
          held_pos.push_back(i);
        } else {
          fit.push_back(train[i]);
        }
      }
      const models::TrainingData data{b.view.matrix, fit, b.ds.labels, k, b.view.column_map};
      const auto model = models::train(spec, data, 999);
      auto probs = model.predict_proba(b.view.matrix, held);
      for (std::size_t i = 0; i < held.size(); ++i) {
        library::quantize_row(probs.row(i));
        for (int c = 0; c < k; ++c) {
          CHECK(probs(i, static_cast<std::size_t>(c)) ==
                b.lib.caches[static_cast<std::size_t>(m)].cv_probs(held_pos[i], static_cast<std::size_t>(c)));
        }
      }
    }
  }
}

TEST_CASE("default grid trains every spec once per fold plus once in full") {
  const auto ds = fixtures::blobs(120, 2.0, 4);
  const auto view = dataio::encode(ds);
  const auto specs = models::default_grid();
  library::BuildOptions opts;
  std::size_t calls = 0;
  opts.progress = [&](const library::BuildProgress& p) {
    ++calls;
    CHECK(p.total == specs.size());
  };
  const auto lib = library::build_library(ds, view, specs, 1, opts);
  CHECK(calls == specs.size());
  CHECK(lib.size() + lib.manifest.failures.size() == specs.size());
  CHECK(lib.manifest.training_runs == lib.size() * static_cast<std::size_t>(ds.fold_count + 1));
  CHECK(lib.manifest.training_runs == 49 * 6);
}

TEST_CASE("failing spec is recorded and skipped") {
  using namespace models;
  const auto ds = fixtures::blobs(200, 2.0, 4);
  const auto view = dataio::encode(ds);
  std::vector<ModelSpec> specs{{KnnParams{5, KnnWeighting::Uniform}}, {KnnParams{0, KnnWeighting::Uniform}},
                               {NaiveBayesParams{}}};
  const auto lib = library::build_library(ds, view, specs, 1);
  REQUIRE(lib.size() == 2);
  REQUIRE(lib.manifest.failures.size() == 1);
  CHECK(lib.manifest.failures[0].spec_id == specs[1].id());
  CHECK_FALSE(lib.manifest.failures[0].message.empty());
  CHECK(lib.manifest.specs[1].id() == specs[2].id());
  CHECK(lib.manifest.training_runs == 2 * 6);

  std::vector<ModelSpec> bad{{KnnParams{0, KnnWeighting::Uniform}}};
  CHECK_THROWS_AS(library::build_library(ds, view, bad, 1), Error);
}

TEST_CASE("library with a single kNN model is usable end to end") {
  using namespace models;
  const auto ds = fixtures::blobs(200, 2.0, 8);
  const auto view = dataio::encode(ds);
  const auto lib = library::build_library(ds, view, {{KnnParams{7, KnnWeighting::Distance}}}, 1);
  REQUIRE(lib.size() == 1);
  const auto trace = ensemble::auto_select(lib);
  CHECK(trace.members == std::vector<int>{0});
  const auto state = ensemble::evaluate(lib, trace.members);
  CHECK(state.perf.accuracy_test == lib.metrics[0].accuracy_test);
  CHECK(state.perf.accuracy_cv == lib.metrics[0].accuracy_cv);
  CHECK(lib.metrics[0].diversity_coord == 0.0);
}

TEST_CASE("save and load round trip is bit exact") {
  const auto b = build_small();
  const auto dir = scratch_dir("roundtrip");
  library::save_library(b.lib, dir.string());
  CHECK(fs::exists(dir / "manifest.json"));
  const auto back = library::load_library(dir.string(), &b.ds);
  REQUIRE(back.size() == b.lib.size());
  CHECK(back.test_labels == b.lib.test_labels);
  CHECK(back.cv_labels == b.lib.cv_labels);
  CHECK(back.cv_folds == b.lib.cv_folds);
  CHECK(back.manifest.classes == b.lib.manifest.classes);
  CHECK(back.manifest.training_runs == b.lib.manifest.training_runs);
  for (std::size_t m = 0; m < back.size(); ++m) {
    CHECK(back.caches[m].test_probs == b.lib.caches[m].test_probs);
    CHECK(back.caches[m].cv_probs == b.lib.caches[m].cv_probs);
    CHECK(back.metrics[m].accuracy_test == b.lib.metrics[m].accuracy_test);
    CHECK(back.metrics[m].auc_weighted == b.lib.metrics[m].auc_weighted);
    CHECK(back.metrics[m].accuracy_cv == b.lib.metrics[m].accuracy_cv);
    CHECK(back.metrics[m].f_measure == b.lib.metrics[m].f_measure);
    CHECK(back.metrics[m].diversity_coord == b.lib.metrics[m].diversity_coord);
    CHECK(back.spec_id(static_cast<int>(m)) == b.lib.spec_id(static_cast<int>(m)));
    // reloaded models still predict what they cached
    auto probs = back.models[m].predict_proba(b.view.matrix, b.ds.test_rows());
    for (std::size_t r = 0; r < probs.rows(); ++r) library::quantize_row(probs.row(r));
    CHECK(probs == b.lib.caches[m].test_probs);
  }
  std::vector<int> all{0, 1, 2, 3, 4};
  CHECK(ensemble::evaluate(back, all).perf == ensemble::evaluate(b.lib, all).perf);

  const auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  CHECK(manifest.at("format_version") == library::kLibraryFormatVersion);
  CHECK(manifest.at("models").size() == 5);
  fs::remove_all(dir);
}

TEST_CASE("load rejects a dataset with a different split") {
  const auto b = build_small();
  const auto dir = scratch_dir("fingerprint");
  library::save_library(b.lib, dir.string());
  auto other = dataio::parse_csv(fixtures::blobs_csv(300, 1.5, 3), "label");
  other = dataio::split_and_fold(std::move(other), 0.2, 5, 99);
  try {
    library::load_library(dir.string(), &other);
    FAIL("expected fingerprint mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FingerprintMismatch);
  }
  fs::remove_all(dir);
}

TEST_CASE("corrupted or truncated files name the model") {
  const auto b = build_small();
  const auto dir = scratch_dir("corrupt");

  library::save_library(b.lib, dir.string());
  flip_byte(dir / "cache" / "2.f32", 100);
  try {
    library::load_library(dir.string());
    FAIL("expected corrupt cache");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Corrupt);
    REQUIRE(e.model_id().has_value());
    CHECK(*e.model_id() == 2);
  }

  fs::remove_all(dir);
  library::save_library(b.lib, dir.string());
  fs::resize_file(dir / "cache" / "3.f32", fs::file_size(dir / "cache" / "3.f32") - 4);
  try {
    library::load_library(dir.string());
    FAIL("expected truncated cache");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Corrupt);
    CHECK(e.model_id() == std::optional<int>(3));
  }

  fs::remove_all(dir);
  library::save_library(b.lib, dir.string());
  flip_byte(dir / "models" / "0.bin", 20);
  try {
    library::load_library(dir.string());
    FAIL("expected corrupt model");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Corrupt);
    CHECK(e.model_id() == std::optional<int>(0));
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest version and presence are checked") {
  const auto b = build_small();
  const auto dir = scratch_dir("version");
  library::save_library(b.lib, dir.string());
  auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  manifest["format_version"] = library::kLibraryFormatVersion + 1;
  std::ofstream(dir / "manifest.json") << manifest.dump();
  try {
    library::load_library(dir.string());
    FAIL("expected version mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::VersionMismatch);
  }
  fs::remove(dir / "manifest.json");
  try {
    library::load_library(dir.string());
    FAIL("expected missing manifest");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotFound);
  }
  fs::remove_all(dir);
}

TEST_CASE("from_caches quantizes and computes metrics") {
  library::PredictionCache a{Matrix(2, 2), Matrix(2, 2)};
  a.test_probs(0, 0) = 0.2;
  a.test_probs(0, 1) = 0.8;
  a.test_probs(1, 0) = 0.7;
  a.test_probs(1, 1) = 0.3;
  a.cv_probs = a.test_probs;
  const auto lib = library::from_caches({"a", "b"}, {1, 1}, {1, 0}, {a});
  CHECK(lib.manifest.fingerprint == "synthetic");
  CHECK(lib.metrics[0].accuracy_test == 0.5);
  CHECK(lib.metrics[0].accuracy_cv == 1.0);
  CHECK(lib.caches[0].test_probs(0, 0) + lib.caches[0].test_probs(0, 1) == 1.0);
  CHECK(lib.caches[0].test_probs(0, 0) == doctest::Approx(0.2).epsilon(1e-7));
  CHECK(lib.spec_id(0) == "synthetic/0");
}
