#include "ensx/library/library.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <thread>

#include "ensx/core/binary_io.hpp"
#include "ensx/core/error.hpp"
#include "ensx/core/rng.hpp"
#include "ensx/metrics/metrics.hpp"

namespace ensx::library {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kGrid = 16777216.0;  // 2^24
constexpr char kCacheMagic[4] = {'E', 'A', 'P', 'C'};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string checksum(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

std::string model_file(int id) { return "models/" + std::to_string(id) + ".bin"; }
std::string cache_file(int id) { return "cache/" + std::to_string(id) + ".f32"; }

std::uint64_t fold_seed(std::uint64_t seed, int fold) { return splitmix64(seed + static_cast<std::uint64_t>(fold) + 1); }

std::string encode_cache(const PredictionCache& c) {
  ByteWriter w;
  w.put_bytes({kCacheMagic, 4});
  w.put(static_cast<std::uint32_t>(c.test_probs.rows()));
  w.put(static_cast<std::uint32_t>(c.cv_probs.rows()));
  w.put(static_cast<std::uint32_t>(c.test_probs.cols()));
  for (double v : c.test_probs.data()) w.put(static_cast<float>(v));
  for (double v : c.cv_probs.data()) w.put(static_cast<float>(v));
  return w.release();
}

PredictionCache decode_cache(std::string_view bytes, int model_id, std::size_t rows_test, std::size_t rows_cv,
                             std::size_t k) {
  if (bytes.size() < 16 || bytes.substr(0, 4) != std::string_view(kCacheMagic, 4)) {
    throw Error(ErrorCode::Corrupt, "cache of model " + std::to_string(model_id) + " has a bad header", model_id);
  }
  ByteReader r(bytes.substr(4));
  const auto t = r.get<std::uint32_t>(), v = r.get<std::uint32_t>(), kk = r.get<std::uint32_t>();
  if (t != rows_test || v != rows_cv || kk != k) {
    throw Error(ErrorCode::Corrupt, "cache of model " + std::to_string(model_id) + " has unexpected dimensions",
                model_id);
  }
  if (r.remaining() != (rows_test + rows_cv) * k * sizeof(float)) {
    throw Error(ErrorCode::Corrupt, "cache of model " + std::to_string(model_id) + " is truncated", model_id);
  }
  PredictionCache c{Matrix(rows_test, k), Matrix(rows_cv, k)};
  for (auto& x : c.test_probs.data()) x = r.get<float>();
  for (auto& x : c.cv_probs.data()) x = r.get<float>();
  return c;
}

json metric_json(const MetricRecord& m) {
  return {{"acc", m.accuracy_test}, {"auc_w", m.auc_weighted}, {"f1", m.f_measure},
          {"acc_cv", m.accuracy_cv}, {"div_q", m.diversity_coord}};
}

MetricRecord metric_from_json(int id, const json& j) {
  MetricRecord m;
  m.model_id = id;
  m.accuracy_test = j.at("acc").get<double>();
  m.auc_weighted = j.at("auc_w").get<double>();
  m.f_measure = j.at("f1").get<std::vector<double>>();
  m.accuracy_cv = j.at("acc_cv").get<double>();
  m.diversity_coord = j.at("div_q").get<double>();
  return m;
}

void quantize_matrix(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) quantize_row(m.row(r));
}

}  // namespace

std::string ModelLibrary::spec_id(int model_id) const {
  if (manifest.specs.empty()) return "synthetic/" + std::to_string(model_id);
  return manifest.specs.at(static_cast<std::size_t>(model_id)).id();
}

json DataSource::to_json() const {
  return {{"path", path},     {"label", label},           {"test_fraction", test_fraction}, {"folds", folds},
          {"seed", seed},     {"categorical", categorical}, {"numeric", numeric}};
}

DataSource DataSource::from_json(const json& j) {
  DataSource s;
  s.path = j.at("path").get<std::string>();
  s.label = j.at("label").get<std::string>();
  s.test_fraction = j.at("test_fraction").get<double>();
  s.folds = j.at("folds").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.categorical = j.value("categorical", std::vector<std::string>{});
  s.numeric = j.value("numeric", std::vector<std::string>{});
  return s;
}

dataio::Dataset DataSource::load() const {
  dataio::SchemaHints hints;
  for (const auto& c : categorical) hints[c] = dataio::AttributeKind::Categorical;
  for (const auto& c : numeric) hints[c] = dataio::AttributeKind::Numeric;
  return dataio::split_and_fold(dataio::load_csv(path, label, hints), test_fraction, folds, seed);
}

void quantize_row(std::span<double> row) {
  double sum = 0.0;
  for (double& v : row) {
    if (!(v > 0.0)) v = 0.0;  // also maps NaN to 0
    sum += v;
  }
  const std::size_t k = row.size();
  if (k == 0) return;
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    for (double& v : row) v = 1.0 / static_cast<double>(k);
    sum = 1.0;
  }
  std::vector<std::pair<double, std::size_t>> rem(k);
  std::int64_t assigned = 0;
  std::vector<std::int64_t> units(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double x = row[c] / sum * kGrid;
    units[c] = static_cast<std::int64_t>(std::floor(x));
    assigned += units[c];
    rem[c] = {x - std::floor(x), c};
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < static_cast<std::int64_t>(kGrid); ++i, ++assigned) ++units[rem[i % k].second];
  for (std::size_t c = 0; c < k; ++c) row[c] = static_cast<double>(units[c]) / kGrid;
}

std::vector<MetricRecord> compute_metrics(const ModelLibrary& lib) {
  const std::size_t m = lib.size();
  std::vector<MetricRecord> out(m);
  std::vector<std::vector<std::uint8_t>> cv_correct(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& c = lib.caches[i];
    const auto test_pred = metrics::argmax_rows(c.test_probs);
    const auto cv_pred = metrics::argmax_rows(c.cv_probs);
    auto& r = out[i];
    r.model_id = static_cast<int>(i);
    r.accuracy_test = metrics::accuracy(test_pred, lib.test_labels);
    r.accuracy_cv = metrics::accuracy(cv_pred, lib.cv_labels);
    r.auc_weighted = metrics::auc_weighted(c.cv_probs, lib.cv_labels).value;
    for (int k = 0; k < lib.num_classes(); ++k) r.f_measure.push_back(metrics::f_measure(cv_pred, lib.cv_labels, k).value);
    cv_correct[i] = metrics::correctness(cv_pred, lib.cv_labels);
  }
  const auto div = metrics::diversity_coordinates(metrics::q_matrix(cv_correct));
  for (std::size_t i = 0; i < m; ++i) out[i].diversity_coord = div.values[i];
  return out;
}

ModelLibrary build_library(const dataio::Dataset& ds, const dataio::EncodedView& view,
                           const std::vector<models::ModelSpec>& specs, std::uint64_t seed,
                           const BuildOptions& options) {
  if (!ds.is_split()) throw Error(ErrorCode::Precondition, "dataset must be split before building a library");
  if (specs.empty()) throw Error(ErrorCode::InvalidArgument, "no model specs given");
  const auto train_rows = ds.train_rows();
  const auto test_rows = ds.test_rows();
  const int folds = ds.fold_count;
  const std::size_t k = ds.num_classes();
  const int jobs_per_spec = folds + 1;
  const auto started = std::chrono::steady_clock::now();

  std::vector<std::vector<std::size_t>> fold_train(static_cast<std::size_t>(folds));
  std::vector<std::vector<std::size_t>> fold_rows(static_cast<std::size_t>(folds));
  std::vector<std::vector<std::size_t>> fold_pos(static_cast<std::size_t>(folds));  // positions in train_rows
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    const int f = ds.folds[train_rows[i]];
    for (int g = 0; g < folds; ++g) {
      if (g != f) fold_train[static_cast<std::size_t>(g)].push_back(train_rows[i]);
    }
    fold_rows[static_cast<std::size_t>(f)].push_back(train_rows[i]);
    fold_pos[static_cast<std::size_t>(f)].push_back(i);
  }

  struct SpecResult {
    std::optional<models::TrainedModel> full;
    PredictionCache cache;
    std::string error;
    int remaining = 0;
    double seconds = 0.0;
  };
  std::vector<SpecResult> results(specs.size());
  for (auto& r : results) {
    r.cache = {Matrix(test_rows.size(), k), Matrix(train_rows.size(), k)};
    r.remaining = jobs_per_spec;
  }

  std::mutex mu;
  std::size_t done = 0;
  std::size_t runs = 0;
  std::atomic<std::size_t> next{0};
  const std::size_t total_jobs = specs.size() * static_cast<std::size_t>(jobs_per_spec);

  auto run_job = [&](std::size_t job) {
    const std::size_t s = job / static_cast<std::size_t>(jobs_per_spec);
    const int part = static_cast<int>(job % static_cast<std::size_t>(jobs_per_spec));  // folds = full model
    {
      std::lock_guard lock(mu);
      if (!results[s].error.empty()) {
        if (--results[s].remaining == 0) {
          ++done;
          if (options.progress) options.progress({done, specs.size(), specs[s].id(), false, results[s].seconds});
        }
        return;
      }
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::string error;
    std::optional<models::TrainedModel> full;
    Matrix probs;
    try {
      if (part == folds) {
        const models::TrainingData data{view.matrix, train_rows, ds.labels, static_cast<int>(k), view.column_map};
        full = models::train(specs[s], data, seed);
        probs = full->predict_proba(view.matrix, test_rows);
      } else {
        const auto f = static_cast<std::size_t>(part);
        const models::TrainingData data{view.matrix, fold_train[f], ds.labels, static_cast<int>(k), view.column_map};
        const auto model = models::train(specs[s], data, fold_seed(seed, part));
        probs = model.predict_proba(view.matrix, fold_rows[f]);
      }
    } catch (const std::exception& e) {
      error = e.what();
      if (error.empty()) error = "training failed";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::lock_guard lock(mu);
    auto& r = results[s];
    r.seconds += secs;
    if (error.empty()) ++runs;
    if (!error.empty()) {
      if (r.error.empty()) r.error = error;
    } else if (part == folds) {
      r.full = std::move(full);
      r.cache.test_probs = std::move(probs);
    } else {
      const auto& pos = fold_pos[static_cast<std::size_t>(part)];
      for (std::size_t i = 0; i < pos.size(); ++i) {
        std::copy(probs.row(i).begin(), probs.row(i).end(), r.cache.cv_probs.row(pos[i]).begin());
      }
    }
    if (--r.remaining == 0) {
      ++done;
      if (options.progress) options.progress({done, specs.size(), specs[s].id(), r.error.empty(), r.seconds});
    }
  };

  unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, total_jobs));
  auto worker = [&] {
    for (std::size_t job; (job = next.fetch_add(1)) < total_jobs;) run_job(job);
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  ModelLibrary lib;
  lib.manifest.fingerprint = ds.fingerprint();
  lib.manifest.classes = ds.classes;
  lib.manifest.grid_name = options.grid_name;
  lib.manifest.grid_description = models::grid_description(options.grid_name);
  lib.manifest.source = options.source;
  lib.manifest.training_runs = runs;
  for (auto r : test_rows) lib.test_labels.push_back(ds.labels[r]);
  for (auto r : train_rows) {
    lib.cv_labels.push_back(ds.labels[r]);
    lib.cv_folds.push_back(ds.folds[r]);
  }
  for (std::size_t s = 0; s < specs.size(); ++s) {
    auto& r = results[s];
    if (!r.error.empty()) {
      lib.manifest.failures.push_back({specs[s].id(), r.error});
      continue;
    }
    quantize_matrix(r.cache.test_probs);
    quantize_matrix(r.cache.cv_probs);
    lib.manifest.specs.push_back(specs[s]);
    lib.manifest.seeds.push_back(seed);
    lib.models.push_back(std::move(*r.full));
    lib.caches.push_back(std::move(r.cache));
  }
  if (lib.caches.empty()) {
    throw Error(ErrorCode::Precondition, "every model failed to train; first error: " + lib.manifest.failures[0].message);
  }
  lib.metrics = compute_metrics(lib);
  lib.manifest.build_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return lib;
}

ModelLibrary from_caches(std::vector<std::string> classes, std::vector<int> test_labels, std::vector<int> cv_labels,
                         std::vector<PredictionCache> caches) {
  if (caches.empty()) throw Error(ErrorCode::InvalidArgument, "no caches given");
  const std::size_t k = classes.size();
  for (auto& c : caches) {
    if (c.test_probs.rows() != test_labels.size() || c.cv_probs.rows() != cv_labels.size() ||
        c.test_probs.cols() != k || c.cv_probs.cols() != k) {
      throw Error(ErrorCode::InvalidArgument, "cache dimensions do not match labels and classes");
    }
    quantize_matrix(c.test_probs);
    quantize_matrix(c.cv_probs);
  }
  ModelLibrary lib;
  lib.manifest.fingerprint = "synthetic";
  lib.manifest.classes = std::move(classes);
  lib.manifest.grid_name = "synthetic";
  lib.test_labels = std::move(test_labels);
  lib.cv_labels = std::move(cv_labels);
  lib.cv_folds.assign(lib.cv_labels.size(), 0);
  lib.caches = std::move(caches);
  lib.metrics = compute_metrics(lib);
  return lib;
}

void save_library(const ModelLibrary& lib, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "models", ec);
  fs::create_directories(fs::path(dir) / "cache", ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create library directory " + dir + ": " + ec.message());

  json entries = json::array();
  for (std::size_t i = 0; i < lib.size(); ++i) {
    const int id = static_cast<int>(i);
    json e = {{"model_id", id}};
    if (i < lib.manifest.specs.size()) {
      const auto& spec = lib.manifest.specs[i];
      e["spec_id"] = spec.id();
      e["family"] = models::family_name(spec.family());
      e["params"] = spec.params_json();
      e["seed"] = lib.manifest.seeds[i];
    }
    if (i < lib.models.size()) {
      const auto bytes = lib.models[i].serialize();
      write_file((fs::path(dir) / model_file(id)).string(), bytes);
      e["model_file"] = model_file(id);
      e["model_checksum"] = checksum(bytes);
    }
    const auto cache = encode_cache(lib.caches[i]);
    write_file((fs::path(dir) / cache_file(id)).string(), cache);
    e["cache_file"] = cache_file(id);
    e["cache_checksum"] = checksum(cache);
    e["metrics"] = metric_json(lib.metrics[i]);
    entries.push_back(std::move(e));
  }
  json failures = json::array();
  for (const auto& f : lib.manifest.failures) failures.push_back({{"spec_id", f.spec_id}, {"error", f.message}});

  json m = {{"format_version", lib.manifest.format_version},
            {"dataset_fingerprint", lib.manifest.fingerprint},
            {"classes", lib.manifest.classes},
            {"grid", {{"name", lib.manifest.grid_name}, {"description", lib.manifest.grid_description}}},
            {"rows", {{"test", lib.test_rows()}, {"cv", lib.cv_rows()}}},
            {"test_labels", lib.test_labels},
            {"cv_labels", lib.cv_labels},
            {"cv_folds", lib.cv_folds},
            {"models", entries},
            {"failures", failures},
            {"build_seconds", lib.manifest.build_seconds},
            {"training_runs", lib.manifest.training_runs}};
  if (lib.manifest.source) m["data_source"] = lib.manifest.source->to_json();
  write_file((fs::path(dir) / "manifest.json").string(), m.dump(1));
}

ModelLibrary load_library(const std::string& dir, const dataio::Dataset* ds) {
  const auto manifest_path = fs::path(dir) / "manifest.json";
  if (!fs::exists(manifest_path)) throw Error(ErrorCode::NotFound, "no manifest.json in " + dir);
  json m;
  try {
    m = json::parse(read_file(manifest_path.string()));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Corrupt, std::string("manifest.json is not valid JSON: ") + e.what());
  }

  ModelLibrary lib;
  try {
    lib.manifest.format_version = m.at("format_version").get<int>();
    if (lib.manifest.format_version != kLibraryFormatVersion) {
      throw Error(ErrorCode::VersionMismatch,
                  "library format version " + std::to_string(lib.manifest.format_version) + " is not supported");
    }
    lib.manifest.fingerprint = m.at("dataset_fingerprint").get<std::string>();
    if (ds && ds->fingerprint() != lib.manifest.fingerprint) {
      throw Error(ErrorCode::FingerprintMismatch, "dataset fingerprint " + ds->fingerprint() +
                                                      " does not match library fingerprint " + lib.manifest.fingerprint);
    }
    lib.manifest.classes = m.at("classes").get<std::vector<std::string>>();
    lib.manifest.grid_name = m.at("grid").at("name").get<std::string>();
    lib.manifest.grid_description = m.at("grid").at("description");
    lib.manifest.build_seconds = m.value("build_seconds", 0.0);
    lib.manifest.training_runs = m.value("training_runs", std::size_t{0});
    if (m.contains("data_source")) lib.manifest.source = DataSource::from_json(m.at("data_source"));
    for (const auto& f : m.at("failures")) {
      lib.manifest.failures.push_back({f.at("spec_id").get<std::string>(), f.at("error").get<std::string>()});
    }
    lib.test_labels = m.at("test_labels").get<std::vector<int>>();
    lib.cv_labels = m.at("cv_labels").get<std::vector<int>>();
    lib.cv_folds = m.at("cv_folds").get<std::vector<int>>();
    const std::size_t k = lib.manifest.classes.size();

    const auto& entries = m.at("models");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      const int id = static_cast<int>(i);
      if (e.at("model_id").get<int>() != id) throw Error(ErrorCode::Corrupt, "model ids are not sequential", id);
      if (e.contains("spec_id")) {
        auto spec = models::ModelSpec::from_json(e.at("family").get<std::string>(), e.at("params"));
        if (spec.id() != e.at("spec_id").get<std::string>()) {
          throw Error(ErrorCode::Corrupt, "spec id of model " + std::to_string(id) + " does not match its params", id);
        }
        lib.manifest.specs.push_back(std::move(spec));
        lib.manifest.seeds.push_back(e.at("seed").get<std::uint64_t>());
      }
      if (e.contains("model_file")) {
        const auto path = (fs::path(dir) / e.at("model_file").get<std::string>()).string();
        std::string bytes;
        try {
          bytes = read_file(path);
        } catch (const Error& err) {
          throw Error(ErrorCode::Corrupt, "model " + std::to_string(id) + ": " + err.what(), id);
        }
        if (checksum(bytes) != e.at("model_checksum").get<std::string>()) {
          throw Error(ErrorCode::Corrupt, "model file of model " + std::to_string(id) + " fails its checksum", id);
        }
        try {
          lib.models.push_back(models::TrainedModel::deserialize(bytes));
        } catch (const Error& err) {
          throw Error(err.code(), "model " + std::to_string(id) + ": " + err.what(), id);
        }
      }
      const auto path = (fs::path(dir) / e.at("cache_file").get<std::string>()).string();
      std::string bytes;
      try {
        bytes = read_file(path);
      } catch (const Error& err) {
        throw Error(ErrorCode::Corrupt, "cache of model " + std::to_string(id) + ": " + err.what(), id);
      }
      auto cache = decode_cache(bytes, id, lib.test_labels.size(), lib.cv_labels.size(), k);
      if (checksum(bytes) != e.at("cache_checksum").get<std::string>()) {
        throw Error(ErrorCode::Corrupt, "cache file of model " + std::to_string(id) + " fails its checksum", id);
      }
      lib.caches.push_back(std::move(cache));
      lib.metrics.push_back(metric_from_json(id, e.at("metrics")));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Corrupt, std::string("manifest.json is malformed: ") + e.what());
  }
  if (lib.caches.empty()) throw Error(ErrorCode::Corrupt, "library contains no models");
  return lib;
}

}  // namespace ensx::library
