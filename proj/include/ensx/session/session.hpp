#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "ensx/dataio/dataset.hpp"
#include "ensx/dataio/encoding.hpp"
#include "ensx/ensemble/ensemble.hpp"
#include "ensx/layout/layout.hpp"
#include "ensx/library/library.hpp"
#include "json.hpp"

namespace ensx::session {

enum class GuardMode { Off, Warn, Strict };

const char* guard_name(GuardMode mode);
GuardMode guard_from_name(const std::string& name);

struct SessionConfig {
  ensemble::SelectOptions select;
  GuardMode guard = GuardMode::Warn;
  double tolerance = 0.0;
  int grid_cols = 20;
  int grid_rows = 20;
  std::size_t viz_sample = 0;  // 0 = every test instance is laid out
  std::uint64_t layout_seed = 1;
  layout::TsneOptions tsne;

  nlohmann::json to_json() const;
  /// Overrides fields present in `j`; unknown keys are rejected.
  static SessionConfig from_json(const nlohmann::json& j, SessionConfig base);
  static SessionConfig from_json(const nlohmann::json& j) { return from_json(j, SessionConfig{}); }
};

/// Read-only data shared by every session over one library: the library, its
/// dataset, the encoded test rows and lazily computed projections.
class LibraryContext {
 public:
  LibraryContext(library::ModelLibrary lib, dataio::Dataset ds, std::size_t viz_sample, std::uint64_t seed);

  /// Loads the library and re-creates its dataset from the manifest's data source.
  static std::shared_ptr<LibraryContext> open(const std::string& dir, std::size_t viz_sample = 0,
                                              std::uint64_t seed = 1);

  const library::ModelLibrary& library() const noexcept { return lib_; }
  const dataio::Dataset& dataset() const noexcept { return ds_; }
  /// Test instance ids that get laid out (all of them unless a sample was requested).
  const std::vector<std::size_t>& viz_ids() const noexcept { return viz_ids_; }
  std::uint64_t seed() const noexcept { return seed_; }

  struct ProjectionEntry {
    Matrix coords;  // one row per viz id
    nlohmann::json meta;
  };
  /// PCA / MDS / t-SNE of the encoded viz rows, computed once per mode.
  const ProjectionEntry& projection(const std::string& mode, const layout::TsneOptions& tsne) const;

 private:
  library::ModelLibrary lib_;
  dataio::Dataset ds_;
  Matrix viz_matrix_;
  std::vector<std::size_t> viz_ids_;
  std::uint64_t seed_;
  mutable std::mutex projection_mu_;
  mutable std::map<std::string, std::unique_ptr<ProjectionEntry>> projections_;
};

struct GuardReport {
  std::string status = "off";  // off | ok | violated
  double delta = 0.0;
  bool applied = true;
};

/// Everything that defines a session; derived views are computed from it.
struct SessionState {
  ensemble::EnsembleState ensemble;
  std::vector<std::size_t> selection;  // raw instance ids, ascending
  std::string selection_source = "ids";
  bool errors_filter = false;
  std::string layout_mode;
  std::string axis_x = "auc_w";
  std::string axis_y = "div_q";
  std::uint64_t revision = 0;
  std::optional<double> cv_accuracy;  // from the last run_cv, for the current members
  GuardReport last_guard;
};

/// One analyst's interactive state. Mutations are serialized and bump the
/// revision exactly once; reads run concurrently against the committed state.
class Session {
 public:
  Session(std::string id, std::shared_ptr<const LibraryContext> ctx, SessionConfig config);

  const std::string& id() const noexcept { return id_; }
  const SessionConfig& config() const noexcept { return config_; }
  const LibraryContext& context() const noexcept { return *ctx_; }
  SessionState state() const;
  const ensemble::EnsembleState& initial_ensemble() const noexcept { return initial_; }
  const ensemble::SelectionTrace& initial_trace() const noexcept { return trace_; }

  // Mutations. Each returns the response body and carries the new revision.
  nlohmann::json set_selection(std::vector<std::size_t> ids);
  nlohmann::json set_selection_rect(double x0, double y0, double x1, double y1);
  nlohmann::json toggle_model(int model_id);
  nlohmann::json set_errors_filter(bool on);
  nlohmann::json set_layout(const std::string& mode);
  nlohmann::json set_axes(const std::string& x, const std::string& y);
  nlohmann::json run_cv();
  nlohmann::json reset_to_auto();

  // Reads.
  nlohmann::json frame(const std::optional<std::string>& mode = std::nullopt, int cols = 0, int rows = 0) const;
  nlohmann::json model_space(const std::optional<std::string>& x = std::nullopt,
                             const std::optional<std::string>& y = std::nullopt) const;
  nlohmann::json perf() const;
  nlohmann::json describe() const;

  /// Session fields minus derived matrices.
  nlohmann::json snapshot() const;
  /// Rebuilds a session from a snapshot over the same library.
  static std::unique_ptr<Session> restore(std::shared_ptr<const LibraryContext> ctx, const nlohmann::json& snapshot);
  /// Hash over the snapshot (session id excluded) and the combined probabilities.
  std::string digest() const;

  /// Selection after the errors filter.
  static std::vector<std::size_t> effective_selection(const SessionState& s);
  /// Frame of the given mode for a state (mode validated).
  layout::LayoutFrame build_frame(const SessionState& s, const std::string& mode) const;

 private:
  nlohmann::json perf_panel(const SessionState& s) const;
  nlohmann::json snapshot_body(const SessionState& s) const;
  nlohmann::json selection_body(const SessionState& s) const;
  nlohmann::json model_space_body(const SessionState& s, const std::string& x, const std::string& y) const;
  void validate_mode(const std::string& mode) const;

  std::string id_;
  std::shared_ptr<const LibraryContext> ctx_;
  SessionConfig config_;
  ensemble::SelectionTrace trace_;
  ensemble::EnsembleState initial_;
  mutable std::shared_mutex mu_;
  SessionState state_;
};

/// Sessions by id plus a cache of opened library contexts.
class SessionManager {
 public:
  explicit SessionManager(SessionConfig defaults = {}, std::string default_library = {});

  std::shared_ptr<Session> create(const nlohmann::json& params);
  std::shared_ptr<Session> get(const std::string& id) const;
  std::shared_ptr<const LibraryContext> context(const std::string& dir, std::size_t viz_sample, std::uint64_t seed);
  /// Registers an already built context under a name usable as "lib".
  void add_context(const std::string& name, std::shared_ptr<const LibraryContext> ctx);
  std::vector<std::string> session_ids() const;

 private:
  SessionConfig defaults_;
  std::string default_library_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::shared_ptr<const LibraryContext>> contexts_;
  std::uint64_t next_id_ = 1;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Routes one API call. Used by the HTTP server and by replay.
ApiResponse handle_request(SessionManager& manager, const std::string& method, const std::string& path,
                           const std::map<std::string, std::string>& query, const nlohmann::json& body);

struct ReplayResult {
  std::vector<nlohmann::json> responses;  // {call, method, path, status, body}
  std::string last_session;
  std::string digest;  // of the last session after the script
  nlohmann::json snapshot;
  int failures = 0;  // calls whose status differed from "expect_status" (default: < 400)
};

/// Executes a JSONL call script: one {"method", "path", "query"?, "body"?,
/// "expect_status"?} object per line. "{sid}" in paths expands to the most
/// recently created session id.
ReplayResult replay(SessionManager& manager, const std::string& script);

/// HTTP front end of handle_request.
class HttpServer {
 public:
  explicit HttpServer(SessionManager& manager, const std::string& static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocking HTTP server on the API. Returns false on bind failure.
bool serve(SessionManager& manager, const std::string& host, int port, const std::string& static_dir = {});

}  // namespace ensx::session
