#include "ensx/session/session.hpp"

#include <algorithm>
#include <cstdio>

#include "ensx/core/error.hpp"
#include "ensx/core/rng.hpp"
#include "ensx/metrics/metrics.hpp"

namespace ensx::session {

using nlohmann::json;

namespace {

json members_json(const library::ModelLibrary& lib, const std::vector<int>& members) {
  json out = json::array();
  for (int m : members) out.push_back({{"model_id", m}, {"spec_id", lib.spec_id(m)}});
  return out;
}

json guard_json(const GuardReport& g) { return {{"status", g.status}, {"delta", g.delta}, {"applied", g.applied}}; }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

bool is_projection(const std::string& mode) { return mode == "pca" || mode == "mds" || mode == "tsne"; }

}  // namespace

const char* guard_name(GuardMode mode) {
  switch (mode) {
    case GuardMode::Off: return "off";
    case GuardMode::Warn: return "warn";
    case GuardMode::Strict: return "strict";
  }
  return "?";
}

GuardMode guard_from_name(const std::string& name) {
  if (name == "off") return GuardMode::Off;
  if (name == "warn") return GuardMode::Warn;
  if (name == "strict") return GuardMode::Strict;
  throw Error(ErrorCode::InvalidArgument, "guard must be off, warn or strict");
}

json SessionConfig::to_json() const {
  return {{"metric", ensemble::hillclimb_name(select.metric)},
          {"max_size", select.max_size},
          {"bags", select.bags},
          {"bag_fraction", select.bag_fraction},
          {"seed", select.seed},
          {"guard", guard_name(guard)},
          {"tolerance", tolerance},
          {"grid_cols", grid_cols},
          {"grid_rows", grid_rows},
          {"viz_sample", viz_sample},
          {"layout_seed", layout_seed},
          {"perplexity", tsne.perplexity},
          {"tsne_iterations", tsne.iterations}};
}

SessionConfig SessionConfig::from_json(const json& j, SessionConfig c) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "session parameters must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "metric") c.select.metric = ensemble::hillclimb_from_name(v.get<std::string>());
      else if (key == "max_size") c.select.max_size = v.get<int>();
      else if (key == "bags") c.select.bags = v.get<int>();
      else if (key == "bag_fraction") c.select.bag_fraction = v.get<double>();
      else if (key == "seed") c.select.seed = v.get<std::uint64_t>();
      else if (key == "guard") c.guard = guard_from_name(v.get<std::string>());
      else if (key == "tolerance") c.tolerance = v.get<double>();
      else if (key == "grid_cols") c.grid_cols = v.get<int>();
      else if (key == "grid_rows") c.grid_rows = v.get<int>();
      else if (key == "viz_sample") c.viz_sample = v.get<std::size_t>();
      else if (key == "layout_seed") c.layout_seed = v.get<std::uint64_t>();
      else if (key == "perplexity") c.tsne.perplexity = v.get<double>();
      else if (key == "tsne_iterations") c.tsne.iterations = v.get<int>();
      else if (key != "lib") throw Error(ErrorCode::InvalidArgument, "unknown session parameter '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad session parameter: ") + e.what());
  }
  if (c.grid_cols < 1 || c.grid_rows < 1) throw Error(ErrorCode::InvalidArgument, "grid shape must be positive");
  if (c.tolerance < 0.0) throw Error(ErrorCode::InvalidArgument, "guard tolerance must be >= 0");
  return c;
}

LibraryContext::LibraryContext(library::ModelLibrary lib, dataio::Dataset ds, std::size_t viz_sample,
                               std::uint64_t seed)
    : lib_(std::move(lib)), ds_(std::move(ds)), seed_(seed) {
  if (ds_.fingerprint() != lib_.manifest.fingerprint) {
    throw Error(ErrorCode::FingerprintMismatch, "dataset fingerprint " + ds_.fingerprint() +
                                                    " does not match library fingerprint " + lib_.manifest.fingerprint);
  }
  const auto test_rows = ds_.test_rows();
  if (test_rows.size() != lib_.test_rows()) throw Error(ErrorCode::Corrupt, "library test block does not match dataset");
  viz_ids_.resize(test_rows.size());
  for (std::size_t i = 0; i < viz_ids_.size(); ++i) viz_ids_[i] = i;
  if (viz_sample > 0 && viz_sample < viz_ids_.size()) {
    Rng rng(seed, "viz-sample");
    rng.shuffle(std::span(viz_ids_));
    viz_ids_.resize(viz_sample);
    std::sort(viz_ids_.begin(), viz_ids_.end());
  }
  const auto view = dataio::encode(ds_);
  std::vector<std::size_t> rows;
  for (auto id : viz_ids_) rows.push_back(test_rows[id]);
  viz_matrix_ = dataio::gather_rows(view.matrix, rows);
}

std::shared_ptr<LibraryContext> LibraryContext::open(const std::string& dir, std::size_t viz_sample,
                                                     std::uint64_t seed) {
  auto lib = library::load_library(dir);
  if (!lib.manifest.source) {
    throw Error(ErrorCode::Precondition, "library manifest has no data source; cannot attach its dataset");
  }
  auto ds = lib.manifest.source->load();
  return std::make_shared<LibraryContext>(std::move(lib), std::move(ds), viz_sample, seed);
}

const LibraryContext::ProjectionEntry& LibraryContext::projection(const std::string& mode,
                                                                  const layout::TsneOptions& tsne) const {
  std::lock_guard lock(projection_mu_);
  const std::string key = mode == "tsne" ? "tsne/" + std::to_string(tsne.perplexity) + "/" +
                                               std::to_string(tsne.iterations) + "/" + std::to_string(seed_)
                                         : mode;
  if (auto it = projections_.find(key); it != projections_.end()) return *it->second;
  auto entry = std::make_unique<ProjectionEntry>();
  if (mode == "pca") {
    auto p = layout::pca_2d(viz_matrix_);
    entry->coords = std::move(p.coords);
    entry->meta = {{"degenerate", p.degenerate}, {"eigenvalues", p.eigenvalues}};
  } else if (mode == "mds") {
    auto p = layout::mds_2d(layout::euclidean_distances(viz_matrix_));
    entry->coords = std::move(p.coords);
    entry->meta = {{"degenerate", p.degenerate},
                   {"eigenvalues", p.eigenvalues},
                   {"clamped", p.clamped},
                   {"min_eigenvalue", p.min_eigenvalue}};
  } else if (mode == "tsne") {
    auto opts = tsne;
    opts.seed = seed_;
    const double n = static_cast<double>(viz_matrix_.rows());
    // Small frames cannot support the default perplexity.
    if (!(opts.perplexity < n / 3.0)) opts.perplexity = std::max(1.5, n / 3.0 - 1.0);
    auto r = layout::tsne_2d(viz_matrix_, opts);
    entry->coords = std::move(r.coords);
    entry->meta = {{"perplexity", opts.perplexity},
                   {"iterations", opts.iterations},
                   {"kl_after_exaggeration", r.kl_after_exaggeration},
                   {"kl_final", r.kl_final}};
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown projection '" + mode + "'");
  }
  return *projections_.emplace(key, std::move(entry)).first->second;
}

Session::Session(std::string id, std::shared_ptr<const LibraryContext> ctx, SessionConfig config)
    : id_(std::move(id)), ctx_(std::move(ctx)), config_(std::move(config)) {
  const auto& lib = ctx_->library();
  trace_ = ensemble::auto_select(lib, config_.select);
  initial_ = ensemble::evaluate(lib, trace_.members);
  state_.ensemble = initial_;
  state_.layout_mode = "attribute:" + ctx_->dataset().attributes.at(0).name;
}

SessionState Session::state() const {
  std::shared_lock lock(mu_);
  return state_;
}

std::vector<std::size_t> Session::effective_selection(const SessionState& s) {
  if (!s.errors_filter) return s.selection;
  std::vector<std::size_t> out;
  for (auto id : s.selection) {
    if (!s.ensemble.correct[id]) out.push_back(id);
  }
  return out;
}

void Session::validate_mode(const std::string& mode) const {
  if (is_projection(mode)) return;
  if (mode.rfind("attribute:", 0) == 0) {
    const auto attr = mode.substr(10);
    if (!ctx_->dataset().attribute_index(attr)) throw Error(ErrorCode::NotFound, "unknown attribute '" + attr + "'");
    return;
  }
  throw Error(ErrorCode::InvalidArgument, "layout mode must be attribute:<name>, pca, mds or tsne");
}

layout::LayoutFrame Session::build_frame(const SessionState& s, const std::string& mode) const {
  validate_mode(mode);
  if (!is_projection(mode)) return layout::attribute_layout(s.ensemble, ctx_->dataset(), mode.substr(10), ctx_->viz_ids());
  const auto& p = ctx_->projection(mode, config_.tsne);
  auto frame = layout::projection_layout(s.ensemble, p.coords, mode, ctx_->viz_ids(), ctx_->seed());
  frame.meta = p.meta;
  return frame;
}

json Session::perf_panel(const SessionState& s) const {
  const auto& lib = ctx_->library();
  return {{"current", ensemble::perf_json(s.ensemble.perf)},
          {"initial", ensemble::perf_json(initial_.perf)},
          {"members", members_json(lib, s.ensemble.members)},
          {"initial_members", members_json(lib, initial_.members)},
          {"errors", s.ensemble.error_count()},
          {"cv_accuracy", s.cv_accuracy ? json(*s.cv_accuracy) : json(nullptr)},
          {"guard", {{"mode", guard_name(config_.guard)}, {"tolerance", config_.tolerance}}}};
}

json Session::selection_body(const SessionState& s) const {
  const auto eff = effective_selection(s);
  json out = {{"raw_size", s.selection.size()},
              {"effective_size", eff.size()},
              {"effective_ids", eff},
              {"errors_filter", s.errors_filter},
              {"source", s.selection_source},
              {"empty", eff.empty()}};
  if (eff.empty()) {
    out["acc_local_available"] = false;
    out["local_accuracy"] = nullptr;
    out["ensemble_local_accuracy"] = nullptr;
  } else {
    out["acc_local_available"] = true;
    out["local_accuracy"] = metrics::local_accuracy_all_models(ctx_->library(), eff);
    out["ensemble_local_accuracy"] = metrics::accuracy(s.ensemble.predicted, ctx_->library().test_labels, eff);
  }
  return out;
}

json Session::model_space_body(const SessionState& s, const std::string& x, const std::string& y) const {
  const auto& lib = ctx_->library();
  const auto mx = metrics::parse_metric(x, lib.manifest.classes);
  const auto my = metrics::parse_metric(y, lib.manifest.classes);
  json out = {{"x", mx.str(lib.manifest.classes)}, {"y", my.str(lib.manifest.classes)}};
  const auto eff = effective_selection(s);
  const bool local = mx.kind == metrics::MetricKind::AccLocal || my.kind == metrics::MetricKind::AccLocal;
  if (local && eff.empty()) {
    out["available"] = false;
    out["reason"] = "acc_local needs a non-empty selection";
    out["points"] = nullptr;
    return out;
  }
  json pts = json::array();
  for (const auto& p : layout::model_space_coords(lib, &s.ensemble, mx, my, eff)) {
    json point = {{"model_id", p.model_id}, {"x", p.x}, {"y", p.y}, {"member", p.is_member},
                  {"spec_id", lib.spec_id(p.model_id)}};
    if (static_cast<std::size_t>(p.model_id) < lib.manifest.specs.size()) {
      point["family"] = models::family_name(lib.manifest.specs[static_cast<std::size_t>(p.model_id)].family());
    }
    pts.push_back(std::move(point));
  }
  out["available"] = true;
  out["points"] = std::move(pts);
  return out;
}

json Session::set_selection(std::vector<std::size_t> ids) {
  for (auto id : ids) {
    if (id >= ctx_->library().test_rows()) {
      throw Error(ErrorCode::InvalidArgument, "instance id " + std::to_string(id) + " is not a test instance");
    }
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::unique_lock lock(mu_);
  state_.selection = std::move(ids);
  state_.selection_source = "ids";
  ++state_.revision;
  json out = {{"revision", state_.revision}, {"selection", selection_body(state_)}};
  if (state_.axis_x == "acc_local" || state_.axis_y == "acc_local") {
    out["model_space"] = model_space_body(state_, state_.axis_x, state_.axis_y);
  }
  return out;
}

json Session::set_selection_rect(double x0, double y0, double x1, double y1) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  std::unique_lock lock(mu_);
  const auto frame = build_frame(state_, state_.layout_mode);
  std::vector<std::size_t> ids;
  for (const auto& p : frame.points) {
    if (p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1) ids.push_back(p.instance_id);
  }
  std::sort(ids.begin(), ids.end());
  state_.selection = std::move(ids);
  state_.selection_source = "rect:" + state_.layout_mode;
  ++state_.revision;
  json out = {{"revision", state_.revision},
              {"rect", {x0, y0, x1, y1}},
              {"selection", selection_body(state_)}};
  if (state_.axis_x == "acc_local" || state_.axis_y == "acc_local") {
    out["model_space"] = model_space_body(state_, state_.axis_x, state_.axis_y);
  }
  return out;
}

json Session::toggle_model(int model_id) {
  const auto& lib = ctx_->library();
  std::unique_lock lock(mu_);
  const bool removing = state_.ensemble.contains(model_id);
  auto next = ensemble::toggle(lib, state_.ensemble, model_id);
  GuardReport report;
  if (config_.guard != GuardMode::Off) {
    const auto verdict = ensemble::guard_check(state_.ensemble, next, config_.tolerance);
    report.status = verdict.ok ? "ok" : "violated";
    report.delta = verdict.delta;
    report.applied = verdict.ok || config_.guard == GuardMode::Warn;
  } else {
    report.delta = state_.ensemble.perf.accuracy_test - next.perf.accuracy_test;
  }
  if (report.applied) {
    state_.ensemble = std::move(next);
    state_.cv_accuracy.reset();
  }
  state_.last_guard = report;
  ++state_.revision;
  json out = {{"revision", state_.revision},
              {"model_id", model_id},
              {"action", removing ? "remove" : "add"},
              {"guard", guard_json(report)},
              {"perf", perf_panel(state_)},
              {"selection", selection_body(state_)}};
  if (state_.axis_x == "acc_local" || state_.axis_y == "acc_local") {
    out["model_space"] = model_space_body(state_, state_.axis_x, state_.axis_y);
  }
  return out;
}

json Session::set_errors_filter(bool on) {
  std::unique_lock lock(mu_);
  state_.errors_filter = on;
  ++state_.revision;
  return {{"revision", state_.revision}, {"selection", selection_body(state_)}};
}

json Session::set_layout(const std::string& mode) {
  validate_mode(mode);
  std::unique_lock lock(mu_);
  state_.layout_mode = mode;
  // The ids stay; a rectangle drawn in the previous layout no longer describes them.
  if (state_.selection_source != "ids") state_.selection_source = "ids";
  ++state_.revision;
  return {{"revision", state_.revision}, {"layout_mode", mode}};
}

json Session::set_axes(const std::string& x, const std::string& y) {
  const auto& classes = ctx_->library().manifest.classes;
  const auto mx = metrics::parse_metric(x, classes).str(classes);
  const auto my = metrics::parse_metric(y, classes).str(classes);
  std::unique_lock lock(mu_);
  state_.axis_x = mx;
  state_.axis_y = my;
  ++state_.revision;
  return {{"revision", state_.revision}, {"model_space", model_space_body(state_, mx, my)}};
}

json Session::run_cv() {
  std::unique_lock lock(mu_);
  state_.cv_accuracy = state_.ensemble.perf.accuracy_cv;
  ++state_.revision;
  return {{"revision", state_.revision},
          {"accuracy_cv", *state_.cv_accuracy},
          {"accuracy_test", state_.ensemble.perf.accuracy_test},
          {"members", state_.ensemble.members}};
}

json Session::reset_to_auto() {
  std::unique_lock lock(mu_);
  state_.ensemble = initial_;
  state_.cv_accuracy.reset();
  state_.last_guard = {};
  ++state_.revision;
  return {{"revision", state_.revision}, {"perf", perf_panel(state_)}, {"selection", selection_body(state_)}};
}

json Session::frame(const std::optional<std::string>& mode, int cols, int rows) const {
  std::shared_lock lock(mu_);
  const std::string m = mode.value_or(state_.layout_mode);
  const auto f = build_frame(state_, m);
  const int c = cols > 0 ? cols : config_.grid_cols;
  const int r = rows > 0 ? rows : config_.grid_rows;
  return {{"revision", state_.revision},
          {"frame", f.to_json()},
          {"density", {{"all", layout::density_grid(f, c, r, false).to_json()},
                       {"errors", layout::density_grid(f, c, r, true).to_json()}}},
          {"perf", perf_panel(state_)}};
}

json Session::model_space(const std::optional<std::string>& x, const std::optional<std::string>& y) const {
  std::shared_lock lock(mu_);
  json out = model_space_body(state_, x.value_or(state_.axis_x), y.value_or(state_.axis_y));
  out["revision"] = state_.revision;
  return out;
}

json Session::perf() const {
  std::shared_lock lock(mu_);
  return {{"revision", state_.revision}, {"perf", perf_panel(state_)}};
}

json Session::describe() const {
  std::shared_lock lock(mu_);
  const auto& ds = ctx_->dataset();
  json attrs = json::array();
  for (const auto& a : ds.attributes) attrs.push_back({{"name", a.name}, {"numeric", a.is_numeric()}});
  return {{"session_id", id_},
          {"revision", state_.revision},
          {"classes", ds.classes},
          {"attributes", attrs},
          {"library_size", ctx_->library().size()},
          {"test_instances", ctx_->library().test_rows()},
          {"laid_out_instances", ctx_->viz_ids().size()},
          {"layout_mode", state_.layout_mode},
          {"axes", {state_.axis_x, state_.axis_y}},
          {"config", config_.to_json()},
          {"auto_select", trace_.to_json(ctx_->library())},
          {"perf", perf_panel(state_)}};
}

json Session::snapshot() const {
  std::shared_lock lock(mu_);
  json out = snapshot_body(state_);
  out["session_id"] = id_;
  return out;
}

json Session::snapshot_body(const SessionState& s) const {
  return {{"revision", s.revision},
          {"fingerprint", ctx_->library().manifest.fingerprint},
          {"config", config_.to_json()},
          {"initial_members", initial_.members},
          {"members", s.ensemble.members},
          {"selection", s.selection},
          {"selection_source", s.selection_source},
          {"errors_filter", s.errors_filter},
          {"layout_mode", s.layout_mode},
          {"axes", {s.axis_x, s.axis_y}},
          {"cv_accuracy", s.cv_accuracy ? json(*s.cv_accuracy) : json(nullptr)},
          {"last_guard", guard_json(s.last_guard)}};
}

std::unique_ptr<Session> Session::restore(std::shared_ptr<const LibraryContext> ctx, const json& snap) {
  try {
    if (snap.at("fingerprint").get<std::string>() != ctx->library().manifest.fingerprint) {
      throw Error(ErrorCode::FingerprintMismatch, "snapshot belongs to a different library");
    }
    auto config = SessionConfig::from_json(snap.at("config"));
    auto s = std::make_unique<Session>(snap.at("session_id").get<std::string>(), std::move(ctx), config);
    if (s->initial_.members != snap.at("initial_members").get<std::vector<int>>()) {
      throw Error(ErrorCode::Conflict, "auto selection no longer reproduces the snapshot's initial ensemble");
    }
    auto& st = s->state_;
    st.ensemble = ensemble::evaluate(s->ctx_->library(), snap.at("members").get<std::vector<int>>());
    st.selection = snap.at("selection").get<std::vector<std::size_t>>();
    for (auto id : st.selection) {
      if (id >= s->ctx_->library().test_rows()) throw Error(ErrorCode::Corrupt, "snapshot selection out of range");
    }
    st.selection_source = snap.at("selection_source").get<std::string>();
    st.errors_filter = snap.at("errors_filter").get<bool>();
    st.layout_mode = snap.at("layout_mode").get<std::string>();
    s->validate_mode(st.layout_mode);
    st.axis_x = snap.at("axes").at(0).get<std::string>();
    st.axis_y = snap.at("axes").at(1).get<std::string>();
    st.revision = snap.at("revision").get<std::uint64_t>();
    if (!snap.at("cv_accuracy").is_null()) st.cv_accuracy = snap.at("cv_accuracy").get<double>();
    const auto& g = snap.at("last_guard");
    st.last_guard = {g.at("status").get<std::string>(), g.at("delta").get<double>(), g.at("applied").get<bool>()};
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Corrupt, std::string("malformed session snapshot: ") + e.what());
  }
}

std::string Session::digest() const {
  std::shared_lock lock(mu_);
  std::uint64_t h = fnv1a64(snapshot_body(state_).dump());  // without the session id
  const auto& probs = state_.ensemble.combined_test.data();
  h = fnv1a64({reinterpret_cast<const char*>(probs.data()), probs.size() * sizeof(double)}, h);
  const auto& pred = state_.ensemble.predicted;
  h = fnv1a64({reinterpret_cast<const char*>(pred.data()), pred.size() * sizeof(int)}, h);
  return hex64(h);
}

SessionManager::SessionManager(SessionConfig defaults, std::string default_library)
    : defaults_(std::move(defaults)), default_library_(std::move(default_library)) {}

std::shared_ptr<const LibraryContext> SessionManager::context(const std::string& dir, std::size_t viz_sample,
                                                              std::uint64_t seed) {
  std::lock_guard lock(mu_);
  if (auto it = contexts_.find(dir); it != contexts_.end()) return it->second;
  const std::string key = dir + "|" + std::to_string(viz_sample) + "|" + std::to_string(seed);
  if (auto it = contexts_.find(key); it != contexts_.end()) return it->second;
  auto ctx = LibraryContext::open(dir, viz_sample, seed);
  contexts_.emplace(key, ctx);
  return ctx;
}

void SessionManager::add_context(const std::string& name, std::shared_ptr<const LibraryContext> ctx) {
  std::lock_guard lock(mu_);
  contexts_[name] = std::move(ctx);
}

std::shared_ptr<Session> SessionManager::create(const json& params) {
  const json p = params.is_null() ? json::object() : params;
  if (!p.is_object()) throw Error(ErrorCode::InvalidArgument, "session parameters must be a JSON object");
  std::string lib = p.contains("lib") ? p.at("lib").get<std::string>() : default_library_;
  if (lib.empty()) throw Error(ErrorCode::InvalidArgument, "no library given and no default library configured");
  const auto config = SessionConfig::from_json(p, defaults_);
  auto ctx = context(lib, config.viz_sample, config.layout_seed);
  std::string id;
  {
    std::lock_guard lock(mu_);
    id = "s" + std::to_string(next_id_++);
  }
  auto session = std::make_shared<Session>(id, std::move(ctx), config);
  std::lock_guard lock(mu_);
  sessions_.emplace(id, session);
  return session;
}

std::shared_ptr<Session> SessionManager::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "no session '" + id + "'");
  return it->second;
}

std::vector<std::string> SessionManager::session_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

}  // namespace ensx::session
