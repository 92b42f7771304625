#include <sstream>

#include "ensx/core/error.hpp"
#include "ensx/session/session.hpp"

namespace ensx::session {

using nlohmann::json;

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::Parse: return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict:
    case ErrorCode::Unavailable: return 409;
    case ErrorCode::Precondition:
    case ErrorCode::FingerprintMismatch:
    case ErrorCode::VersionMismatch:
    case ErrorCode::Corrupt: return 422;
    case ErrorCode::Io: return 500;
  }
  return 500;
}

std::vector<std::string> segments(const std::string& path) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::optional<std::string> query_value(const std::map<std::string, std::string>& q, const std::string& key) {
  const auto it = q.find(key);
  if (it == q.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

int query_int(const std::map<std::string, std::string>& q, const std::string& key) {
  const auto v = query_value(q, key);
  if (!v) return 0;
  try {
    return std::stoi(*v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "query parameter '" + key + "' must be an integer");
  }
}

ApiResponse not_found(const std::string& method, const std::string& path) {
  return {404, {{"error", {{"code", "not_found"}, {"message", "no route for " + method + " " + path}}}}};
}

ApiResponse route(SessionManager& manager, const std::string& method, const std::string& path,
                  const std::map<std::string, std::string>& query, const json& body,
                  std::shared_ptr<Session>& session) {
  const auto seg = segments(path);
  if (seg.empty() || seg[0] != "sessions") {
    if (method == "GET" && seg.size() == 1 && seg[0] == "health") return {200, {{"status", "ok"}}};
    return not_found(method, path);
  }
  if (seg.size() == 1) {
    if (method == "POST") {
      session = manager.create(body);
      auto out = session->describe();
      return {201, out};
    }
    if (method == "GET") return {200, {{"sessions", manager.session_ids()}}};
    return not_found(method, path);
  }
  session = manager.get(seg[1]);
  const std::string action = seg.size() >= 3 ? seg[2] : "";
  try {
    if (method == "GET") {
      if (seg.size() == 2) return {200, session->describe()};
      if (seg.size() == 3 && action == "frame") {
        return {200, session->frame(query_value(query, "mode"), query_int(query, "cols"), query_int(query, "rows"))};
      }
      if (seg.size() == 3 && action == "model-space") {
        return {200, session->model_space(query_value(query, "x"), query_value(query, "y"))};
      }
      if (seg.size() == 3 && action == "perf") return {200, session->perf()};
      if (seg.size() == 3 && action == "snapshot") return {200, session->snapshot()};
    } else if (method == "POST") {
      if (seg.size() == 3 && action == "selection") {
        if (body.contains("rect")) {
          const auto& r = body.at("rect");
          if (r.is_array()) {
            return {200, session->set_selection_rect(r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(),
                                                     r.at(3).get<double>())};
          }
          return {200, session->set_selection_rect(r.at("x0").get<double>(), r.at("y0").get<double>(),
                                                   r.at("x1").get<double>(), r.at("y1").get<double>())};
        }
        return {200, session->set_selection(body.value("ids", std::vector<std::size_t>{}))};
      }
      if (seg.size() == 5 && action == "models" && seg[4] == "toggle") {
        int id = 0;
        try {
          std::size_t used = 0;
          id = std::stoi(seg[3], &used);
          if (used != seg[3].size()) throw std::invalid_argument("id");
        } catch (const std::exception&) {
          throw Error(ErrorCode::InvalidArgument, "model id must be an integer");
        }
        return {200, session->toggle_model(id)};
      }
      if (seg.size() == 3 && action == "errors-filter") return {200, session->set_errors_filter(body.at("on").get<bool>())};
      if (seg.size() == 3 && action == "layout") return {200, session->set_layout(body.at("mode").get<std::string>())};
      if (seg.size() == 3 && action == "axes") {
        return {200, session->set_axes(body.at("x").get<std::string>(), body.at("y").get<std::string>())};
      }
      if (seg.size() == 3 && action == "cv") return {200, session->run_cv()};
      if (seg.size() == 3 && action == "reset") return {200, session->reset_to_auto()};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad request body: ") + e.what());
  }
  return not_found(method, path);
}

}  // namespace

ApiResponse handle_request(SessionManager& manager, const std::string& method, const std::string& path,
                           const std::map<std::string, std::string>& query, const json& body) {
  std::shared_ptr<Session> session;
  ApiResponse res;
  try {
    res = route(manager, method, path, query, body, session);
  } catch (const Error& e) {
    res = {status_for(e.code()), {{"error", {{"code", to_string(e.code())}, {"message", e.what()}}}}};
    if (e.model_id()) res.body["error"]["model_id"] = *e.model_id();
  } catch (const json::exception& e) {
    res = {400, {{"error", {{"code", "invalid_argument"}, {"message", e.what()}}}}};
  }
  if (session && res.body.is_object() && !res.body.contains("revision")) res.body["revision"] = session->state().revision;
  return res;
}

ReplayResult replay(SessionManager& manager, const std::string& script) {
  ReplayResult out;
  std::istringstream in(script);
  std::string line;
  int call = 0;
  while (std::getline(in, line)) {
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    json step;
    try {
      step = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Parse, "replay line " + std::to_string(call + 1) + " is not JSON: " + e.what());
    }
    const auto method = step.value("method", std::string("GET"));
    auto path = step.value("path", std::string());
    for (std::size_t pos; (pos = path.find("{sid}")) != std::string::npos;) path.replace(pos, 5, out.last_session);
    std::map<std::string, std::string> query;
    if (step.contains("query")) {
      for (const auto& [k, v] : step.at("query").items()) query[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    const json body = step.contains("body") ? step.at("body") : json::object();
    const auto res = handle_request(manager, method, path, query, body);
    if (method == "POST" && path == "/sessions" && res.status == 201) {
      out.last_session = res.body.at("session_id").get<std::string>();
    }
    const bool expected = step.contains("expect_status") ? res.status == step.at("expect_status").get<int>()
                                                         : res.status < 400;
    if (!expected) ++out.failures;
    out.responses.push_back({{"call", call}, {"method", method}, {"path", path}, {"status", res.status},
                             {"expected", expected}, {"body", res.body}});
    ++call;
  }
  if (!out.last_session.empty()) {
    const auto s = manager.get(out.last_session);
    out.digest = s->digest();
    out.snapshot = s->snapshot();
  }
  return out;
}

}  // namespace ensx::session
