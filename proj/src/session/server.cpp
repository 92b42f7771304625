#include <cstdio>

#include "ensx/core/error.hpp"
#include "ensx/session/session.hpp"
#include "httplib.h"

namespace ensx::session {

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(SessionManager& manager, const std::string& static_dir) : impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;
  if (!static_dir.empty() && !server.set_mount_point("/ui", static_dir)) {
    throw Error(ErrorCode::NotFound, "static directory " + static_dir + " not found");
  }
  auto handler = [&manager](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    nlohmann::json body = nlohmann::json::object();
    ApiResponse out;
    bool parsed = true;
    if (!req.body.empty()) {
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        out = {400, {{"error", {{"code", "parse"}, {"message", e.what()}}}}};
        parsed = false;
      }
    }
    if (parsed) out = handle_request(manager, req.method, req.path, query, body);
    res.status = out.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(out.body.dump(), "application/json");
  };
  server.Get(R"(/.*)", handler);
  server.Post(R"(/.*)", handler);
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

bool serve(SessionManager& manager, const std::string& host, int port, const std::string& static_dir) {
  HttpServer server(manager, static_dir);
  const int bound = server.bind(host, port);
  if (bound < 0) {
    std::fprintf(stderr, "cannot bind %s:%d\n", host.c_str(), port);
    return false;
  }
  std::fprintf(stderr, "listening on http://%s:%d\n", host.c_str(), bound);
  server.run();
  return true;
}

}  // namespace ensx::session
