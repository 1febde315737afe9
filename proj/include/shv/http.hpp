#pragma once

// Minimal REST plumbing. Handlers are plain functions from request to
// response so daemons can be tested without sockets; HttpServer binds them
// to a port.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <thread>

namespace shv {

struct RestRequest {
  std::string method;  // GET, POST
  std::string path;
  std::map<std::string, std::string> params;
};

struct RestResponse {
  int status = 200;
  std::string body;
  std::string content_type = "text/plain";
};

using RestHandler = std::function<RestResponse(const RestRequest&)>;

class HttpServer {
public:
  explicit HttpServer(RestHandler handler);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Throws Error{bind_failure}.
  void start(const std::string& host, std::uint16_t port);
  void stop();
  std::uint16_t port() const { return port_; }

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  std::uint16_t port_ = 0;
};

/// "host:port" with a default port.
std::pair<std::string, std::uint16_t> split_host_port(const std::string& text,
                                                      std::uint16_t default_port);

} // namespace shv
