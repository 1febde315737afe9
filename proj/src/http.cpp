#include "shv/http.hpp"

#include "shv/error.hpp"

#include <httplib.h>

#include <charconv>

namespace shv {

struct HttpServer::Impl {
  httplib::Server server;
  RestHandler handler;
};

HttpServer::HttpServer(RestHandler handler) : impl_(std::make_unique<Impl>()) {
  impl_->handler = std::move(handler);
  auto serve = [this](const httplib::Request& req, httplib::Response& res) {
    RestRequest r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params)
      r.params.emplace(k, v);
    RestResponse out;
    try {
      out = impl_->handler(r);
    } catch (const std::exception& e) {
      out = {500, std::string(e.what()) + "\n"};
    }
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  impl_->server.Get(".*", serve);
  impl_->server.Post(".*", serve);
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::start(const std::string& host, std::uint16_t port) {
  int bound = 0;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (impl_->server.bind_to_port(host, port)) {
    bound = port;
  }
  if (bound <= 0)
    throw Error(Errc::bind_failure, "cannot bind REST endpoint " + host + ":" + std::to_string(port));
  port_ = static_cast<std::uint16_t>(bound);
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  if (thread_.joinable()) {
    impl_->server.stop();
    thread_.join();
  }
}

std::pair<std::string, std::uint16_t> split_host_port(const std::string& text,
                                                      std::uint16_t default_port) {
  auto colon = text.rfind(':');
  if (colon == std::string::npos)
    return {text, default_port};
  unsigned port = 0;
  auto p = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), port);
  if (ec != std::errc{} || ptr != p.data() + p.size() || port > 65535)
    throw Error(Errc::config_error, "bad port in '" + text + "'");
  return {text.substr(0, colon), static_cast<std::uint16_t>(port)};
}

} // namespace shv
