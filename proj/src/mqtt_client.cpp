#include "shv/mqtt_client.hpp"

#include "shv/error.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

namespace shv {

namespace {

constexpr std::uint64_t min_backoff_ns = 1'000'000'000;
constexpr std::uint64_t max_backoff_ns = 60'000'000'000;
constexpr int connack_timeout_ms = 5000;

int dial(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0)
    return -1;
  int fd = -1;
  for (auto* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0)
      continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0)
      break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd >= 0) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  return fd;
}

} // namespace

MqttClient::MqttClient(std::string host, std::uint16_t port, std::string client_id, Clock& clock,
                       std::uint16_t keep_alive_s)
  : host_(std::move(host)), port_(port), client_id_(std::move(client_id)), clock_(clock),
    keep_alive_s_(keep_alive_s) {}

MqttClient::~MqttClient() { close(); }

bool MqttClient::connected() const {
  std::scoped_lock lock(mutex_);
  return fd_ >= 0;
}

void MqttClient::drop_connection() {
  if (fd_ >= 0)
    ::close(fd_);
  fd_ = -1;
  next_attempt_ns_ = clock_.now_ns() + backoff_ns_;
  backoff_ns_ = std::min(backoff_ns_ * 2, max_backoff_ns);
}

void MqttClient::connect_now() {
  int fd = dial(host_, port_);
  if (fd < 0) {
    drop_connection();
    throw Error(Errc::broker_unreachable, "cannot connect to " + host_ + ":" + std::to_string(port_));
  }
  fd_ = fd;
  try {
    send(wire::encode_packet(wire::Connect{client_id_, keep_alive_s_}));
    wire::Bytes buf;
    for (;;) {
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, connack_timeout_ms) <= 0)
        throw Error(Errc::broker_unreachable, "no ConnAck from broker");
      std::uint8_t tmp[64];
      auto n = ::recv(fd_, tmp, sizeof tmp, 0);
      if (n <= 0)
        throw Error(Errc::broker_unreachable, "broker closed during connect");
      buf.insert(buf.end(), tmp, tmp + n);
      if (auto d = wire::decode_packet(buf)) {
        auto* ack = std::get_if<wire::ConnAck>(&d->packet);
        if (!ack || ack->code != 0)
          throw Error(Errc::broker_unreachable, "broker refused the connection");
        break;
      }
    }
  } catch (const Error& e) {
    drop_connection();
    if (e.code() == Errc::broker_unreachable)
      throw;
    throw Error(Errc::broker_unreachable, e.what());
  }
  backoff_ns_ = min_backoff_ns;
  ++connects_;
}

void MqttClient::ensure_connected() {
  if (fd_ >= 0)
    return;
  if (clock_.now_ns() < next_attempt_ns_)
    throw Error(Errc::broker_unreachable, "broker unreachable; retry pending");
  connect_now();
}

void MqttClient::send(const wire::Bytes& bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    auto n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR)
      continue;
    if (n <= 0) {
      auto why = std::string(std::strerror(errno));
      drop_connection();
      throw Error(Errc::broker_unreachable, "send failed: " + why);
    }
    off += static_cast<std::size_t>(n);
  }
  last_send_ns_ = clock_.now_ns();
}

// Discards PingResp and anything else the broker sends; notices a close.
void MqttClient::drain() {
  std::uint8_t tmp[256];
  for (;;) {
    auto n = ::recv(fd_, tmp, sizeof tmp, MSG_DONTWAIT);
    if (n > 0)
      continue;
    if (n == 0 || (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)) {
      drop_connection();
      throw Error(Errc::broker_unreachable, "broker closed the connection");
    }
    return;
  }
}

void MqttClient::publish(const wire::Publish& packet) {
  std::scoped_lock lock(mutex_);
  ensure_connected();
  drain();
  send(wire::encode_packet(packet));
}

void MqttClient::idle(std::uint64_t now_ns) {
  std::scoped_lock lock(mutex_);
  try {
    ensure_connected();
    drain();
    if (keep_alive_s_ > 0 && now_ns - last_send_ns_ >= keep_alive_s_ * 500'000'000ULL)
      send(wire::encode_packet(wire::PingReq{}));
  } catch (const Error&) {
    // Reported through the next publish.
  }
}

void MqttClient::close() {
  std::scoped_lock lock(mutex_);
  if (fd_ < 0)
    return;
  auto bytes = wire::encode_packet(wire::Disconnect{});
  (void)::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
  ::close(fd_);
  fd_ = -1;
}

} // namespace shv
