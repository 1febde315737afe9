#pragma once

#include "shv/clock.hpp"
#include "shv/wire.hpp"

#include <cstdint>
#include <functional>
#include <mutex>
#include <string>

namespace shv {

/// Where a pusher's Publish packets go.
class Publisher {
public:
  virtual ~Publisher() = default;
  /// Throws Error{broker_unreachable}; the packet was not delivered.
  virtual void publish(const wire::Publish& packet) = 0;
  /// Called once per send slot even with nothing to send.
  virtual void idle(std::uint64_t /*now_ns*/) {}
  virtual bool connected() const { return true; }
  virtual void close() {}
};

/// Hands packets to a callback; used to wire a pusher to an in-process sink.
class CallbackPublisher final : public Publisher {
public:
  explicit CallbackPublisher(std::function<void(const wire::Publish&)> fn) : fn_(std::move(fn)) {}
  void publish(const wire::Publish& packet) override { fn_(packet); }

private:
  std::function<void(const wire::Publish&)> fn_;
};

/// MQTT 3.1.1 QoS-0 publisher over TCP. Reconnects lazily with exponential
/// backoff from 1 s to 60 s, timed by the injected clock.
class MqttClient final : public Publisher {
public:
  MqttClient(std::string host, std::uint16_t port, std::string client_id, Clock& clock,
             std::uint16_t keep_alive_s = wire::default_keep_alive_s);
  ~MqttClient() override;

  void publish(const wire::Publish& packet) override;
  void idle(std::uint64_t now_ns) override;
  bool connected() const override;
  /// Sends Disconnect and closes.
  void close() override;

  std::uint64_t connects() const { return connects_; }
  std::uint64_t backoff_ns() const { return backoff_ns_; }

private:
  void ensure_connected();
  void connect_now();
  void send(const wire::Bytes& bytes);
  void drain();
  void drop_connection();

  std::string host_;
  std::uint16_t port_;
  std::string client_id_;
  Clock& clock_;
  std::uint16_t keep_alive_s_;

  mutable std::mutex mutex_;
  int fd_ = -1;
  std::uint64_t next_attempt_ns_ = 0;
  std::uint64_t backoff_ns_ = 1'000'000'000;
  std::uint64_t last_send_ns_ = 0;
  std::uint64_t connects_ = 0;
};

} // namespace shv
