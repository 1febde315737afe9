#pragma once

// Publish-only MQTT broker in front of the store: sessions decode Publish
// packets, topics become SIDs, readings go to a last-readings cache and,
// batched, to storage.

#include "shv/clock.hpp"
#include "shv/database.hpp"
#include "shv/http.hpp"
#include "shv/ptree.hpp"
#include "shv/sensor_cache.hpp"
#include "shv/wire.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace shv {

struct AgentConfig {
  std::string mqtt_host = "0.0.0.0";
  std::uint16_t mqtt_port = wire::default_port;  // 0 picks a free port
  std::string rest_host = "0.0.0.0";
  std::optional<std::uint16_t> rest_port;        // unset disables REST
  std::uint64_t cache_window_ns = default_cache_window_ns;
  StoreConfig store;
  std::uint64_t batch_interval_ns = 100'000'000;
  std::size_t batch_size = 1000;
  std::size_t queue_capacity = 1 << 18;  // readings, across all writers
  std::size_t writers = 1;

  /// `global { mqttPort ...; restPort ...; cacheWindow ... }` and
  /// `storage { nodes ...; path ...; partitionLevel ... }`. Relative storage
  /// paths resolve against `base_dir`.
  static AgentConfig from_tree(const PropertyTree& root,
                               const std::filesystem::path& base_dir = ".");
  static AgentConfig load(const std::filesystem::path& file);
};

struct AgentStats {
  std::uint64_t connections = 0;
  std::uint64_t sessions_closed = 0;
  std::uint64_t protocol_errors = 0;
  std::uint64_t packets = 0;
  std::uint64_t received = 0;    // readings accepted from Publish packets
  std::uint64_t stored = 0;      // readings handed to the store
  std::uint64_t violations = 0;  // dropped Publish messages
};

/// Session protocol state, independent of sockets.
class BrokerSession {
public:
  struct Output {
    wire::Bytes reply;
    std::vector<wire::Publish> publishes;
    bool closed = false;  // clean Disconnect
  };

  /// Throws Error{protocol_violation}; the session must then be dropped.
  Output feed(std::span<const std::uint8_t> bytes);

  bool connected() const { return connected_; }
  const std::string& client_id() const { return client_id_; }
  std::uint16_t keep_alive_s() const { return keep_alive_s_; }

private:
  wire::Bytes buffer_;
  bool connected_ = false;
  bool closed_ = false;
  std::string client_id_;
  std::uint16_t keep_alive_s_ = 0;
};

class CollectAgent {
public:
  CollectAgent(AgentConfig cfg, Clock& clock);
  ~CollectAgent();
  CollectAgent(const CollectAgent&) = delete;
  CollectAgent& operator=(const CollectAgent&) = delete;

  /// Returns the number of readings accepted. A malformed topic or payload
  /// drops the message and counts a violation.
  std::size_t handle_publish(const std::string& topic, std::span<const std::uint8_t> payload);

  /// Throws Error{unknown_sensor} or Error{empty_cache}.
  RawPoint latest(const Topic& topic) const;
  /// Throws Error{unknown_sensor} or Error{empty_window}.
  double average(const Topic& topic, std::uint64_t window_ns) const;
  std::vector<Topic> sensors() const;

  /// Listens for MQTT (and REST if configured). Throws Error{bind_failure}.
  void start();
  /// Closes sessions, then drains and flushes pending storage batches.
  void stop();

  /// Blocks until every accepted reading is in the store, then flushes it.
  void flush();

  std::uint16_t mqtt_port() const { return mqtt_port_; }
  std::uint16_t rest_port() const { return http_ ? http_->port() : 0; }
  AgentStats stats() const;
  std::size_t sessions() const;
  Database& database() { return *db_; }

  RestResponse handle_rest(const RestRequest& req);

private:
  struct Writer {
    std::mutex mutex;
    std::condition_variable cv;       // work arrived or stop
    std::condition_variable room_cv;  // queue shrank
    std::deque<SensorReading> queue;
    std::size_t in_flight = 0;
    bool urgent = false;  // flush requested
    std::thread thread;
  };
  struct Connection {
    int fd = -1;
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void enqueue(std::vector<SensorReading> readings);
  void writer_loop(Writer& w);
  void accept_loop();
  void session_loop(Connection& c);
  void reap_connections(bool all);
  SensorCache& cache_for(SensorId sid);

  AgentConfig cfg_;
  Clock& clock_;
  std::unique_ptr<Database> db_;

  mutable std::shared_mutex caches_mutex_;
  std::map<SensorId, std::unique_ptr<SensorCache>> caches_;

  std::vector<std::unique_ptr<Writer>> writers_;
  std::atomic<bool> writers_stop_{false};

  mutable std::mutex stats_mutex_;
  AgentStats stats_;

  std::atomic<bool> running_{false};
  int listen_fd_ = -1;
  std::uint16_t mqtt_port_ = 0;
  std::thread acceptor_;
  mutable std::mutex conns_mutex_;
  std::list<std::unique_ptr<Connection>> conns_;
  std::unique_ptr<HttpServer> http_;
};

} // namespace shv
