#pragma once

// The collection daemon: samples plugin groups on epoch-aligned ticks,
// caches readings per sensor and pushes them in per-topic batches.
//
// Two ways to drive it: poll() runs everything due at the clock's current
// time on the calling thread (deterministic, for simulated clocks), while
// start() runs a scheduler, a sampler pool and a sender in the background.

#include "shv/clock.hpp"
#include "shv/http.hpp"
#include "shv/mqtt_client.hpp"
#include "shv/plugins.hpp"
#include "shv/ptree.hpp"
#include "shv/sensor_cache.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

namespace shv {

inline constexpr std::string_view shv_version = "1.0.0";

struct PusherConfig {
  std::string broker = "127.0.0.1:1883";
  std::string client_id = "pusher";
  Topic prefix;
  std::size_t threads = 2;
  std::uint64_t send_interval_ns = 1'000'000'000;
  std::uint64_t cache_window_ns = default_cache_window_ns;
  std::string rest;  // host:port; empty disables REST
  std::uint16_t keep_alive_s = wire::default_keep_alive_s;
  PropertyTree root;                   // whole config; plugin blocks live here
  std::filesystem::path config_file;   // reload source, if any

  /// `global { broker ...; mqttprefix ...; threads ...; sendInterval ...;
  /// cacheWindow ...; restAddress ...; clientId ... }` plus plugin blocks.
  static PusherConfig from_tree(const PropertyTree& root);
  static PusherConfig load(const std::filesystem::path& file);
};

/// Smallest t > now with t % interval == 0.
std::uint64_t next_tick(std::uint64_t now_ns, std::uint64_t interval_ns);
/// FNV-1a 64 of the client id, mod the send interval.
std::uint64_t send_phase(std::string_view client_id, std::uint64_t send_interval_ns);

struct TopicReading {
  Topic topic;
  std::uint64_t ts = 0;
  std::int64_t value = 0;
};

struct PusherStats {
  std::uint64_t sampled = 0;
  std::uint64_t read_errors = 0;
  std::uint64_t overruns = 0;
  std::uint64_t published = 0;  // readings handed to the publisher
  std::uint64_t packets = 0;
  std::uint64_t dropped = 0;    // evicted from pending buffers
  std::uint64_t send_failures = 0;
};

struct PluginInfo {
  std::string name;
  std::string kind;
  bool running = false;
  std::size_t sensors = 0;
};

enum class PluginAction { start, stop, reload };

class Pusher {
public:
  Pusher(PusherConfig cfg, Clock& clock, std::unique_ptr<Publisher> publisher);
  ~Pusher();
  Pusher(const Pusher&) = delete;
  Pusher& operator=(const Pusher&) = delete;

  /// Samples every group whose tick is due and sends if the send slot is
  /// due, all at clock.now_ns(). Missed ticks are skipped and counted.
  void poll();

  /// Background mode: scheduler, sampler pool and REST (if configured).
  void start();
  void stop();

  /// Reads one group at `tick`. Throws Error{plugin_stopped}.
  std::vector<TopicReading> sample_group(const std::string& plugin, std::size_t group,
                                         std::uint64_t tick);

  /// Publishes every pending reading, one packet per topic.
  void flush();

  /// Throws Error{unknown_plugin} or Error{reload_failed}.
  void plugin_control(const std::string& name, PluginAction action);

  /// Throws Error{unknown_sensor} or Error{empty_window}.
  double cache_average(const Topic& topic, std::uint64_t window_ns) const;
  std::vector<RawPoint> cache_snapshot(const Topic& topic) const;

  std::vector<PluginInfo> plugins() const;
  std::vector<Topic> sensors() const;
  PusherStats stats() const;
  std::size_t pending() const;
  std::uint64_t phase_ns() const { return phase_; }
  const PusherConfig& config() const { return cfg_; }
  std::uint16_t rest_port() const;

  /// CPU time consumed by the background threads so far.
  std::uint64_t thread_cpu_ns() const;

  RestResponse handle_rest(const RestRequest& req);

private:
  struct GroupState {
    std::uint64_t next_tick = 0;
    bool busy = false;
  };
  struct PluginEntry {
    std::unique_ptr<Plugin> plugin;
    PropertyTree block;
    bool running = true;
    std::vector<GroupState> groups;
  };
  struct Task {
    std::string plugin;
    std::size_t group = 0;
    std::uint64_t tick = 0;
  };

  std::unique_ptr<Plugin> build_plugin(const PropertyTree& block) const;
  void add_plugin(const PropertyTree& block);
  void schedule_groups(PluginEntry& e, std::uint64_t now);
  void record(const TopicReading& r);
  void sync_caches();
  std::uint64_t next_send_after(std::uint64_t now) const;
  std::vector<Task> collect_due(std::uint64_t now, std::uint64_t* next_event);
  void run_task(const Task& t);
  void scheduler_loop();
  void worker_loop();

  PusherConfig cfg_;
  Clock& clock_;
  std::unique_ptr<Publisher> publisher_;
  std::uint64_t phase_ = 0;

  mutable std::shared_mutex plugins_mutex_;  // exclusive for control actions
  std::mutex control_mutex_;
  std::map<std::string, PluginEntry> plugins_;
  std::mutex sched_mutex_;                   // group states
  std::uint64_t next_send_ = 0;

  mutable std::shared_mutex caches_mutex_;
  std::map<Topic, std::unique_ptr<SensorCache>> caches_;

  mutable std::mutex pending_mutex_;
  std::map<Topic, std::deque<wire::Record>> pending_;
  std::mutex send_mutex_;

  mutable std::mutex stats_mutex_;
  PusherStats stats_;

  std::atomic<bool> running_{false};
  std::thread scheduler_;
  std::vector<std::thread> workers_;
  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<Task> queue_;
  std::unique_ptr<HttpServer> http_;
};

} // namespace shv
