#include "shv/pusher.hpp"

#include "shv/error.hpp"
#include "shv/metadata.hpp"
#include "shv/querylib.hpp"

#include <pthread.h>
#include <time.h>

#include <algorithm>
#include <charconv>
#include <limits>

namespace shv {

namespace {

std::uint64_t thread_cpu_now() {
  timespec ts{};
  ::clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<std::uint64_t>(ts.tv_sec) * 1'000'000'000ULL +
         static_cast<std::uint64_t>(ts.tv_nsec);
}

// Per-thread CPU accounting shared by the background threads of a pusher.
struct CpuLedger {
  std::mutex mutex;
  std::map<std::thread::id, clockid_t> live;
  std::uint64_t finished = 0;

  void enter() {
    clockid_t id{};
    if (::pthread_getcpuclockid(::pthread_self(), &id) != 0)
      return;
    std::scoped_lock lock(mutex);
    live[std::this_thread::get_id()] = id;
  }
  void leave() {
    auto used = thread_cpu_now();
    std::scoped_lock lock(mutex);
    live.erase(std::this_thread::get_id());
    finished += used;
  }
  std::uint64_t total() {
    std::scoped_lock lock(mutex);
    auto sum = finished;
    for (const auto& [tid, clock] : live) {
      timespec ts{};
      if (::clock_gettime(clock, &ts) == 0)
        sum += static_cast<std::uint64_t>(ts.tv_sec) * 1'000'000'000ULL +
               static_cast<std::uint64_t>(ts.tv_nsec);
    }
    return sum;
  }
};

std::map<const void*, std::unique_ptr<CpuLedger>>& ledgers() {
  static std::map<const void*, std::unique_ptr<CpuLedger>> m;
  return m;
}
std::mutex ledgers_mutex;

CpuLedger& ledger_for(const void* owner) {
  std::scoped_lock lock(ledgers_mutex);
  auto& slot = ledgers()[owner];
  if (!slot)
    slot = std::make_unique<CpuLedger>();
  return *slot;
}

void drop_ledger(const void* owner) {
  std::scoped_lock lock(ledgers_mutex);
  ledgers().erase(owner);
}

RestResponse text(int status, std::string body) {
  if (!body.empty() && body.back() != '\n')
    body += '\n';
  return {status, std::move(body), "text/plain"};
}

std::optional<std::string> param(const RestRequest& req, const std::string& key) {
  auto it = req.params.find(key);
  if (it == req.params.end())
    return std::nullopt;
  return it->second;
}

} // namespace

// -- config -----------------------------------------------------------------

PusherConfig PusherConfig::from_tree(const PropertyTree& root) {
  PusherConfig cfg;
  cfg.root = root;
  if (const auto* g = root.find("global")) {
    cfg.broker = g->get_or("broker", cfg.broker);
    cfg.client_id = g->get_or("clientId", cfg.client_id);
    if (auto p = g->get("mqttprefix"); p && !p->empty()) {
      try {
        cfg.prefix = Topic::parse(*p);
      } catch (const Error& e) {
        throw Error(Errc::config_error, std::string("mqttprefix: ") + e.what());
      }
    }
    if (auto t = g->get_int("threads")) {
      if (*t < 1)
        throw Error(Errc::config_error, "threads must be at least 1");
      cfg.threads = static_cast<std::size_t>(*t);
    }
    cfg.send_interval_ns = g->get_duration_ns("sendInterval").value_or(cfg.send_interval_ns);
    cfg.cache_window_ns = g->get_duration_ns("cacheWindow").value_or(cfg.cache_window_ns);
    cfg.rest = g->get_or("restAddress", "");
    if (auto k = g->get_int("keepAlive"))
      cfg.keep_alive_s = static_cast<std::uint16_t>(*k);
  }
  if (cfg.send_interval_ns == 0)
    throw Error(Errc::config_error, "sendInterval must be positive");
  return cfg;
}

PusherConfig PusherConfig::load(const std::filesystem::path& file) {
  auto cfg = from_tree(PropertyTree::load(file));
  cfg.config_file = file;
  return cfg;
}

std::uint64_t next_tick(std::uint64_t now_ns, std::uint64_t interval_ns) {
  return (now_ns / interval_ns + 1) * interval_ns;
}

std::uint64_t send_phase(std::string_view client_id, std::uint64_t send_interval_ns) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : client_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h % send_interval_ns;
}

// -- pusher -----------------------------------------------------------------

Pusher::Pusher(PusherConfig cfg, Clock& clock, std::unique_ptr<Publisher> publisher)
  : cfg_(std::move(cfg)), clock_(clock), publisher_(std::move(publisher)) {
  phase_ = send_phase(cfg_.client_id, cfg_.send_interval_ns);
  for (const auto* block : cfg_.root.all("plugin"))
    add_plugin(*block);
  auto now = clock_.now_ns();
  for (auto& [name, e] : plugins_)
    schedule_groups(e, now);
  next_send_ = next_send_after(now);
  sync_caches();
}

Pusher::~Pusher() {
  stop();
  drop_ledger(this);
}

std::unique_ptr<Plugin> Pusher::build_plugin(const PropertyTree& block) const {
  auto dir = cfg_.config_file.empty() ? std::filesystem::path(".") : cfg_.config_file.parent_path();
  auto body = plugin_body(block, dir);
  return make_plugin(block, body, cfg_.prefix);
}

void Pusher::add_plugin(const PropertyTree& block) {
  auto plugin = build_plugin(block);
  auto name = plugin->name();
  if (plugins_.contains(name))
    throw Error(Errc::config_error, "duplicate plugin name " + name);
  PluginEntry e;
  e.block = block;
  e.groups.resize(plugin->groups().size());
  e.plugin = std::move(plugin);
  plugins_.emplace(name, std::move(e));
}

void Pusher::schedule_groups(PluginEntry& e, std::uint64_t now) {
  e.groups.assign(e.plugin->groups().size(), GroupState{});
  for (std::size_t i = 0; i < e.groups.size(); ++i)
    e.groups[i].next_tick = next_tick(now, e.plugin->groups()[i].interval_ns);
}

void Pusher::sync_caches() {
  std::map<Topic, bool> wanted;
  {
    std::shared_lock lock(plugins_mutex_);
    for (const auto& [name, e] : plugins_)
      for (const auto& g : e.plugin->groups())
        for (const auto& s : g.sensors)
          wanted[s.topic] = true;
  }
  {
    std::unique_lock lock(caches_mutex_);
    for (auto it = caches_.begin(); it != caches_.end();)
      it = wanted.contains(it->first) ? std::next(it) : caches_.erase(it);
    for (const auto& [topic, unused] : wanted)
      if (!caches_.contains(topic))
        caches_.emplace(topic, std::make_unique<SensorCache>(cfg_.cache_window_ns));
  }
  std::scoped_lock lock(pending_mutex_);
  for (auto it = pending_.begin(); it != pending_.end();)
    it = wanted.contains(it->first) ? std::next(it) : pending_.erase(it);
}

std::uint64_t Pusher::next_send_after(std::uint64_t now) const {
  auto interval = cfg_.send_interval_ns;
  auto base = now - now % interval;
  auto t = base + phase_;
  while (t <= now)
    t += interval;
  return t;
}

void Pusher::record(const TopicReading& r) {
  {
    std::shared_lock lock(caches_mutex_);
    if (auto it = caches_.find(r.topic); it != caches_.end())
      it->second->insert(r.ts, r.value);
  }
  std::uint64_t evicted = 0;
  {
    std::scoped_lock lock(pending_mutex_);
    auto& q = pending_[r.topic];
    q.push_back({r.ts, r.value});
    auto newest = q.back().timestamp;
    auto floor = newest > cfg_.cache_window_ns ? newest - cfg_.cache_window_ns : 0;
    while (!q.empty() && q.front().timestamp < floor) {
      q.pop_front();
      ++evicted;
    }
  }
  if (evicted) {
    std::scoped_lock lock(stats_mutex_);
    stats_.dropped += evicted;
  }
}

std::vector<TopicReading> Pusher::sample_group(const std::string& plugin, std::size_t group,
                                               std::uint64_t tick) {
  std::vector<TopicReading> out;
  std::uint64_t errors = 0;
  {
    std::shared_lock lock(plugins_mutex_);
    auto it = plugins_.find(plugin);
    if (it == plugins_.end())
      throw Error(Errc::unknown_plugin, "unknown plugin " + plugin);
    if (!it->second.running)
      throw Error(Errc::plugin_stopped, "plugin " + plugin + " is stopped");
    const auto& groups = it->second.plugin->groups();
    if (group >= groups.size())
      throw Error(Errc::plugin_stopped, "group no longer exists");
    const auto& g = groups[group];
    auto values = it->second.plugin->read_group(group);
    out.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!g.sensors[i].active)
        continue;
      if (!values[i]) {
        ++errors;
        continue;
      }
      out.push_back({g.sensors[i].topic, tick, *values[i]});
    }
    for (const auto& r : out)
      record(r);
  }
  std::scoped_lock lock(stats_mutex_);
  stats_.sampled += out.size();
  stats_.read_errors += errors;
  return out;
}

void Pusher::flush() {
  std::scoped_lock send_lock(send_mutex_);
  std::map<Topic, std::deque<wire::Record>> batch;
  {
    std::scoped_lock lock(pending_mutex_);
    batch.swap(pending_);
  }
  std::uint64_t sent = 0, packets = 0, failures = 0;
  auto it = batch.begin();
  try {
    for (; it != batch.end(); ++it) {
      auto& q = it->second;
      if (q.empty())
        continue;
      std::stable_sort(q.begin(), q.end(), [](const wire::Record& a, const wire::Record& b) {
        return a.timestamp < b.timestamp;
      });
      constexpr std::size_t per_packet = wire::max_payload_bytes / wire::record_bytes;
      auto topic = it->first.str();
      while (!q.empty()) {
        auto n = std::min(q.size(), per_packet);
        std::vector<wire::Record> chunk(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(n));
        publisher_->publish(wire::Publish{topic, wire::encode_payload(chunk)});
        q.erase(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(n));
        sent += n;
        ++packets;
      }
    }
  } catch (const Error& e) {
    if (e.code() != Errc::broker_unreachable)
      throw;
    ++failures;
    // Unsent records go back in front of anything sampled meanwhile.
    std::uint64_t evicted = 0;
    std::scoped_lock lock(pending_mutex_);
    for (; it != batch.end(); ++it) {
      if (it->second.empty())
        continue;
      auto& q = pending_[it->first];
      q.insert(q.begin(), it->second.begin(), it->second.end());
      auto newest = q.back().timestamp;
      auto floor = newest > cfg_.cache_window_ns ? newest - cfg_.cache_window_ns : 0;
      while (!q.empty() && q.front().timestamp < floor) {
        q.pop_front();
        ++evicted;
      }
    }
    std::scoped_lock slock(stats_mutex_);
    stats_.dropped += evicted;
  }
  std::scoped_lock lock(stats_mutex_);
  stats_.published += sent;
  stats_.packets += packets;
  stats_.send_failures += failures;
}

std::vector<Pusher::Task> Pusher::collect_due(std::uint64_t now, std::uint64_t* next_event) {
  std::vector<Task> tasks;
  std::uint64_t next = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t overruns = 0;
  {
    std::shared_lock plock(plugins_mutex_);
    std::scoped_lock lock(sched_mutex_);
    for (auto& [name, e] : plugins_) {
      if (!e.running)
        continue;
      const auto& groups = e.plugin->groups();
      for (std::size_t i = 0; i < e.groups.size(); ++i) {
        auto& st = e.groups[i];
        auto interval = groups[i].interval_ns;
        if (st.next_tick <= now) {
          auto tick = now - now % interval;
          if (st.busy) {
            overruns += (tick - st.next_tick) / interval + 1;
          } else {
            overruns += (tick - st.next_tick) / interval;
            st.busy = true;
            tasks.push_back({name, i, tick});
          }
          st.next_tick = tick + interval;
        }
        next = std::min(next, st.next_tick);
      }
    }
    if (next_send_ <= now) {
      tasks.push_back({"", 0, now});
      next_send_ = next_send_after(now);
    }
    next = std::min(next, next_send_);
  }
  if (overruns) {
    std::scoped_lock lock(stats_mutex_);
    stats_.overruns += overruns;
  }
  if (next_event)
    *next_event = next;
  return tasks;
}

void Pusher::run_task(const Task& t) {
  if (t.plugin.empty()) {
    flush();
    publisher_->idle(clock_.now_ns());
    return;
  }
  try {
    sample_group(t.plugin, t.group, t.tick);
  } catch (const Error& e) {
    if (e.code() != Errc::plugin_stopped && e.code() != Errc::unknown_plugin)
      throw;
  }
  std::shared_lock plock(plugins_mutex_);
  std::scoped_lock lock(sched_mutex_);
  if (auto it = plugins_.find(t.plugin); it != plugins_.end() && t.group < it->second.groups.size())
    it->second.groups[t.group].busy = false;
}

void Pusher::poll() {
  for (const auto& t : collect_due(clock_.now_ns(), nullptr))
    run_task(t);
}

void Pusher::scheduler_loop() {
  auto& cpu = ledger_for(this);
  cpu.enter();
  while (running_) {
    std::uint64_t next = 0;
    auto tasks = collect_due(clock_.now_ns(), &next);
    if (!tasks.empty()) {
      {
        std::scoped_lock lock(queue_mutex_);
        for (auto& t : tasks)
          queue_.push_back(std::move(t));
      }
      queue_cv_.notify_all();
    }
    if (running_)
      clock_.sleep_until(next);
  }
  cpu.leave();
}

void Pusher::worker_loop() {
  auto& cpu = ledger_for(this);
  cpu.enter();
  for (;;) {
    Task t;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [&] { return !running_ || !queue_.empty(); });
      if (queue_.empty())
        break;
      t = std::move(queue_.front());
      queue_.pop_front();
    }
    try {
      run_task(t);
    } catch (const std::exception&) {
      // A failing plugin must not take the daemon down; it shows up as
      // missing readings and read errors.
      std::scoped_lock lock(stats_mutex_);
      ++stats_.read_errors;
    }
  }
  cpu.leave();
}

void Pusher::start() {
  if (running_.exchange(true))
    return;
  if (!cfg_.rest.empty()) {
    auto [host, port] = split_host_port(cfg_.rest, 8000);
    http_ = std::make_unique<HttpServer>([this](const RestRequest& r) { return handle_rest(r); });
    try {
      http_->start(host, port);
    } catch (...) {
      running_ = false;
      http_.reset();
      throw;
    }
  }
  for (std::size_t i = 0; i < cfg_.threads; ++i)
    workers_.emplace_back([this] { worker_loop(); });
  scheduler_ = std::thread([this] { scheduler_loop(); });
}

void Pusher::stop() {
  if (!running_.exchange(false))
    return;
  clock_.wake();
  if (scheduler_.joinable())
    scheduler_.join();
  queue_cv_.notify_all();
  for (auto& w : workers_)
    w.join();
  workers_.clear();
  if (http_) {
    http_->stop();
    http_.reset();
  }
  try {
    flush();
  } catch (const std::exception&) {
  }
  publisher_->close();
}

std::uint64_t Pusher::thread_cpu_ns() const { return ledger_for(this).total(); }

void Pusher::plugin_control(const std::string& name, PluginAction action) {
  std::scoped_lock control(control_mutex_);
  if (action == PluginAction::reload) {
    PropertyTree block;
    {
      std::shared_lock lock(plugins_mutex_);
      auto it = plugins_.find(name);
      if (it == plugins_.end())
        throw Error(Errc::unknown_plugin, "unknown plugin " + name);
      block = it->second.block;
    }
    std::unique_ptr<Plugin> fresh;
    try {
      if (!cfg_.config_file.empty() && !block.get("config")) {
        auto root = PropertyTree::load(cfg_.config_file);
        const PropertyTree* found = nullptr;
        for (const auto* b : root.all("plugin"))
          if (b->get_or("name", b->value) == name)
            found = b;
        if (!found)
          throw Error(Errc::config_error, "plugin " + name + " no longer configured");
        block = *found;
      }
      fresh = build_plugin(block);
    } catch (const Error& e) {
      throw Error(Errc::reload_failed, "reload of " + name + " failed: " + e.what());
    }
    {
      std::unique_lock lock(plugins_mutex_);
      std::scoped_lock slock(sched_mutex_);
      auto& e = plugins_.at(name);
      e.plugin = std::move(fresh);
      e.block = std::move(block);
      schedule_groups(e, clock_.now_ns());
    }
    sync_caches();
    return;
  }
  std::unique_lock lock(plugins_mutex_);
  auto it = plugins_.find(name);
  if (it == plugins_.end())
    throw Error(Errc::unknown_plugin, "unknown plugin " + name);
  auto& e = it->second;
  std::scoped_lock slock(sched_mutex_);
  if (action == PluginAction::stop) {
    e.running = false;
  } else if (!e.running) {
    e.running = true;
    // Busy flags of in-flight reads carry over; only the ticks restart.
    auto now = clock_.now_ns();
    for (std::size_t i = 0; i < e.groups.size(); ++i)
      e.groups[i].next_tick = next_tick(now, e.plugin->groups()[i].interval_ns);
  }
  lock.unlock();
  clock_.wake();
}

double Pusher::cache_average(const Topic& topic, std::uint64_t window_ns) const {
  std::shared_lock lock(caches_mutex_);
  auto it = caches_.find(topic);
  if (it == caches_.end())
    throw Error(Errc::unknown_sensor, "unknown sensor " + topic.str());
  return it->second->average(window_ns);
}

std::vector<RawPoint> Pusher::cache_snapshot(const Topic& topic) const {
  std::shared_lock lock(caches_mutex_);
  auto it = caches_.find(topic);
  if (it == caches_.end())
    throw Error(Errc::unknown_sensor, "unknown sensor " + topic.str());
  return it->second->snapshot();
}

std::vector<PluginInfo> Pusher::plugins() const {
  std::shared_lock lock(plugins_mutex_);
  std::vector<PluginInfo> out;
  for (const auto& [name, e] : plugins_) {
    std::size_t n = 0;
    for (const auto& g : e.plugin->groups())
      n += g.sensors.size();
    out.push_back({name, std::string(e.plugin->kind()), e.running, n});
  }
  return out;
}

std::vector<Topic> Pusher::sensors() const {
  std::shared_lock lock(caches_mutex_);
  std::vector<Topic> out;
  for (const auto& [topic, c] : caches_)
    out.push_back(topic);
  return out;
}

PusherStats Pusher::stats() const {
  std::scoped_lock lock(stats_mutex_);
  return stats_;
}

std::size_t Pusher::pending() const {
  std::scoped_lock lock(pending_mutex_);
  std::size_t n = 0;
  for (const auto& [t, q] : pending_)
    n += q.size();
  return n;
}

std::uint16_t Pusher::rest_port() const { return http_ ? http_->port() : 0; }

RestResponse Pusher::handle_rest(const RestRequest& req) {
  const auto& p = req.path;
  if (req.method == "GET" && p == "/version")
    return text(200, "shv-pusher " + std::string(shv_version));
  if (req.method == "GET" && p == "/plugins") {
    std::string body;
    for (const auto& info : plugins())
      body += info.name + " " + info.kind + " " + (info.running ? "running" : "stopped") + " " +
              std::to_string(info.sensors) + "\n";
    return {200, body, "text/plain"};
  }
  if (req.method == "POST" && p.starts_with("/plugins/")) {
    auto name = p.substr(9);
    auto action = param(req, "action");
    PluginAction a;
    if (action == "start")
      a = PluginAction::start;
    else if (action == "stop")
      a = PluginAction::stop;
    else if (action == "reload")
      a = PluginAction::reload;
    else
      return text(400, "action must be start, stop or reload");
    try {
      plugin_control(name, a);
    } catch (const Error& e) {
      if (e.code() == Errc::unknown_plugin)
        return text(404, e.what());
      if (e.code() == Errc::reload_failed)
        return text(503, e.what());
      throw;
    }
    return text(200, "ok");
  }
  if (req.method == "GET" && p == "/sensors") {
    std::string body;
    for (const auto& t : sensors())
      body += t.str() + "\n";
    return {200, body, "text/plain"};
  }
  if (req.method == "GET" && (p == "/sensors/cache" || p == "/sensors/avg")) {
    auto topic_text = param(req, "topic");
    if (!topic_text)
      return text(400, "missing topic");
    Topic topic;
    try {
      topic = Topic::parse(*topic_text);
    } catch (const Error& e) {
      return text(400, e.what());
    }
    try {
      if (p == "/sensors/cache") {
        query::QueryResult r;
        r.topic = topic;
        r.mode = query::Mode::raw;
        r.raw = cache_snapshot(topic);
        for (const auto& pt : r.raw)
          r.points.push_back({pt.ts, static_cast<double>(pt.value)});
        return {200, query::csv_export(std::span(&r, 1)), "text/csv"};
      }
      std::uint64_t window = cfg_.cache_window_ns;
      if (auto w = param(req, "window")) {
        std::uint64_t ms = 0;
        auto [ptr, ec] = std::from_chars(w->data(), w->data() + w->size(), ms);
        if (ec != std::errc{} || ptr != w->data() + w->size())
          return text(400, "window must be an integer number of milliseconds");
        window = ms * 1'000'000;
      }
      return text(200, format_double(cache_average(topic, window)));
    } catch (const Error& e) {
      if (e.code() == Errc::unknown_sensor || e.code() == Errc::empty_window)
        return text(404, e.what());
      throw;
    }
  }
  return text(404, "no such endpoint");
}

} // namespace shv
