#include "shv/collectagent.hpp"

#include "shv/error.hpp"
#include "shv/metadata.hpp"
#include "shv/pusher.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <charconv>
#include <chrono>
#include <cstring>

namespace shv {

namespace {

constexpr int poll_ms = 100;

RestResponse text(int status, std::string body) {
  if (!body.empty() && body.back() != '\n')
    body += '\n';
  return {status, std::move(body), "text/plain"};
}

bool send_all(int fd, const wire::Bytes& bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    auto n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR)
      continue;
    if (n <= 0)
      return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

int listen_on(const std::string& host, std::uint16_t port, std::uint16_t* bound) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const char* node = host.empty() ? nullptr : host.c_str();
  if (::getaddrinfo(node, std::to_string(port).c_str(), &hints, &res) != 0)
    return -1;
  int fd = -1;
  for (auto* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0)
      continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 128) == 0)
      break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0)
    return -1;
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  if (addr.ss_family == AF_INET)
    *bound = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  else
    *bound = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
  return fd;
}

std::optional<std::string> param(const RestRequest& req, const std::string& key) {
  auto it = req.params.find(key);
  if (it == req.params.end())
    return std::nullopt;
  return it->second;
}

} // namespace

// -- config -----------------------------------------------------------------

AgentConfig AgentConfig::from_tree(const PropertyTree& root, const std::filesystem::path& base_dir) {
  AgentConfig cfg;
  auto port_of = [](const PropertyTree& t, const char* key) -> std::optional<std::uint16_t> {
    auto v = t.get_int(key);
    if (!v)
      return std::nullopt;
    if (*v < 0 || *v > 65535)
      throw Error(Errc::config_error, std::string(key) + " out of range");
    return static_cast<std::uint16_t>(*v);
  };
  if (const auto* g = root.find("global")) {
    cfg.mqtt_port = port_of(*g, "mqttPort").value_or(cfg.mqtt_port);
    cfg.rest_port = port_of(*g, "restPort");
    cfg.mqtt_host = g->get_or("mqttAddress", cfg.mqtt_host);
    cfg.rest_host = g->get_or("restAddress", cfg.rest_host);
    cfg.cache_window_ns = g->get_duration_ns("cacheWindow").value_or(cfg.cache_window_ns);
    if (auto w = g->get_int("writers")) {
      if (*w < 1)
        throw Error(Errc::config_error, "writers must be at least 1");
      cfg.writers = static_cast<std::size_t>(*w);
    }
  }
  cfg.store.root = base_dir / "data";
  if (const auto* s = root.find("storage")) {
    if (auto p = s->get("path"))
      cfg.store.root = std::filesystem::path(*p).is_absolute() ? std::filesystem::path(*p)
                                                               : base_dir / *p;
    if (auto n = s->get_int("nodes")) {
      if (*n < 1)
        throw Error(Errc::config_error, "nodes must be at least 1");
      cfg.store.nodes = static_cast<std::size_t>(*n);
    }
    if (auto l = s->get_int("partitionLevel")) {
      if (*l < 0 || *l >= static_cast<std::int64_t>(max_topic_levels))
        throw Error(Errc::config_error, "partitionLevel out of range");
      cfg.store.partition_level = static_cast<std::size_t>(*l);
    }
  }
  return cfg;
}

AgentConfig AgentConfig::load(const std::filesystem::path& file) {
  auto dir = file.parent_path();
  return from_tree(PropertyTree::load(file), dir.empty() ? "." : dir);
}

// -- session ----------------------------------------------------------------

BrokerSession::Output BrokerSession::feed(std::span<const std::uint8_t> bytes) {
  Output out;
  if (closed_) {
    out.closed = true;
    return out;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
  std::size_t off = 0;
  while (!closed_) {
    auto d = wire::decode_packet(std::span(buffer_).subspan(off));
    if (!d)
      break;
    off += d->consumed;
    auto& p = d->packet;
    if (auto* c = std::get_if<wire::Connect>(&p)) {
      if (connected_)
        throw Error(Errc::protocol_violation, "second Connect");
      connected_ = true;
      client_id_ = c->client_id;
      keep_alive_s_ = c->keep_alive_s;
      wire::encode_packet(wire::ConnAck{0}, out.reply);
      continue;
    }
    if (!connected_)
      throw Error(Errc::protocol_violation, "packet before Connect");
    if (auto* pub = std::get_if<wire::Publish>(&p)) {
      out.publishes.push_back(std::move(*pub));
    } else if (std::holds_alternative<wire::PingReq>(p)) {
      wire::encode_packet(wire::PingResp{}, out.reply);
    } else if (std::holds_alternative<wire::Disconnect>(p)) {
      closed_ = true;
    } else {
      throw Error(Errc::protocol_violation, "unexpected packet from client");
    }
  }
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(off));
  out.closed = closed_;
  return out;
}

// -- agent ------------------------------------------------------------------

CollectAgent::CollectAgent(AgentConfig cfg, Clock& clock)
  : cfg_(std::move(cfg)), clock_(clock), db_(std::make_unique<Database>(cfg_.store)) {
  if (cfg_.writers == 0)
    cfg_.writers = 1;
  for (std::size_t i = 0; i < cfg_.writers; ++i)
    writers_.push_back(std::make_unique<Writer>());
  for (auto& w : writers_)
    w->thread = std::thread([this, &w = *w] { writer_loop(w); });
}

CollectAgent::~CollectAgent() {
  stop();
  writers_stop_ = true;
  for (auto& w : writers_) {
    {
      std::scoped_lock lock(w->mutex);
      w->cv.notify_all();
    }
    w->thread.join();
  }
  try {
    db_->flush();
  } catch (const std::exception&) {
  }
}

SensorCache& CollectAgent::cache_for(SensorId sid) {
  {
    std::shared_lock lock(caches_mutex_);
    if (auto it = caches_.find(sid); it != caches_.end())
      return *it->second;
  }
  std::unique_lock lock(caches_mutex_);
  auto& slot = caches_[sid];
  if (!slot)
    slot = std::make_unique<SensorCache>(cfg_.cache_window_ns);
  return *slot;
}

std::size_t CollectAgent::handle_publish(const std::string& topic_text,
                                         std::span<const std::uint8_t> payload) {
  std::vector<wire::Record> records;
  SensorId sid;
  try {
    auto topic = Topic::parse(topic_text);
    records = wire::decode_payload(payload);
    for (const auto& r : records)
      if (r.timestamp == 0)
        throw Error(Errc::bad_payload, "zero timestamp");
    sid = db_->dictionary().encode(topic);
  } catch (const Error& e) {
    if (e.code() == Errc::protocol_violation)
      throw;
    std::scoped_lock lock(stats_mutex_);
    ++stats_.violations;
    return 0;
  }
  if (records.empty())
    return 0;
  auto& cache = cache_for(sid);
  std::vector<SensorReading> readings;
  readings.reserve(records.size());
  for (const auto& r : records) {
    cache.insert(r.timestamp, r.value);
    readings.push_back({sid, r.timestamp, r.value});
  }
  {
    std::scoped_lock lock(stats_mutex_);
    stats_.received += readings.size();
  }
  auto n = readings.size();
  enqueue(std::move(readings));
  return n;
}

void CollectAgent::enqueue(std::vector<SensorReading> readings) {
  if (readings.empty())
    return;
  // Every reading of one publish shares a SID and therefore a writer.
  auto& w = *writers_[SensorIdHash{}(readings.front().sid) % writers_.size()];
  auto capacity = std::max<std::size_t>(1, cfg_.queue_capacity / writers_.size());
  std::unique_lock lock(w.mutex);
  w.room_cv.wait(lock, [&] {
    return w.queue.empty() || w.queue.size() + readings.size() <= capacity || writers_stop_;
  });
  for (auto& r : readings)
    w.queue.push_back(r);
  w.cv.notify_all();
}

void CollectAgent::writer_loop(Writer& w) {
  using steady = std::chrono::steady_clock;
  std::unique_lock lock(w.mutex);
  for (;;) {
    if (w.queue.empty()) {
      w.urgent = false;
      if (writers_stop_)
        break;
      w.cv.wait(lock, [&] { return writers_stop_ || !w.queue.empty(); });
      continue;
    }
    auto deadline = steady::now() + std::chrono::nanoseconds(cfg_.batch_interval_ns);
    w.cv.wait_until(lock, deadline, [&] {
      return writers_stop_ || w.urgent || w.queue.size() >= cfg_.batch_size;
    });
    auto n = std::min(w.queue.size(), cfg_.batch_size);
    std::vector<SensorReading> batch(w.queue.begin(),
                                     w.queue.begin() + static_cast<std::ptrdiff_t>(n));
    w.queue.erase(w.queue.begin(), w.queue.begin() + static_cast<std::ptrdiff_t>(n));
    w.in_flight = n;
    lock.unlock();
    w.room_cv.notify_all();
    db_->store().insert(batch);
    db_->save_dictionary();
    {
      std::scoped_lock slock(stats_mutex_);
      stats_.stored += n;
    }
    lock.lock();
    w.in_flight = 0;
    w.room_cv.notify_all();
  }
}

void CollectAgent::flush() {
  for (auto& w : writers_) {
    std::unique_lock lock(w->mutex);
    w->urgent = true;
    w->cv.notify_all();
    w->room_cv.wait(lock, [&] { return w->queue.empty() && w->in_flight == 0; });
  }
  db_->flush();
}

RawPoint CollectAgent::latest(const Topic& topic) const {
  auto sid = db_->dictionary().find(topic);
  if (!sid)
    throw Error(Errc::unknown_sensor, "unknown sensor " + topic.str());
  std::shared_lock lock(caches_mutex_);
  auto it = caches_.find(*sid);
  if (it == caches_.end())
    throw Error(Errc::empty_cache, "no cached readings for " + topic.str());
  it->second->expire(clock_.now_ns());
  auto p = it->second->latest();
  if (!p)
    throw Error(Errc::empty_cache, "no cached readings for " + topic.str());
  return *p;
}

double CollectAgent::average(const Topic& topic, std::uint64_t window_ns) const {
  auto sid = db_->dictionary().find(topic);
  if (!sid)
    throw Error(Errc::unknown_sensor, "unknown sensor " + topic.str());
  std::shared_lock lock(caches_mutex_);
  auto it = caches_.find(*sid);
  if (it == caches_.end())
    throw Error(Errc::empty_window, "no readings in window for " + topic.str());
  it->second->expire(clock_.now_ns());
  return it->second->average(window_ns);
}

std::vector<Topic> CollectAgent::sensors() const {
  std::vector<Topic> out;
  std::shared_lock lock(caches_mutex_);
  for (const auto& [sid, c] : caches_)
    out.push_back(db_->dictionary().decode(sid));
  std::sort(out.begin(), out.end());
  return out;
}

AgentStats CollectAgent::stats() const {
  std::scoped_lock lock(stats_mutex_);
  return stats_;
}

std::size_t CollectAgent::sessions() const {
  std::scoped_lock lock(conns_mutex_);
  std::size_t n = 0;
  for (const auto& c : conns_)
    n += c->done ? 0 : 1;
  return n;
}

// -- network ----------------------------------------------------------------

void CollectAgent::start() {
  if (running_)
    return;
  std::uint16_t bound = 0;
  int fd = listen_on(cfg_.mqtt_host, cfg_.mqtt_port, &bound);
  if (fd < 0)
    throw Error(Errc::bind_failure, "cannot listen on " + cfg_.mqtt_host + ":" +
                                        std::to_string(cfg_.mqtt_port) + ": " +
                                        std::strerror(errno));
  if (cfg_.rest_port) {
    http_ = std::make_unique<HttpServer>([this](const RestRequest& r) { return handle_rest(r); });
    try {
      http_->start(cfg_.rest_host, *cfg_.rest_port);
    } catch (...) {
      ::close(fd);
      http_.reset();
      throw;
    }
  }
  listen_fd_ = fd;
  mqtt_port_ = bound;
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void CollectAgent::stop() {
  if (!running_.exchange(false)) {
    return;
  }
  acceptor_.join();
  ::close(listen_fd_);
  listen_fd_ = -1;
  reap_connections(true);
  if (http_) {
    http_->stop();
    http_.reset();
  }
  flush();
}

void CollectAgent::reap_connections(bool all) {
  std::list<std::unique_ptr<Connection>> finished;
  {
    std::scoped_lock lock(conns_mutex_);
    for (auto it = conns_.begin(); it != conns_.end();) {
      if (all || (*it)->done) {
        finished.push_back(std::move(*it));
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& c : finished)
    c->thread.join();
}

void CollectAgent::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int r = ::poll(&p, 1, poll_ms);
    reap_connections(false);
    if (r <= 0)
      continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0)
      continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto conn = std::make_unique<Connection>();
    conn->fd = fd;
    auto* raw = conn.get();
    {
      std::scoped_lock lock(stats_mutex_);
      ++stats_.connections;
    }
    std::scoped_lock lock(conns_mutex_);
    conns_.push_back(std::move(conn));
    raw->thread = std::thread([this, raw] { session_loop(*raw); });
  }
}

void CollectAgent::session_loop(Connection& c) {
  using steady = std::chrono::steady_clock;
  BrokerSession session;
  std::vector<std::uint8_t> buf(64 * 1024);
  auto last_activity = steady::now();
  bool violated = false;
  while (running_) {
    pollfd p{c.fd, POLLIN, 0};
    int r = ::poll(&p, 1, poll_ms);
    if (r < 0 && errno != EINTR)
      break;
    if (r <= 0) {
      auto ka = session.keep_alive_s();
      if (ka > 0 && steady::now() - last_activity > std::chrono::milliseconds(ka * 1500))
        break;
      continue;
    }
    auto n = ::recv(c.fd, buf.data(), buf.size(), 0);
    if (n < 0 && errno == EINTR)
      continue;
    if (n <= 0)
      break;
    last_activity = steady::now();
    BrokerSession::Output out;
    try {
      out = session.feed(std::span(buf.data(), static_cast<std::size_t>(n)));
    } catch (const Error& e) {
      violated = true;
      break;
    }
    {
      std::scoped_lock lock(stats_mutex_);
      stats_.packets += out.publishes.size();
    }
    for (const auto& pub : out.publishes)
      handle_publish(pub.topic, pub.payload);
    if (!out.reply.empty() && !send_all(c.fd, out.reply))
      break;
    if (out.closed)
      break;
  }
  ::close(c.fd);
  {
    std::scoped_lock lock(stats_mutex_);
    ++stats_.sessions_closed;
    if (violated)
      ++stats_.protocol_errors;
  }
  c.done = true;
}

// -- REST -------------------------------------------------------------------

RestResponse CollectAgent::handle_rest(const RestRequest& req) {
  if (req.method != "GET")
    return text(404, "no such endpoint");
  const auto& p = req.path;
  if (p == "/version")
    return text(200, "shv-agent " + std::string(shv_version));
  if (p == "/sensors") {
    std::string body;
    for (const auto& t : sensors())
      body += t.str() + "\n";
    return {200, body, "text/plain"};
  }
  if (p == "/stats") {
    auto s = stats();
    std::string body;
    body += "connections " + std::to_string(s.connections) + "\n";
    body += "sessions " + std::to_string(sessions()) + "\n";
    body += "sessions_closed " + std::to_string(s.sessions_closed) + "\n";
    body += "protocol_errors " + std::to_string(s.protocol_errors) + "\n";
    body += "packets " + std::to_string(s.packets) + "\n";
    body += "received " + std::to_string(s.received) + "\n";
    body += "stored " + std::to_string(s.stored) + "\n";
    body += "violations " + std::to_string(s.violations) + "\n";
    return {200, body, "text/plain"};
  }
  if (p == "/sensors/latest" || p == "/sensors/avg") {
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
      if (p == "/sensors/latest") {
        auto pt = latest(topic);
        return text(200, std::to_string(pt.ts) + " " + std::to_string(pt.value));
      }
      std::uint64_t window = cfg_.cache_window_ns;
      if (auto w = param(req, "window")) {
        std::uint64_t ms = 0;
        auto [ptr, ec] = std::from_chars(w->data(), w->data() + w->size(), ms);
        if (ec != std::errc{} || ptr != w->data() + w->size())
          return text(400, "window must be an integer number of milliseconds");
        window = ms * 1'000'000;
      }
      return text(200, format_double(average(topic, window)));
    } catch (const Error& e) {
      if (e.code() == Errc::unknown_sensor || e.code() == Errc::empty_cache ||
          e.code() == Errc::empty_window)
        return text(404, e.what());
      throw;
    }
  }
  return text(404, "no such endpoint");
}

} // namespace shv
