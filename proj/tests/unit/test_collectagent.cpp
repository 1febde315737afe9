#include "shv/collectagent.hpp"
#include "shv/error.hpp"
#include "shv/mqtt_client.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <limits>
#include <thread>

using namespace shv;
using shv::testing::code_of;

namespace {

constexpr std::uint64_t sec = 1'000'000'000;
constexpr std::uint64_t forever = std::numeric_limits<std::uint64_t>::max();

AgentConfig local_config(const shv::testing::TempDir& dir) {
  AgentConfig cfg;
  cfg.mqtt_host = "127.0.0.1";
  cfg.mqtt_port = 0;
  cfg.store.root = dir / "store";
  return cfg;
}

wire::Bytes records_payload(std::uint64_t first_ts, int n, std::int64_t first_value = 1) {
  std::vector<wire::Record> r;
  for (int i = 0; i < n; ++i)
    r.push_back({first_ts + static_cast<std::uint64_t>(i) * sec, first_value + i});
  return wire::encode_payload(r);
}

std::size_t stored_count(CollectAgent& agent, const std::string& topic) {
  auto sid = agent.database().dictionary().find(Topic::parse(topic));
  if (!sid)
    return 0;
  return agent.database().store().query(*sid, 0, forever).size();
}

int dial(std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(port);
  ::inet_pton(AF_INET, "127.0.0.1", &a.sin_addr);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) {
    ::close(fd);
    return -1;
  }
  return fd;
}

void send_bytes(int fd, const wire::Bytes& b) {
  ASSERT_EQ(::send(fd, b.data(), b.size(), MSG_NOSIGNAL), static_cast<ssize_t>(b.size()));
}

// Bytes read until `n` arrive, EOF, or a 3 s timeout.
wire::Bytes read_bytes(int fd, std::size_t n) {
  wire::Bytes out;
  std::uint8_t buf[256];
  while (out.size() < n) {
    pollfd p{fd, POLLIN, 0};
    if (::poll(&p, 1, 3000) <= 0)
      break;
    auto got = ::recv(fd, buf, sizeof buf, 0);
    if (got <= 0)
      break;
    out.insert(out.end(), buf, buf + got);
  }
  return out;
}

bool closed_by_peer(int fd) {
  std::uint8_t b;
  pollfd p{fd, POLLIN, 0};
  if (::poll(&p, 1, 3000) <= 0)
    return false;
  return ::recv(fd, &b, 1, 0) == 0;
}

} // namespace

TEST(BrokerSession, ConnectThenPublish) {
  BrokerSession s;
  auto out = s.feed(wire::encode_packet(wire::Connect{"p1", 60}));
  EXPECT_EQ(out.reply, (wire::Bytes{0x20, 0x02, 0x00, 0x00}));
  EXPECT_TRUE(s.connected());
  EXPECT_EQ(s.client_id(), "p1");
  auto pub = wire::encode_packet(wire::Publish{"/a/b", records_payload(sec, 2)});
  auto ping = wire::encode_packet(wire::PingReq{});
  pub.insert(pub.end(), ping.begin(), ping.end());
  BrokerSession::Output total;
  for (auto byte : pub) {
    auto o = s.feed(std::span(&byte, 1));
    for (auto& p : o.publishes)
      total.publishes.push_back(p);
    total.reply.insert(total.reply.end(), o.reply.begin(), o.reply.end());
  }
  ASSERT_EQ(total.publishes.size(), 1u);
  EXPECT_EQ(total.publishes[0].topic, "/a/b");
  EXPECT_EQ(total.reply, (wire::Bytes{0xD0, 0x00}));
  EXPECT_TRUE(s.feed(wire::encode_packet(wire::Disconnect{})).closed);
}

TEST(BrokerSession, ViolationsCloseTheSession) {
  {
    BrokerSession s;
    EXPECT_EQ(code_of([&] { s.feed(wire::encode_packet(wire::PingReq{})); }),
              Errc::protocol_violation);
  }
  {
    BrokerSession s;
    s.feed(wire::encode_packet(wire::Connect{"x", 0}));
    EXPECT_EQ(code_of([&] { s.feed(wire::encode_packet(wire::Connect{"x", 0})); }),
              Errc::protocol_violation);
  }
  {
    BrokerSession s;
    s.feed(wire::encode_packet(wire::Connect{"x", 0}));
    // SUBSCRIBE, packet id 1, topic "/a" QoS 0.
    wire::Bytes sub{0x82, 0x07, 0x00, 0x01, 0x00, 0x02, '/', 'a', 0x00};
    EXPECT_EQ(code_of([&] { s.feed(sub); }), Errc::protocol_violation);
  }
}

TEST(AgentConfig, ParsesSharedGrammar) {
  auto cfg = AgentConfig::from_tree(
    PropertyTree::parse("global { mqttPort 1999; restPort 8080; cacheWindow 60000 }\n"
                        "storage { nodes 2; path ./data; partitionLevel 1 }"),
    "/srv");
  EXPECT_EQ(cfg.mqtt_port, 1999);
  EXPECT_EQ(cfg.rest_port, 8080);
  EXPECT_EQ(cfg.cache_window_ns, 60 * sec);
  EXPECT_EQ(cfg.store.nodes, 2u);
  EXPECT_EQ(cfg.store.partition_level, 1u);
  EXPECT_EQ(cfg.store.root, std::filesystem::path("/srv/./data"));
  EXPECT_EQ(code_of([] { AgentConfig::from_tree(PropertyTree::parse("storage { nodes 0 }")); }),
            Errc::config_error);
}

TEST(CollectAgent, PublishIsStoredAndCached) {
  shv::testing::TempDir dir;
  SimulatedClock clock(10 * sec);
  CollectAgent agent(local_config(dir), clock);
  EXPECT_EQ(agent.handle_publish("/r1/c1/n1/power", records_payload(sec, 5)), 5u);
  agent.flush();
  EXPECT_EQ(stored_count(agent, "/r1/c1/n1/power"), 5u);
  EXPECT_EQ(agent.latest(Topic::parse("/r1/c1/n1/power")), (RawPoint{5 * sec, 5}));
  EXPECT_DOUBLE_EQ(agent.average(Topic::parse("/r1/c1/n1/power"), 10 * sec), 3.0);
  auto st = agent.stats();
  EXPECT_EQ(st.received, 5u);
  EXPECT_EQ(st.stored, 5u);
  EXPECT_EQ(st.violations, 0u);
}

TEST(CollectAgent, MalformedMessagesAreDroppedAndCounted) {
  shv::testing::TempDir dir;
  SimulatedClock clock(10 * sec);
  CollectAgent agent(local_config(dir), clock);
  wire::Bytes seventeen(17, 0x01);
  EXPECT_EQ(agent.handle_publish("/a/b", seventeen), 0u);
  EXPECT_EQ(agent.handle_publish("no/leading/slash", records_payload(sec, 1)), 0u);
  EXPECT_EQ(agent.handle_publish("/a/b", wire::Bytes(16, 0x00)), 0u);
  EXPECT_EQ(agent.stats().violations, 3u);
  EXPECT_EQ(agent.handle_publish("/a/b", records_payload(sec, 1)), 1u);
}

TEST(CollectAgent, LatestErrors) {
  shv::testing::TempDir dir;
  SimulatedClock clock(10 * sec);
  auto cfg = local_config(dir);
  cfg.cache_window_ns = 30 * sec;
  CollectAgent agent(cfg, clock);
  EXPECT_EQ(code_of([&] { agent.latest(Topic::parse("/nope")); }), Errc::unknown_sensor);
  agent.handle_publish("/a", records_payload(5 * sec, 1));
  EXPECT_EQ(agent.latest(Topic::parse("/a")).value, 1);
  clock.set(100 * sec);
  EXPECT_EQ(code_of([&] { agent.latest(Topic::parse("/a")); }), Errc::empty_cache);
  EXPECT_EQ(code_of([&] { agent.average(Topic::parse("/a"), sec); }), Errc::empty_window);
}

TEST(CollectAgent, SecondAgentOnSamePortFailsToBind) {
  shv::testing::TempDir d1, d2;
  SystemClock clock;
  CollectAgent a(local_config(d1), clock);
  a.start();
  auto cfg = local_config(d2);
  cfg.mqtt_port = a.mqtt_port();
  CollectAgent b(cfg, clock);
  EXPECT_EQ(code_of([&] { b.start(); }), Errc::bind_failure);
}

TEST(CollectAgent, SubscribeClosesTheSessionOverTcp) {
  shv::testing::TempDir dir;
  SystemClock clock;
  CollectAgent agent(local_config(dir), clock);
  agent.start();
  int fd = dial(agent.mqtt_port());
  ASSERT_GE(fd, 0);
  send_bytes(fd, wire::encode_packet(wire::Connect{"raw", 60}));
  EXPECT_EQ(read_bytes(fd, 4), (wire::Bytes{0x20, 0x02, 0x00, 0x00}));
  send_bytes(fd, wire::encode_packet(wire::Publish{"/x/y", wire::Bytes(17, 1)}));
  send_bytes(fd, wire::encode_packet(wire::Publish{"/x/y", records_payload(sec, 5)}));
  send_bytes(fd, wire::encode_packet(wire::PingReq{}));
  EXPECT_EQ(read_bytes(fd, 2), (wire::Bytes{0xD0, 0x00}));
  send_bytes(fd, wire::Bytes{0x82, 0x07, 0x00, 0x01, 0x00, 0x02, '/', 'a', 0x00});
  EXPECT_TRUE(closed_by_peer(fd));
  ::close(fd);
  agent.stop();
  auto st = agent.stats();
  EXPECT_EQ(st.violations, 1u);
  EXPECT_EQ(st.protocol_errors, 1u);
  EXPECT_EQ(stored_count(agent, "/x/y"), 5u);
}

TEST(CollectAgent, ConservationAcrossConcurrentSessions) {
  shv::testing::TempDir dir;
  SystemClock clock;
  auto cfg = local_config(dir);
  cfg.writers = 3;
  cfg.batch_size = 64;
  CollectAgent agent(cfg, clock);
  agent.start();
  constexpr int clients = 4, topics = 25, batches = 20, per_batch = 10;
  // Near wall time, so the cache keeps the newest readings.
  const std::uint64_t base = clock.now_ns() / sec * sec;
  std::vector<std::thread> threads;
  for (int c = 0; c < clients; ++c) {
    threads.emplace_back([&, c] {
      MqttClient client("127.0.0.1", agent.mqtt_port(), "c" + std::to_string(c), clock);
      for (int b = 0; b < batches; ++b) {
        for (int t = 0; t < topics; ++t) {
          // Every client also races on the shared topic.
          auto topic = t == 0 ? std::string("/shared/t") : "/c" + std::to_string(c) + "/t" + std::to_string(t);
          auto first = base + static_cast<std::uint64_t>(1 + (b * per_batch)) * sec + (t == 0 ? c : 0);
          client.publish({topic, records_payload(first, per_batch, b * per_batch + 1)});
        }
      }
      client.close();
    });
  }
  for (auto& t : threads)
    t.join();
  // Sessions end asynchronously after Disconnect.
  for (int i = 0; i < 100 && agent.stats().sessions_closed < clients; ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  agent.stop();
  auto st = agent.stats();
  const std::uint64_t total = clients * topics * batches * per_batch;
  EXPECT_EQ(st.received, total);
  EXPECT_EQ(st.stored, total);
  EXPECT_EQ(st.violations, 0u);
  for (int c = 0; c < clients; ++c)
    for (int t = 1; t < topics; ++t) {
      auto topic = "/c" + std::to_string(c) + "/t" + std::to_string(t);
      auto sid = agent.database().dictionary().find(Topic::parse(topic));
      ASSERT_TRUE(sid) << topic;
      auto pts = agent.database().store().query(*sid, 0, forever);
      ASSERT_EQ(pts.size(), static_cast<std::size_t>(batches * per_batch));
      for (std::size_t i = 0; i < pts.size(); ++i)
        EXPECT_EQ(pts[i], (RawPoint{base + (i + 1) * sec, static_cast<std::int64_t>(i + 1)}));
      EXPECT_EQ(agent.latest(Topic::parse(topic)), pts.back());
    }
  EXPECT_EQ(stored_count(agent, "/shared/t"), static_cast<std::size_t>(clients * batches * per_batch));
  EXPECT_EQ(agent.database().dictionary().level_size(0), 1u + clients);
}

TEST(CollectAgent, StopFlushesEverythingReceived) {
  shv::testing::TempDir dir;
  SystemClock clock;
  auto cfg = local_config(dir);
  cfg.batch_interval_ns = 5 * sec;  // only stop() can push partial batches out
  CollectAgent agent(cfg, clock);
  agent.start();
  std::atomic<bool> go{true};
  std::thread writer([&] {
    MqttClient client("127.0.0.1", agent.mqtt_port(), "w", clock);
    std::uint64_t ts = 1;
    while (go) {
      try {
        client.publish({"/s", records_payload(ts * sec, 3)});
      } catch (const Error&) {
        break;
      }
      ts += 3;
    }
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  agent.stop();
  go = false;
  writer.join();
  auto st = agent.stats();
  EXPECT_GT(st.received, 0u);
  EXPECT_EQ(stored_count(agent, "/s"), st.received);
}

TEST(CollectAgent, RestEndpoints) {
  shv::testing::TempDir dir;
  SimulatedClock clock(10 * sec);
  CollectAgent agent(local_config(dir), clock);
  agent.handle_publish("/r/p", records_payload(sec, 3));
  auto get = [&](std::string path, std::map<std::string, std::string> params = {}) {
    return agent.handle_rest({"GET", std::move(path), std::move(params)});
  };
  EXPECT_EQ(get("/version").status, 200);
  EXPECT_EQ(get("/sensors").body, "/r/p\n");
  EXPECT_EQ(get("/sensors/latest", {{"topic", "/r/p"}}).body, "3000000000 3\n");
  EXPECT_EQ(get("/sensors/latest", {{"topic", "/r/q"}}).status, 404);
  EXPECT_EQ(get("/sensors/latest").status, 400);
  EXPECT_EQ(get("/sensors/avg", {{"topic", "/r/p"}, {"window", "1500"}}).body, "2.5\n");
  auto stats = get("/stats").body;
  EXPECT_NE(stats.find("received 3\n"), std::string::npos);
  EXPECT_NE(stats.find("violations 0\n"), std::string::npos);
  EXPECT_EQ(get("/nowhere").status, 404);
}
