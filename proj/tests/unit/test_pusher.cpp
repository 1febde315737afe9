#include "shv/clock.hpp"
#include "shv/error.hpp"
#include "shv/pusher.hpp"
#include "shv/sensor_cache.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <thread>
#include <tuple>

using namespace shv;
using shv::testing::code_of;

namespace {

constexpr std::uint64_t sec = 1'000'000'000;

struct Sink {
  std::mutex mutex;
  std::vector<wire::Publish> packets;
  std::atomic<bool> down{false};

  std::vector<std::tuple<std::string, std::uint64_t, std::int64_t>> readings() {
    std::scoped_lock lock(mutex);
    std::vector<std::tuple<std::string, std::uint64_t, std::int64_t>> out;
    for (const auto& p : packets)
      for (const auto& r : wire::decode_payload(p.payload))
        out.emplace_back(p.topic, r.timestamp, r.value);
    return out;
  }
};

class SinkPublisher final : public Publisher {
public:
  explicit SinkPublisher(std::shared_ptr<Sink> sink) : sink_(std::move(sink)) {}
  void publish(const wire::Publish& p) override {
    if (sink_->down)
      throw Error(Errc::broker_unreachable, "broker down");
    std::scoped_lock lock(sink_->mutex);
    sink_->packets.push_back(p);
  }

private:
  std::shared_ptr<Sink> sink_;
};

std::unique_ptr<Pusher> make_pusher(const std::string& text, Clock& clock,
                                    std::shared_ptr<Sink> sink) {
  auto cfg = PusherConfig::from_tree(PropertyTree::parse(text));
  return std::make_unique<Pusher>(std::move(cfg), clock, std::make_unique<SinkPublisher>(sink));
}

// Steps the clock one second at a time, polling after each step.
void run_ticks(Pusher& p, SimulatedClock& clock, int seconds) {
  for (int i = 0; i < seconds; ++i) {
    clock.advance(sec);
    p.poll();
  }
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

const char* tester_cfg =
  "global { clientId p1; mqttprefix /n1; sendInterval 1000 }\n"
  "plugin tester { group g { interval 1000; sensors 3 } }\n";

} // namespace

TEST(Clock, SimulatedSleepReturnsWhenTimeArrives) {
  SimulatedClock clock(10);
  std::atomic<bool> woke{false};
  std::thread t([&] {
    clock.sleep_until(100);
    woke = true;
  });
  clock.set(50);
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  EXPECT_FALSE(woke);
  clock.set(100);
  t.join();
  EXPECT_TRUE(woke);
  EXPECT_EQ(clock.now_ns(), 100u);
  clock.set(20);
  EXPECT_EQ(clock.now_ns(), 100u);
}

TEST(Clock, WakeInterruptsSleep) {
  SystemClock clock;
  std::thread t([&] { clock.sleep_until(clock.now_ns() + 3600 * sec); });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  clock.wake();
  t.join();
}

TEST(SensorCache, OrderReplacementAndEviction) {
  SensorCache c(10);
  c.insert(5, 50);
  c.insert(3, 30);
  c.insert(5, 55);
  auto s = c.snapshot();
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], (RawPoint{3, 30}));
  EXPECT_EQ(s[1], (RawPoint{5, 55}));
  c.insert(14, 1);
  EXPECT_EQ(c.snapshot().front().ts, 5u);
  c.insert(16, 2);
  EXPECT_EQ(c.snapshot().front().ts, 14u);
  EXPECT_EQ(c.latest()->ts, 16u);
  c.expire(100);
  EXPECT_EQ(c.size(), 0u);
}

TEST(SensorCache, FreshnessHoldsNewestEntries) {
  const std::uint64_t window = 120 * sec;
  for (std::uint64_t k : {1u, 50u, 120u, 121u, 122u, 300u}) {
    SensorCache c(window);
    for (std::uint64_t i = 1; i <= k; ++i)
      c.insert(i * sec, static_cast<std::int64_t>(i));
    EXPECT_EQ(c.size(), std::min<std::uint64_t>(k, window / sec + 1)) << k;
    EXPECT_EQ(c.latest()->value, static_cast<std::int64_t>(k));
  }
}

TEST(SensorCache, AverageExamples) {
  SensorCache c(100 * sec);
  EXPECT_EQ(code_of([&] { c.average(10 * sec); }), Errc::empty_window);
  c.insert(1 * sec, 1);
  EXPECT_DOUBLE_EQ(c.average(10 * sec), 1.0);
  c.insert(2 * sec, 2);
  c.insert(3 * sec, 3);
  EXPECT_DOUBLE_EQ(c.average(10 * sec), 2.0);
  EXPECT_DOUBLE_EQ(c.average(sec + 1), 2.5);
  EXPECT_DOUBLE_EQ(c.average(1000 * sec), 2.0);
  EXPECT_EQ(code_of([&] { c.average(0); }), Errc::empty_window);
}

TEST(Scheduling, NextTickExamples) {
  EXPECT_EQ(next_tick(0, sec), sec);
  EXPECT_EQ(next_tick(sec, sec), 2 * sec);
  EXPECT_EQ(next_tick(1'234'567, 1'000'000), 2'000'000u);
}

TEST(Scheduling, SendPhaseIsHashOfClientId) {
  EXPECT_EQ(send_phase("p1", sec), fnv1a("p1") % sec);
  EXPECT_EQ(send_phase("p2", sec), fnv1a("p2") % sec);
  EXPECT_NE(send_phase("p1", sec), send_phase("p2", sec));
  EXPECT_LT(send_phase("anything", 7), 7u);
}

TEST(PusherConfig, ParsesGlobalBlock) {
  auto cfg = PusherConfig::from_tree(PropertyTree::parse(
    "global { broker 10.0.0.1:1999; mqttprefix /lrz/cm3/r01/n05; threads 4; sendInterval 500;"
    " cacheWindow 60000; restAddress 127.0.0.1:0; clientId n05 }"));
  EXPECT_EQ(cfg.broker, "10.0.0.1:1999");
  EXPECT_EQ(cfg.prefix.str(), "/lrz/cm3/r01/n05");
  EXPECT_EQ(cfg.threads, 4u);
  EXPECT_EQ(cfg.send_interval_ns, 500'000'000u);
  EXPECT_EQ(cfg.cache_window_ns, 60 * sec);
  EXPECT_EQ(cfg.client_id, "n05");
  EXPECT_EQ(code_of([] { PusherConfig::from_tree(PropertyTree::parse("global { threads 0 }")); }),
            Errc::config_error);
}

TEST(Pusher, SampleGroupStampsTheTick) {
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher(tester_cfg, clock, sink);
  auto r = p->sample_group("tester", 0, 7 * sec);
  ASSERT_EQ(r.size(), 3u);
  for (const auto& x : r) {
    EXPECT_EQ(x.ts, 7 * sec);
    EXPECT_EQ(x.value, 1);
  }
  p->plugin_control("tester", PluginAction::stop);
  EXPECT_EQ(code_of([&] { p->sample_group("tester", 0, 8 * sec); }), Errc::plugin_stopped);
}

TEST(Pusher, UnreadableSensorIsSkippedAndCounted) {
  shv::testing::TempDir dir;
  std::ofstream(dir / "ok") << "5\n";
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher("plugin sysfile { group t { interval 1000\n sensor a { path " +
                         (dir / "ok").string() + " }\n sensor b { path " +
                         (dir / "gone").string() + " } } }",
                       clock, sink);
  auto r = p->sample_group("sysfile", 0, sec);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].value, 5);
  EXPECT_EQ(p->stats().read_errors, 1u);
}

TEST(Pusher, BatchesOnePacketPerTopic) {
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher("global { sendInterval 3600000 }\n"
                       "plugin tester { group g { interval 1000; sensors 2 } }",
                       clock, sink);
  for (std::uint64_t t = 1; t <= 5; ++t)
    p->sample_group("tester", 0, t * sec);
  p->flush();
  ASSERT_EQ(sink->packets.size(), 2u);
  for (const auto& pk : sink->packets)
    EXPECT_EQ(pk.payload.size(), 80u);
  EXPECT_EQ(p->stats().packets, 2u);
  EXPECT_EQ(p->pending(), 0u);
}

TEST(Pusher, TicksAreAlignedAndHandoffIsExactlyOnce) {
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher("global { clientId x; sendInterval 1000 }\n"
                       "plugin tester { group g { interval 1000; sensors 100 } }",
                       clock, sink);
  clock.set(250'000'000);
  run_ticks(*p, clock, 120);
  p->flush();
  auto got = sink->readings();
  std::multiset<std::tuple<std::string, std::uint64_t, std::int64_t>> published(got.begin(),
                                                                                got.end());
  std::multiset<std::tuple<std::string, std::uint64_t, std::int64_t>> expected;
  for (int j = 0; j < 100; ++j)
    for (std::int64_t k = 1; k <= 120; ++k)
      expected.emplace("/g/s" + std::to_string(j), static_cast<std::uint64_t>(k) * sec, k);
  EXPECT_EQ(published.size(), 12000u);
  EXPECT_TRUE(published == expected);
  EXPECT_EQ(p->stats().sampled, 12000u);
  EXPECT_EQ(p->stats().published, 12000u);
}

TEST(Pusher, TwoPushersShareTimestamps) {
  SimulatedClock clock(123'456'789);
  auto s1 = std::make_shared<Sink>();
  auto s2 = std::make_shared<Sink>();
  auto a = make_pusher("global { clientId a }\nplugin tester { group g { interval 250; sensors 1 } }",
                       clock, s1);
  auto b = make_pusher("global { clientId b }\nplugin tester { group g { interval 250; sensors 1 } }",
                       clock, s2);
  for (int i = 0; i < 40; ++i) {
    clock.advance(250'000'000 + (i % 3) * 1000);
    a->poll();
    b->poll();
  }
  a->flush();
  b->flush();
  std::set<std::uint64_t> ta, tb;
  for (const auto& [t, ts, v] : s1->readings())
    ta.insert(ts);
  for (const auto& [t, ts, v] : s2->readings())
    tb.insert(ts);
  EXPECT_EQ(ta, tb);
  EXPECT_GE(ta.size(), 39u);
  for (auto ts : ta)
    EXPECT_EQ(ts % 250'000'000, 0u);
}

TEST(Pusher, SendsHappenAtThePhaseOffset) {
  auto phase = send_phase("p1", sec);
  ASSERT_GT(phase, 0u);
  SimulatedClock clock(sec + phase);
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher("global { clientId p1; sendInterval 1000 }\n"
                       "plugin tester { group g { interval 1000; sensors 1 } }",
                       clock, sink);
  clock.set(2 * sec);
  p->poll();
  EXPECT_EQ(p->stats().sampled, 1u);
  EXPECT_TRUE(sink->packets.empty());
  clock.set(2 * sec + phase - 1);
  p->poll();
  EXPECT_TRUE(sink->packets.empty());
  clock.set(2 * sec + phase);
  p->poll();
  EXPECT_EQ(sink->packets.size(), 1u);
}

TEST(Pusher, MissedTicksAreSkippedAndCounted) {
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher(tester_cfg, clock, sink);
  clock.set(sec);
  p->poll();
  clock.set(5 * sec + 10);
  p->poll();
  EXPECT_EQ(p->stats().overruns, 3u);
  EXPECT_EQ(p->stats().sampled, 6u);
  auto snap = p->cache_snapshot(Topic::parse("/n1/g/s0"));
  ASSERT_EQ(snap.size(), 2u);
  EXPECT_EQ(snap[1], (RawPoint{5 * sec, 2}));
}

TEST(Pusher, OutageKeepsNewestWindowAndCountsDrops) {
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher("global { clientId out; cacheWindow 120000 }\n"
                       "plugin tester { group g { interval 1000; sensors 2 } }",
                       clock, sink);
  sink->down = true;
  const std::uint64_t n = 180;
  run_ticks(*p, clock, static_cast<int>(n));
  // Pending keeps ts >= newest - window, i.e. ticks n-120 .. n.
  const std::uint64_t survivors = std::min<std::uint64_t>(n, 120 + 1);
  EXPECT_EQ(p->pending(), 2 * survivors);
  EXPECT_EQ(p->stats().dropped, 2 * (n - survivors));
  EXPECT_GT(p->stats().send_failures, 0u);
  sink->down = false;
  p->flush();
  auto got = sink->readings();
  ASSERT_EQ(got.size(), 2 * survivors);
  std::map<std::string, std::vector<std::uint64_t>> per_topic;
  for (const auto& [t, ts, v] : got) {
    per_topic[t].push_back(ts);
    EXPECT_EQ(static_cast<std::uint64_t>(v) * sec, ts);
  }
  for (const auto& [t, list] : per_topic) {
    EXPECT_EQ(list.front(), (n - 120) * sec);
    EXPECT_EQ(list.back(), n * sec);
    EXPECT_TRUE(std::is_sorted(list.begin(), list.end()));
  }
}

TEST(Pusher, CacheHoldsWindowAfterManyTicks) {
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher(tester_cfg, clock, sink);
  run_ticks(*p, clock, 300);
  for (int j = 0; j < 3; ++j) {
    auto n = p->cache_snapshot(Topic::parse("/n1/g/s" + std::to_string(j))).size();
    EXPECT_GE(n, 120u);
    EXPECT_LE(n, 121u);
  }
  // Values are 180..300 in the cache; the mean of the last 10 s is 295.5.
  EXPECT_DOUBLE_EQ(p->cache_average(Topic::parse("/n1/g/s0"), 10 * sec), 295.5);
  EXPECT_EQ(code_of([&] { p->cache_average(Topic::parse("/n1/g/zz"), sec); }),
            Errc::unknown_sensor);
}

TEST(PluginControl, StopStartLeavesGapAndResumesAligned) {
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher(tester_cfg, clock, sink);
  run_ticks(*p, clock, 5);
  clock.advance(sec / 2);
  p->plugin_control("tester", PluginAction::stop);
  run_ticks(*p, clock, 5);
  p->plugin_control("tester", PluginAction::start);
  run_ticks(*p, clock, 3);
  auto snap = p->cache_snapshot(Topic::parse("/n1/g/s1"));
  std::vector<std::uint64_t> ts;
  std::vector<std::int64_t> vals;
  for (const auto& pt : snap) {
    ts.push_back(pt.ts / sec);
    vals.push_back(pt.value);
    EXPECT_EQ(pt.ts % sec, 0u);
  }
  EXPECT_EQ(ts, (std::vector<std::uint64_t>{1, 2, 3, 4, 5, 11, 12, 13}));
  EXPECT_EQ(vals, (std::vector<std::int64_t>{1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(code_of([&] { p->plugin_control("nope", PluginAction::stop); }), Errc::unknown_plugin);
}

TEST(PluginControl, ReloadIsAtomic) {
  shv::testing::TempDir dir;
  auto file = dir / "pusher.conf";
  std::ofstream(file) << "global { mqttprefix /h }\n"
                         "plugin tester { group g { interval 1000; sensor a } }\n";
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  auto sinkp = std::make_unique<SinkPublisher>(sink);
  Pusher p(PusherConfig::load(file), clock, std::move(sinkp));
  run_ticks(p, clock, 2);

  std::ofstream(file) << "plugin tester { group g { interval 1000; sensor a \n";
  EXPECT_EQ(code_of([&] { p.plugin_control("tester", PluginAction::reload); }),
            Errc::reload_failed);
  run_ticks(p, clock, 1);
  EXPECT_EQ(p.cache_snapshot(Topic::parse("/h/g/a")).back().value, 3);

  std::ofstream(file) << "global { mqttprefix /h }\n"
                         "plugin tester { group g { interval 1000; sensor b } }\n";
  p.plugin_control("tester", PluginAction::reload);
  EXPECT_EQ(p.sensors(), std::vector<Topic>{Topic::parse("/h/g/b")});
  EXPECT_EQ(code_of([&] { p.cache_snapshot(Topic::parse("/h/g/a")); }), Errc::unknown_sensor);
  run_ticks(p, clock, 1);
  auto b = p.cache_snapshot(Topic::parse("/h/g/b"));
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0], (RawPoint{4 * sec, 1}));
}

TEST(PusherRest, StatusCodes) {
  shv::testing::TempDir dir;
  auto file = dir / "pusher.conf";
  std::ofstream(file) << "global { mqttprefix /h }\n"
                         "plugin tester { group g { interval 1000; sensors 1 } }\n";
  SimulatedClock clock;
  auto sink = std::make_shared<Sink>();
  Pusher p(PusherConfig::load(file), clock, std::make_unique<SinkPublisher>(sink));
  auto get = [&](std::string path, std::map<std::string, std::string> params = {}) {
    return p.handle_rest({"GET", std::move(path), std::move(params)});
  };
  auto post = [&](std::string path, std::map<std::string, std::string> params = {}) {
    return p.handle_rest({"POST", std::move(path), std::move(params)});
  };
  EXPECT_EQ(get("/version").status, 200);
  EXPECT_EQ(get("/plugins").body, "tester tester running 1\n");
  EXPECT_EQ(get("/sensors").body, "/h/g/s0\n");
  EXPECT_EQ(post("/plugins/nope", {{"action", "stop"}}).status, 404);
  EXPECT_EQ(post("/plugins/tester", {{"action", "pause"}}).status, 400);
  EXPECT_EQ(post("/plugins/tester").status, 400);
  EXPECT_EQ(get("/sensors/avg", {{"topic", "/h/g/s0"}}).status, 404);
  EXPECT_EQ(get("/sensors/avg", {{"topic", "/h/g/zz"}}).status, 404);
  EXPECT_EQ(get("/sensors/avg", {{"topic", "bad topic"}}).status, 400);
  EXPECT_EQ(get("/sensors/avg").status, 400);
  run_ticks(p, clock, 4);
  auto avg = get("/sensors/avg", {{"topic", "/h/g/s0"}, {"window", "2500"}});
  EXPECT_EQ(avg.status, 200);
  EXPECT_EQ(avg.body, "3\n");
  EXPECT_EQ(get("/sensors/avg", {{"topic", "/h/g/s0"}, {"window", "x"}}).status, 400);
  auto cache = get("/sensors/cache", {{"topic", "/h/g/s0"}});
  EXPECT_EQ(cache.body, "sensor,timestamp,value\n/h/g/s0,1000000000,1\n/h/g/s0,2000000000,2\n"
                        "/h/g/s0,3000000000,3\n/h/g/s0,4000000000,4\n");
  EXPECT_EQ(post("/plugins/tester", {{"action", "stop"}}).status, 200);
  EXPECT_EQ(get("/plugins").body, "tester tester stopped 1\n");
  std::ofstream(file) << "plugin tester {";
  EXPECT_EQ(post("/plugins/tester", {{"action", "reload"}}).status, 503);
  EXPECT_EQ(get("/nowhere").status, 404);
}

TEST(PusherThreads, BackgroundModeSamplesAndServesRest) {
  SystemClock clock;
  auto sink = std::make_shared<Sink>();
  auto p = make_pusher("global { clientId bg; sendInterval 200; threads 2; restAddress 127.0.0.1:0 }\n"
                       "plugin tester { group g { interval 50; sensors 10 } }",
                       clock, sink);
  p->start();
  ASSERT_NE(p->rest_port(), 0);
  httplib::Client http("127.0.0.1", p->rest_port());
  auto res = http.Get("/version");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "shv-pusher " + std::string(shv_version) + "\n");
  std::this_thread::sleep_for(std::chrono::milliseconds(600));
  p->stop();
  auto st = p->stats();
  EXPECT_GT(st.sampled, 0u);
  EXPECT_EQ(st.published, st.sampled);
  EXPECT_GT(p->thread_cpu_ns(), 0u);
  for (const auto& [t, ts, v] : sink->readings())
    EXPECT_EQ(ts % 50'000'000, 0u);
}
