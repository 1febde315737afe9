#include "shv/bench.hpp"

#include "shv/clock.hpp"
#include "shv/collectagent.hpp"
#include "shv/error.hpp"
#include "shv/pusher.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

namespace shv::bench {

double overhead(const OverheadSample& s) {
  if (!(s.t_ref_s > 0.0))
    throw Error(Errc::degenerate_input, "reference runtime must be positive");
  return (s.t_pusher_s - s.t_ref_s) / s.t_ref_s;
}

double reported_overhead(const OverheadSample& s) { return std::max(0.0, overhead(s)); }

ScalingModel::ScalingModel(double a, double load_a, double b, double load_b)
  : a_(a), la_(load_a), b_(b), lb_(load_b) {
  if (a == b)
    throw Error(Errc::invalid_model, "calibration rates must differ");
}

double ScalingModel::predict(double s) const { return la_ + (s - a_) * ((lb_ - la_) / (b_ - a_)); }

LinearFit fit(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2)
    throw Error(Errc::degenerate_input, "need at least two points");
  long double n = static_cast<long double>(points.size());
  long double mx = 0, my = 0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  long double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0)
    throw Error(Errc::degenerate_input, "all rates are equal");
  LinearFit f;
  auto slope = sxy / sxx;
  f.slope = static_cast<double>(slope);
  f.intercept = static_cast<double>(my - slope * mx);
  long double ss_res = 0;
  for (const auto& [x, y] : points) {
    auto e = y - (my + slope * (x - mx));
    ss_res += e * e;
  }
  f.r2 = syy == 0 ? 1.0 : static_cast<double>(1 - ss_res / syy);
  return f;
}

std::vector<SweepCell> SweepConfig::product(const std::vector<std::size_t>& pushers,
                                            const std::vector<std::size_t>& sensors,
                                            const std::vector<std::uint64_t>& intervals_ms) {
  std::vector<SweepCell> out;
  for (auto p : pushers)
    for (auto s : sensors)
      for (auto i : intervals_ms)
        out.push_back({p, s, i});
  return out;
}

double process_cpu_s() {
  rusage ru{};
  ::getrusage(RUSAGE_SELF, &ru);
  auto tv = [](const timeval& t) { return static_cast<double>(t.tv_sec) + t.tv_usec / 1e6; };
  return tv(ru.ru_utime) + tv(ru.ru_stime);
}

double peak_rss_mb() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.starts_with("VmHWM:")) {
      std::istringstream s(line.substr(6));
      double kb = 0;
      s >> kb;
      return kb / 1024.0;
    }
  }
  rusage ru{};
  ::getrusage(RUSAGE_SELF, &ru);
  return static_cast<double>(ru.ru_maxrss) / 1024.0;
}

namespace {

struct Snapshot {
  double wall_s = 0;
  double proc_cpu_s = 0;
  double pusher_cpu_s = 0;
  std::uint64_t sampled = 0;
  std::uint64_t stored = 0;
};

double wall_now() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

std::filesystem::path fresh_dir(const std::filesystem::path& base) {
  std::random_device rd;
  auto dir = base / ("cell-" + std::to_string(rd()) + std::to_string(rd()));
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace

SweepRow run_cell(const SweepCell& cell, const SweepConfig& cfg) {
  if (cell.pushers == 0 || cell.sensors == 0 || cell.interval_ms == 0)
    throw Error(Errc::harness_failure, "empty sweep cell");
  auto base = cfg.work_dir.empty() ? std::filesystem::temp_directory_path() / "shv-bench"
                                   : cfg.work_dir;
  std::filesystem::path dir;
  SweepRow row;
  row.cell = cell;
  try {
    dir = fresh_dir(base);
    SystemClock clock;
    AgentConfig acfg;
    acfg.mqtt_host = "127.0.0.1";
    acfg.mqtt_port = 0;
    acfg.store.root = dir / "store";
    CollectAgent agent(acfg, clock);
    agent.start();

    std::vector<std::unique_ptr<Pusher>> pushers;
    for (std::size_t i = 0; i < cell.pushers; ++i) {
      PusherConfig pc;
      pc.client_id = "bench-p" + std::to_string(i);
      pc.prefix = Topic({"bench", "p" + std::to_string(i)});
      pc.threads = cfg.pusher_threads;
      auto& g = pc.root.add("plugin", "tester").add("group", "g");
      g.add("interval", std::to_string(cell.interval_ms));
      g.add("sensors", std::to_string(cell.sensors));
      auto client = std::make_unique<MqttClient>("127.0.0.1", agent.mqtt_port(), pc.client_id, clock);
      pushers.push_back(std::make_unique<Pusher>(std::move(pc), clock, std::move(client)));
    }

    auto snap = [&] {
      Snapshot s;
      s.wall_s = wall_now();
      s.proc_cpu_s = process_cpu_s();
      for (const auto& p : pushers) {
        s.pusher_cpu_s += static_cast<double>(p->thread_cpu_ns()) / 1e9;
        s.sampled += p->stats().sampled;
      }
      s.stored = agent.stats().stored;
      return s;
    };

    for (auto& p : pushers)
      p->start();
    auto total = std::chrono::milliseconds(cfg.duration_ms);
    auto warm = std::chrono::duration_cast<std::chrono::milliseconds>(total * cfg.warmup_fraction);
    std::this_thread::sleep_for(warm);
    auto a = snap();
    std::this_thread::sleep_for(total - warm);
    auto b = snap();

    for (auto& p : pushers)
      p->stop();
    // The final flush from each pusher may still be in the socket.
    std::uint64_t sent = 0;
    for (const auto& p : pushers)
      sent += p->stats().published;
    auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
    while (agent.stats().received < sent && std::chrono::steady_clock::now() < deadline)
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    agent.flush();

    double wall = b.wall_s - a.wall_s;
    if (wall <= 0)
      throw Error(Errc::harness_failure, "measurement window is empty");
    double pusher_cpu = b.pusher_cpu_s - a.pusher_cpu_s;
    row.offered_rps = static_cast<double>(b.sampled - a.sampled) / wall;
    row.stored_rps = static_cast<double>(b.stored - a.stored) / wall;
    row.pusher_cpu = pusher_cpu / wall;
    row.agent_cpu = std::max(0.0, (b.proc_cpu_s - a.proc_cpu_s) - pusher_cpu) / wall;
    row.pusher_rss_mb = peak_rss_mb();

    std::uint64_t published = 0;
    for (const auto& p : pushers) {
      auto st = p->stats();
      row.offered += st.sampled;
      row.dropped_pusher += st.dropped + p->pending();
      published += st.published;
    }
    row.stored = agent.stats().stored;
    row.dropped_agent = published - std::min(published, row.stored);
    row.loss = row.offered ? static_cast<double>(row.offered - std::min(row.offered, row.stored)) /
                               static_cast<double>(row.offered)
                           : 0.0;
    pushers.clear();
    agent.stop();
  } catch (const Error& e) {
    if (e.code() == Errc::harness_failure)
      throw;
    throw Error(Errc::harness_failure, std::string("sweep cell failed: ") + e.what());
  } catch (const std::exception& e) {
    throw Error(Errc::harness_failure, std::string("sweep cell failed: ") + e.what());
  }
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  return row;
}

std::vector<SweepRow> run_sweep(const SweepConfig& cfg) {
  if (cfg.grid.empty())
    throw Error(Errc::harness_failure, "empty sweep grid");
  std::vector<SweepRow> rows;
  for (const auto& cell : cfg.grid)
    rows.push_back(run_cell(cell, cfg));
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << sweep_header << '\n';
  out.setf(std::ios::fixed);
  for (const auto& r : rows) {
    out << r.cell.pushers << ',' << r.cell.sensors << ',' << r.cell.interval_ms << ','
        << std::setprecision(1) << r.offered_rps << ',' << r.stored_rps << ','
        << std::setprecision(6) << r.loss << ',' << r.pusher_cpu << ',' << r.agent_cpu << ','
        << std::setprecision(1) << r.pusher_rss_mb << '\n';
  }
  return out.str();
}

} // namespace shv::bench
