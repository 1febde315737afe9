#include "shv/cli.hpp"

#include "shv/bench.hpp"
#include "shv/collectagent.hpp"
#include "shv/database.hpp"
#include "shv/error.hpp"
#include "shv/expr.hpp"
#include "shv/metadata.hpp"
#include "shv/pusher.hpp"
#include "shv/querylib.hpp"
#include "shv/vsensor.hpp"

#include <CLI11.hpp>

#include <signal.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

namespace shv::cli {

namespace {

// CLI11 consumes its argument vector from the back.
int parse(CLI::App& app, const Args& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << app.get_name() << ": " << e.what() << "\n" << app.help();
    return exit_usage;
  }
  return -1;
}

template <class Fn>
int guarded(const std::string& tool, std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == Errc::bad_timestamp) {
      err << tool << ": " << e.what() << "\n";
      return exit_usage;
    }
    err << tool << ": " << e.what() << "\n";
    return exit_runtime;
  } catch (const std::exception& e) {
    err << tool << ": " << e.what() << "\n";
    return exit_runtime;
  }
}

int digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size())
    throw Error(Errc::bad_timestamp, "bad timestamp '" + std::string(s) + "'");
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9')
      throw Error(Errc::bad_timestamp, "bad timestamp '" + std::string(s) + "'");
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

void print_points(std::ostream& out, const std::vector<TimedValue>& points) {
  for (const auto& p : points)
    out << p.ts << ' ' << format_double(p.value) << '\n';
}

void wait_for_shutdown(const sigset_t& set) {
  int sig = 0;
  ::sigwait(&set, &sig);
}

sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  ::pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

} // namespace

std::uint64_t parse_timestamp(std::string_view s) {
  auto bad = [&] { return Error(Errc::bad_timestamp, "bad timestamp '" + std::string(s) + "'"); };
  if (s.empty())
    throw bad();
  if (s.find('-', 1) == std::string_view::npos) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw bad();
    return v;
  }
  // YYYY-MM-DDTHH:MM:SS[.frac](Z|+HH:MM|-HH:MM)
  if (s.size() < 20 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != 't' && s[10] != ' ') ||
      s[13] != ':' || s[16] != ':')
    throw bad();
  using namespace std::chrono;
  year_month_day ymd{year{digits(s, 0, 4)}, month{static_cast<unsigned>(digits(s, 5, 2))},
                     day{static_cast<unsigned>(digits(s, 8, 2))}};
  if (!ymd.ok())
    throw bad();
  int hh = digits(s, 11, 2), mm = digits(s, 14, 2), ss = digits(s, 17, 2);
  if (hh > 23 || mm > 59 || ss > 60)
    throw bad();
  std::size_t pos = 19;
  std::int64_t frac_ns = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    int n = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (n < 9) {
        frac_ns = frac_ns * 10 + (s[pos] - '0');
        ++n;
      }
      ++pos;
    }
    if (n == 0)
      throw bad();
    for (; n < 9; ++n)
      frac_ns *= 10;
  }
  std::int64_t offset_s = 0;
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else if (pos + 6 == s.size() && (s[pos] == '+' || s[pos] == '-') && s[pos + 3] == ':') {
    int oh = digits(s, pos + 1, 2), om = digits(s, pos + 4, 2);
    if (oh > 23 || om > 59)
      throw bad();
    offset_s = (oh * 3600 + om * 60) * (s[pos] == '+' ? 1 : -1);
    pos += 6;
  } else {
    throw bad();
  }
  if (pos != s.size())
    throw bad();
  auto secs = sys_days(ymd).time_since_epoch() / seconds(1) + hh * 3600 + mm * 60 + ss - offset_s;
  if (secs < 0)
    throw bad();
  return static_cast<std::uint64_t>(secs) * 1'000'000'000ULL + static_cast<std::uint64_t>(frac_ns);
}

std::filesystem::path store_root(const std::string& flag) {
  if (!flag.empty())
    return flag;
  if (const char* env = std::getenv("SHV_STORE"); env && *env)
    return env;
  return "shv-data";
}

// -- shv-config -------------------------------------------------------------

int config_main(const Args& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sensor metadata, virtual sensors and store maintenance", "shv-config"};
  std::string store;
  app.add_option("--store", store, "Storage root (default: $SHV_STORE)");
  app.require_subcommand(1);

  auto* sensor = app.add_subcommand("sensor", "Sensor metadata");
  sensor->require_subcommand(1);
  std::string topic;
  std::optional<std::string> unit;
  std::optional<double> scale;
  std::optional<std::uint64_t> interval_ms, ttl_ms;
  auto* set = sensor->add_subcommand("set", "Create or update a sensor's metadata");
  set->add_option("topic", topic)->required();
  set->add_option("--unit", unit);
  set->add_option("--scale", scale);
  set->add_option("--interval", interval_ms, "Sampling interval in ms");
  set->add_option("--ttl", ttl_ms, "Retention in ms, 0 keeps forever");
  auto* show = sensor->add_subcommand("show", "Print a sensor's metadata");
  show->add_option("topic", topic)->required();

  auto* vsensor = app.add_subcommand("vsensor", "Virtual sensors");
  vsensor->require_subcommand(1);
  std::string expr_text, vunit;
  std::uint64_t vinterval_ms = 0;
  double vscale = 1.0;
  std::string tzero = "0";
  auto* define = vsensor->add_subcommand("define", "Define or redefine a virtual sensor");
  define->add_option("topic", topic)->required();
  define->add_option("expr", expr_text)->required();
  define->add_option("unit", vunit)->required();
  define->add_option("interval", vinterval_ms, "Grid interval in ms")->required();
  define->add_option("--scale", vscale);
  define->add_option("--tzero", tzero, "Grid origin");
  auto* list = vsensor->add_subcommand("list", "List virtual sensors");

  auto* db = app.add_subcommand("db", "Store maintenance");
  db->require_subcommand(1);
  std::string before;
  auto* deleteold = db->add_subcommand("deleteold", "Delete readings older than a timestamp");
  deleteold->add_option("ts", before)->required();
  auto* compact = db->add_subcommand("compact", "Rewrite segments without hidden records");

  if (int rc = parse(app, args, out, err); rc >= 0)
    return rc;

  return guarded("shv-config", err, [&] {
    auto database = Database::open(store_root(store));
    auto& meta = database->metadata();
    if (set->parsed()) {
      auto t = Topic::parse(topic);
      auto m = meta.sensor(t).value_or(SensorMetadata{});
      m.topic = t;
      if (unit)
        m.unit = unit_by_symbol(*unit);
      if (scale)
        m.scale = *scale;
      if (interval_ms)
        m.interval_ns = *interval_ms * 1'000'000;
      if (ttl_ms)
        m.ttl_ns = *ttl_ms * 1'000'000;
      m.validate();
      meta.set_sensor(m);
      meta.save();
      return exit_ok;
    }
    if (show->parsed()) {
      auto t = Topic::parse(topic);
      if (auto v = meta.vsensor(t)) {
        out << "topic " << v->topic.str() << "\nexpr " << v->expr.str() << "\nunit "
            << v->unit.symbol << "\ninterval " << format_duration(v->interval_ns) << "\nscale "
            << format_double(v->scale) << "\ntzero " << v->t_zero_ns << "\n";
        return exit_ok;
      }
      auto m = meta.sensor(t);
      if (!m && !database->dictionary().find(t))
        throw Error(Errc::unknown_sensor, "unknown sensor " + t.str());
      auto shown = m.value_or(database->sensor_metadata(t));
      out << "topic " << t.str() << "\nunit " << shown.unit.symbol << "\nscale "
          << format_double(shown.scale) << "\ninterval " << format_duration(shown.interval_ns)
          << "\nttl " << format_duration(shown.ttl_ns) << "\n";
      return exit_ok;
    }
    if (define->parsed()) {
      VSensorDef def;
      def.topic = Topic::parse(topic);
      def.expr = parse_expr(expr_text);
      def.unit = unit_by_symbol(vunit);
      if (vinterval_ms == 0)
        throw Error(Errc::invalid_metadata, "interval must be positive");
      def.interval_ns = vinterval_ms * 1'000'000;
      def.scale = vscale;
      def.t_zero_ns = parse_timestamp(tzero);
      define_vsensor(*database, std::move(def));
      return exit_ok;
    }
    if (list->parsed()) {
      for (const auto& v : meta.vsensors())
        out << v.topic.str() << '\t' << v.expr.str() << '\t' << v.unit.symbol << '\t'
            << format_duration(v.interval_ns) << '\n';
      return exit_ok;
    }
    if (deleteold->parsed()) {
      auto n = database->store().delete_before(parse_timestamp(before));
      out << n << " readings deleted\n";
      return exit_ok;
    }
    if (compact->parsed()) {
      database->store().compact();
      database->flush();
      return exit_ok;
    }
    return exit_usage;
  });
}

// -- shv-query --------------------------------------------------------------

int query_main(const Args& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fetch sensor readings", "shv-query"};
  std::string store, topic, t0, t1;
  bool raw = false, integral = false, derivative = false, csv = false;
  app.add_option("--store", store, "Storage root (default: $SHV_STORE)");
  app.add_option("topic", topic)->required();
  app.add_option("t0", t0, "Start, inclusive")->required();
  app.add_option("t1", t1, "End, exclusive")->required();
  auto* f_raw = app.add_flag("--raw", raw, "Unscaled stored integers");
  auto* f_int = app.add_flag("--integral", integral, "Trapezoidal integral over seconds");
  auto* f_der = app.add_flag("--derivative", derivative, "Backward difference per second");
  f_raw->excludes(f_int)->excludes(f_der);
  f_int->excludes(f_der);
  app.add_flag("--csv", csv, "CSV output");

  if (int rc = parse(app, args, out, err); rc >= 0)
    return rc;

  return guarded("shv-query", err, [&] {
    auto begin = parse_timestamp(t0);
    auto end = parse_timestamp(t1);
    auto database = Database::open(store_root(store));
    auto r = query::fetch(*database, Topic::parse(topic), begin, end,
                          raw ? query::Mode::raw : query::Mode::scaled);
    if (integral) {
      auto q = query::integral(r);
      out << format_double(q.value) << ' ' << q.unit.symbol << '\n';
      return exit_ok;
    }
    if (derivative)
      r = query::derivative(r);
    if (csv) {
      out << query::csv_export(std::span(&r, 1));
    } else if (raw) {
      for (const auto& p : r.raw)
        out << p.ts << ' ' << p.value << '\n';
    } else {
      print_points(out, r.points);
    }
    return exit_ok;
  });
}

// -- shv-csvimport ----------------------------------------------------------

int csvimport_main(const Args& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Import raw readings from CSV (sensor,timestamp,value)", "shv-csvimport"};
  std::string store, file;
  app.add_option("--store", store, "Storage root (default: $SHV_STORE)");
  app.add_option("file", file)->required();

  if (int rc = parse(app, args, out, err); rc >= 0)
    return rc;

  return guarded("shv-csvimport", err, [&] {
    std::ifstream in(file, std::ios::binary);
    if (!in)
      throw Error(Errc::io_failure, "cannot read " + file);
    std::stringstream text;
    text << in.rdbuf();
    auto database = Database::open(store_root(store));
    auto n = query::csv_import(text.str(), *database);
    database->flush();
    out << n << " rows imported\n";
    return exit_ok;
  });
}

// -- daemons ----------------------------------------------------------------

int pusher_main(const Args& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sensor collection daemon", "shv-pusher"};
  std::string config;
  app.add_option("--config", config, "Configuration file")->required();
  if (int rc = parse(app, args, out, err); rc >= 0)
    return rc;

  return guarded("shv-pusher", err, [&] {
    auto cfg = PusherConfig::load(config);
    auto [host, port] = split_host_port(cfg.broker, wire::default_port);
    auto signals = block_shutdown_signals();
    SystemClock clock;
    auto client = std::make_unique<MqttClient>(host, port, cfg.client_id, clock, cfg.keep_alive_s);
    Pusher pusher(std::move(cfg), clock, std::move(client));
    pusher.start();
    err << "shv-pusher: " << pusher.sensors().size() << " sensors";
    if (pusher.rest_port())
      err << ", REST on port " << pusher.rest_port();
    err << "\n";
    wait_for_shutdown(signals);
    pusher.stop();
    return exit_ok;
  });
}

int agent_main(const Args& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Collect agent: publish-only MQTT broker in front of the store", "shv-agent"};
  std::string config;
  app.add_option("--config", config, "Configuration file")->required();
  if (int rc = parse(app, args, out, err); rc >= 0)
    return rc;

  return guarded("shv-agent", err, [&] {
    auto cfg = AgentConfig::load(config);
    auto signals = block_shutdown_signals();
    SystemClock clock;
    CollectAgent agent(std::move(cfg), clock);
    agent.start();
    err << "shv-agent: MQTT on port " << agent.mqtt_port();
    if (agent.rest_port())
      err << ", REST on port " << agent.rest_port();
    err << "\n";
    wait_for_shutdown(signals);
    agent.stop();
    return exit_ok;
  });
}

int bench_main(const Args& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sweep tester pushers against an in-process collect agent", "shv-bench"};
  std::vector<std::size_t> pushers{1};
  std::vector<std::size_t> sensors{100};
  std::vector<std::uint64_t> intervals{1000};
  bench::SweepConfig cfg;
  std::string output, work;
  app.add_option("--pushers", pushers, "Pusher counts")->delimiter(',');
  app.add_option("--sensors", sensors, "Sensors per pusher")->delimiter(',');
  app.add_option("--intervals", intervals, "Sampling intervals in ms")->delimiter(',');
  app.add_option("--duration", cfg.duration_ms, "Run length per cell in ms");
  app.add_option("--threads", cfg.pusher_threads, "Sampler threads per pusher");
  app.add_option("--work-dir", work, "Directory for per-cell stores");
  app.add_option("--out", output, "Write the CSV report here instead of stdout");
  if (int rc = parse(app, args, out, err); rc >= 0)
    return rc;

  return guarded("shv-bench", err, [&] {
    cfg.grid = bench::SweepConfig::product(pushers, sensors, intervals);
    cfg.work_dir = work;
    std::vector<bench::SweepRow> rows;
    for (const auto& cell : cfg.grid) {
      err << "shv-bench: " << cell.pushers << " pushers x " << cell.sensors << " sensors @ "
          << cell.interval_ms << " ms\n";
      rows.push_back(bench::run_cell(cell, cfg));
    }
    auto csv = bench::sweep_csv(rows);
    if (output.empty()) {
      out << csv;
    } else {
      std::ofstream f(output, std::ios::binary);
      if (!(f << csv))
        throw Error(Errc::io_failure, "cannot write " + output);
    }
    return exit_ok;
  });
}

} // namespace shv::cli
