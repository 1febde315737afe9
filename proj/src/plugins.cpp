#include "shv/plugins.hpp"

#include "shv/error.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace shv {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

std::optional<std::int64_t> to_int(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    return std::nullopt;
  return v;
}

std::vector<std::string_view> fields_of(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    auto start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    if (i > start)
      out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  while (!text.empty()) {
    auto eol = text.find('\n');
    fn(text.substr(0, eol));
    if (eol == std::string_view::npos)
      break;
    text.remove_prefix(eol + 1);
  }
}

std::optional<std::string> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad())
    return std::nullopt;
  return ss.str();
}

Topic sensor_topic(const Topic& prefix, const std::string& group, const std::string& sensor) {
  try {
    return prefix / group / sensor;
  } catch (const Error& e) {
    throw Error(Errc::config_error, "bad topic for sensor " + sensor + ": " + e.what());
  }
}

std::uint64_t group_interval(const PropertyTree& g) {
  auto interval = g.get_duration_ns("interval").value_or(1'000'000'000);
  if (interval == 0)
    throw Error(Errc::config_error, "group " + g.value + ": interval must be positive");
  return interval;
}

class TesterPlugin final : public Plugin {
public:
  TesterPlugin(const PropertyTree& body, const Topic& prefix) {
    for (const auto* g : body.all("group")) {
      GroupDef def;
      def.name = g->value;
      def.interval_ns = group_interval(*g);
      auto n = g->get_int("sensors").value_or(0);
      if (n < 0)
        throw Error(Errc::config_error, "group " + def.name + ": negative sensor count");
      for (std::int64_t i = 0; i < n; ++i) {
        SensorDef s;
        s.name = "s" + std::to_string(i);
        s.topic = sensor_topic(prefix, def.name, s.name);
        def.sensors.push_back(std::move(s));
      }
      for (const auto* s : g->all("sensor")) {
        SensorDef def_s;
        def_s.name = s->value;
        def_s.topic = sensor_topic(prefix, def.name, s->value);
        def.sensors.push_back(std::move(def_s));
      }
      counters_.emplace_back(def.sensors.size(), 0);
      groups_.push_back(std::move(def));
    }
  }

  std::string_view kind() const override { return "tester"; }

  std::vector<std::optional<std::int64_t>> read_group(std::size_t group) override {
    auto& c = counters_.at(group);
    std::vector<std::optional<std::int64_t>> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i)
      out[i] = ++c[i];
    return out;
  }

private:
  std::vector<std::vector<std::int64_t>> counters_;
};

class ProcfilePlugin final : public Plugin {
public:
  ProcfilePlugin(const PropertyTree& body, const Topic& prefix,
                 std::map<std::string, EntityDef> entities) {
    entities_ = std::move(entities);
    for (const auto* g : body.all("group")) {
      GroupDef def;
      def.name = g->value;
      def.interval_ns = group_interval(*g);
      def.entity = g->get_or("entity", "");
      def.path = g->require("path");
      def.format = g->get_or("type", "meminfo");
      if (def.format != "meminfo" && def.format != "vmstat" && def.format != "procstat")
        throw Error(Errc::config_error, "group " + def.name + ": unknown type " + def.format);
      std::vector<std::string> metrics;
      for (const auto* s : g->all("sensor"))
        metrics.push_back(s->value);
      if (metrics.empty()) {
        // No explicit sensors: every metric present in the file right now.
        auto text = slurp(resolve(def, def.path));
        if (!text)
          throw Error(Errc::config_error, "cannot read " + resolve(def, def.path).string());
        for (const auto& [k, v] : parse_proc(def.format, *text))
          metrics.push_back(k);
      }
      for (auto& m : metrics) {
        if (!Topic::valid_component(m))
          continue;
        SensorDef s;
        s.name = m;
        s.source = m;
        s.topic = sensor_topic(prefix, def.name, m);
        def.sensors.push_back(std::move(s));
      }
      groups_.push_back(std::move(def));
    }
  }

  std::string_view kind() const override { return "procfile"; }

  std::vector<std::optional<std::int64_t>> read_group(std::size_t group) override {
    const auto& g = groups_.at(group);
    std::vector<std::optional<std::int64_t>> out(g.sensors.size());
    auto text = slurp(resolve(g, g.path));
    if (!text)
      return out;
    auto snap = parse_proc(g.format, *text);
    for (std::size_t i = 0; i < g.sensors.size(); ++i)
      if (auto it = snap.find(g.sensors[i].source); it != snap.end())
        out[i] = it->second;
    return out;
  }
};

class SysfilePlugin final : public Plugin {
public:
  SysfilePlugin(const PropertyTree& body, const Topic& prefix,
                std::map<std::string, EntityDef> entities) {
    entities_ = std::move(entities);
    for (const auto* g : body.all("group")) {
      GroupDef def;
      def.name = g->value;
      def.interval_ns = group_interval(*g);
      def.entity = g->get_or("entity", "");
      for (const auto* s : g->all("sensor")) {
        SensorDef sd;
        sd.name = s->value;
        sd.source = s->require("path");
        sd.topic = sensor_topic(prefix, def.name, s->value);
        def.sensors.push_back(std::move(sd));
      }
      groups_.push_back(std::move(def));
    }
  }

  std::string_view kind() const override { return "sysfile"; }

  std::vector<std::optional<std::int64_t>> read_group(std::size_t group) override {
    const auto& g = groups_.at(group);
    std::vector<std::optional<std::int64_t>> out(g.sensors.size());
    for (std::size_t i = 0; i < g.sensors.size(); ++i) {
      try {
        out[i] = sysfile_read(resolve(g, g.sensors[i].source));
      } catch (const Error&) {
      }
    }
    return out;
  }
};

} // namespace

fs::path Plugin::resolve(const GroupDef& g, const fs::path& p) const {
  if (g.entity.empty() || p.is_absolute())
    return p;
  auto it = entities_.find(g.entity);
  if (it == entities_.end())
    return p;
  return it->second.base / p;
}

PropertyTree plugin_body(const PropertyTree& block, const fs::path& config_dir) {
  auto file = block.get("config");
  if (!file)
    return block;
  fs::path path(*file);
  if (path.is_relative())
    path = config_dir / path;
  return PropertyTree::load(path);
}

std::unique_ptr<Plugin> make_plugin(const PropertyTree& block, const PropertyTree& body,
                                    const Topic& prefix) {
  std::map<std::string, EntityDef> entities;
  for (const auto* e : body.all("entity"))
    entities[e->value] = {e->value, e->get_or("base", "")};
  for (const auto* g : body.all("group")) {
    auto entity = g->get("entity");
    if (entity && !entities.contains(*entity))
      throw Error(Errc::config_error, "group " + g->value + " references unknown entity " + *entity);
    if (g->value.empty() || !Topic::valid_component(g->value))
      throw Error(Errc::config_error, "invalid group name '" + g->value + "'");
  }

  std::unique_ptr<Plugin> plugin;
  const auto& kind = block.value;
  if (kind == "tester")
    plugin = std::make_unique<TesterPlugin>(body, prefix);
  else if (kind == "procfile")
    plugin = std::make_unique<ProcfilePlugin>(body, prefix, std::move(entities));
  else if (kind == "sysfile")
    plugin = std::make_unique<SysfilePlugin>(body, prefix, std::move(entities));
  else
    throw Error(Errc::config_error, "unknown plugin kind '" + kind + "'");
  plugin->name_ = block.get_or("name", kind);
  for (const auto& g : plugin->groups())
    if (g.sensors.empty())
      throw Error(Errc::config_error, "group " + g.name + " has no sensors");
  return plugin;
}

ProcSnapshot parse_meminfo(std::string_view text) {
  ProcSnapshot out;
  for_each_line(text, [&](std::string_view line) {
    auto colon = line.find(':');
    if (colon == std::string_view::npos)
      return;
    auto key = trim(line.substr(0, colon));
    auto f = fields_of(line.substr(colon + 1));
    if (key.empty() || f.empty() || f.size() > 2 || (f.size() == 2 && f[1] != "kB"))
      return;
    if (auto v = to_int(f[0]))
      out[std::string(key)] = *v;
  });
  return out;
}

ProcSnapshot parse_vmstat(std::string_view text) {
  ProcSnapshot out;
  for_each_line(text, [&](std::string_view line) {
    auto f = fields_of(line);
    if (f.size() != 2)
      return;
    if (auto v = to_int(f[1]))
      out[std::string(f[0])] = *v;
  });
  return out;
}

ProcSnapshot parse_procstat(std::string_view text) {
  static constexpr const char* cpu_fields[] = {"user", "nice", "system", "idle",
                                               "iowait", "irq", "softirq"};
  ProcSnapshot out;
  for_each_line(text, [&](std::string_view line) {
    auto f = fields_of(line);
    if (f.size() < 2)
      return;
    if (f[0].starts_with("cpu")) {
      std::string prefix(f[0]);
      for (std::size_t i = 1; i < f.size() && i <= std::size(cpu_fields); ++i) {
        auto v = to_int(f[i]);
        if (!v)
          break;
        out[prefix + "." + cpu_fields[i - 1]] = *v;
      }
    } else if ((f[0] == "ctxt" || f[0] == "processes" || f[0] == "procs_running" ||
                f[0] == "procs_blocked" || f[0] == "btime") &&
               f.size() == 2) {
      if (auto v = to_int(f[1]))
        out[std::string(f[0])] = *v;
    }
  });
  return out;
}

ProcSnapshot parse_proc(std::string_view format, std::string_view text) {
  if (format == "meminfo")
    return parse_meminfo(text);
  if (format == "vmstat")
    return parse_vmstat(text);
  if (format == "procstat")
    return parse_procstat(text);
  throw Error(Errc::config_error, "unknown procfs format " + std::string(format));
}

std::int64_t sysfile_read(const fs::path& path) {
  auto text = slurp(path);
  if (!text)
    throw Error(Errc::unreadable, "cannot read " + path.string());
  std::string_view s = trim(*text);
  std::size_t n = 0;
  if (n < s.size() && (s[n] == '-' || s[n] == '+'))
    ++n;
  while (n < s.size() && std::isdigit(static_cast<unsigned char>(s[n])))
    ++n;
  auto digits = s.substr(s.starts_with('+') ? 1 : 0, n - (s.starts_with('+') ? 1 : 0));
  auto v = to_int(digits);
  if (!v)
    throw Error(Errc::not_numeric, path.string() + ": not a number");
  return *v;
}

} // namespace shv
