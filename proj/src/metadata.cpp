#include "shv/metadata.hpp"

#include "shv/error.hpp"

#include <charconv>
#include <fstream>
#include <mutex>

namespace shv {

std::string format_duration(std::uint64_t ns) {
  if (ns % 1'000'000 == 0)
    return std::to_string(ns / 1'000'000);
  return std::to_string(ns) + "ns";
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

SensorMetadata sensor_from_tree(const PropertyTree& block) {
  SensorMetadata m;
  m.topic = Topic::parse(block.value);
  m.unit = unit_by_symbol(block.get_or("unit", ""));
  m.scale = block.get_double("scale").value_or(1.0);
  m.interval_ns = block.get_duration_ns("interval").value_or(1'000'000'000);
  m.ttl_ns = block.get_duration_ns("ttl").value_or(0);
  m.validate();
  return m;
}

VSensorDef vsensor_from_tree(const PropertyTree& block) {
  VSensorDef d;
  d.topic = Topic::parse(block.value);
  d.expr = parse_expr(block.require("expr"));
  d.unit = unit_by_symbol(block.get_or("unit", ""));
  d.interval_ns = block.get_duration_ns("interval").value_or(1'000'000'000);
  d.t_zero_ns = block.get_duration_ns("tzero").value_or(0);
  d.scale = block.get_double("scale").value_or(1.0);
  if (d.interval_ns == 0 || d.scale == 0.0)
    throw Error(Errc::invalid_metadata, d.topic.str() + ": interval and scale must be nonzero");
  return d;
}

MetadataStore::MetadataStore(std::filesystem::path file) : file_(std::move(file)) {
  if (!file_.empty() && std::filesystem::exists(file_))
    from_tree(PropertyTree::load(file_), *this);
}

std::optional<SensorMetadata> MetadataStore::sensor(const Topic& topic) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(topic);
  if (it == entries_.end())
    return std::nullopt;
  if (auto* m = std::get_if<SensorMetadata>(&it->second))
    return *m;
  return std::nullopt;
}

std::optional<VSensorDef> MetadataStore::vsensor(const Topic& topic) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(topic);
  if (it == entries_.end())
    return std::nullopt;
  if (auto* d = std::get_if<VSensorDef>(&it->second))
    return *d;
  return std::nullopt;
}

bool MetadataStore::contains(const Topic& topic) const {
  std::shared_lock lock(mutex_);
  return entries_.contains(topic);
}

void MetadataStore::set_sensor(SensorMetadata meta) {
  meta.validate();
  std::scoped_lock lock(mutex_);
  auto it = entries_.find(meta.topic);
  if (it != entries_.end() && std::holds_alternative<VSensorDef>(it->second))
    throw Error(Errc::invalid_metadata, meta.topic.str() + " is a virtual sensor");
  auto topic = meta.topic;
  entries_.insert_or_assign(std::move(topic), std::move(meta));
}

void MetadataStore::put_vsensor(VSensorDef def) {
  std::scoped_lock lock(mutex_);
  auto topic = def.topic;
  entries_.insert_or_assign(std::move(topic), std::move(def));
}

bool MetadataStore::remove(const Topic& topic) {
  std::scoped_lock lock(mutex_);
  return entries_.erase(topic) > 0;
}

std::vector<SensorMetadata> MetadataStore::sensors() const {
  std::shared_lock lock(mutex_);
  std::vector<SensorMetadata> out;
  for (const auto& [t, e] : entries_)
    if (auto* m = std::get_if<SensorMetadata>(&e))
      out.push_back(*m);
  return out;
}

std::vector<VSensorDef> MetadataStore::vsensors() const {
  std::shared_lock lock(mutex_);
  std::vector<VSensorDef> out;
  for (const auto& [t, e] : entries_)
    if (auto* d = std::get_if<VSensorDef>(&e))
      out.push_back(*d);
  return out;
}

PropertyTree MetadataStore::to_tree() const {
  std::shared_lock lock(mutex_);
  PropertyTree root;
  for (const auto& [topic, entry] : entries_) {
    if (auto* m = std::get_if<SensorMetadata>(&entry)) {
      auto& b = root.add("sensor", topic.str());
      b.add("unit", m->unit.symbol);
      b.add("scale", format_double(m->scale));
      b.add("interval", format_duration(m->interval_ns));
      b.add("ttl", format_duration(m->ttl_ns));
    } else {
      const auto& d = std::get<VSensorDef>(entry);
      auto& b = root.add("vsensor", topic.str());
      b.add("expr", d.expr.str());
      b.add("unit", d.unit.symbol);
      b.add("interval", format_duration(d.interval_ns));
      b.add("scale", format_double(d.scale));
      b.add("tzero", format_duration(d.t_zero_ns));
    }
  }
  return root;
}

void MetadataStore::from_tree(const PropertyTree& tree, MetadataStore& into) {
  for (const auto& child : tree.children) {
    if (child.key == "sensor")
      into.set_sensor(sensor_from_tree(child));
    else if (child.key == "vsensor")
      into.put_vsensor(vsensor_from_tree(child));
    else
      throw Error(Errc::config_error, "unknown metadata entry '" + child.key + "'");
  }
}

void MetadataStore::save() const {
  if (file_.empty())
    return;
  auto text = to_tree().serialize();
  auto tmp = file_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out)
      throw Error(Errc::io_failure, "cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, file_, ec);
  if (ec)
    throw Error(Errc::io_failure, "cannot rename to " + file_.string() + ": " + ec.message());
}

} // namespace shv
