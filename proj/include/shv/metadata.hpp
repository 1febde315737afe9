#pragma once

#include "shv/expr.hpp"
#include "shv/model.hpp"
#include "shv/ptree.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <variant>
#include <vector>

namespace shv {

/// A derived sensor evaluated on the grid t_zero_ns + k * interval_ns.
struct VSensorDef {
  Topic topic;
  Expr expr = Expr::constant(0.0);
  Unit unit = unit_by_symbol("");
  std::uint64_t interval_ns = 1'000'000'000;
  std::uint64_t t_zero_ns = 0;
  double scale = 1.0;  // results are stored as round(value / scale)

  bool operator==(const VSensorDef&) const = default;
};

/// Per-topic sensor metadata and virtual sensor definitions, persisted as a
/// property-tree file.
class MetadataStore {
public:
  MetadataStore() = default;
  /// Loads `file` if it exists; save() writes back to it.
  explicit MetadataStore(std::filesystem::path file);

  MetadataStore(const MetadataStore&) = delete;
  MetadataStore& operator=(const MetadataStore&) = delete;

  std::optional<SensorMetadata> sensor(const Topic& topic) const;
  std::optional<VSensorDef> vsensor(const Topic& topic) const;
  bool contains(const Topic& topic) const;

  /// Throws Error{invalid_metadata} if the topic names a virtual sensor.
  void set_sensor(SensorMetadata meta);
  /// Replaces any previous entry for the topic. No dependency checks here.
  void put_vsensor(VSensorDef def);
  bool remove(const Topic& topic);

  std::vector<SensorMetadata> sensors() const;
  std::vector<VSensorDef> vsensors() const;

  PropertyTree to_tree() const;
  static void from_tree(const PropertyTree& tree, MetadataStore& into);

  void save() const;
  const std::filesystem::path& file() const { return file_; }

private:
  using Entry = std::variant<SensorMetadata, VSensorDef>;

  std::filesystem::path file_;
  mutable std::shared_mutex mutex_;
  std::map<Topic, Entry> entries_;
};

/// Reads one `vsensor <topic> { expr ...; unit ...; interval ...; scale ...; tzero ... }` block.
VSensorDef vsensor_from_tree(const PropertyTree& block);
SensorMetadata sensor_from_tree(const PropertyTree& block);

/// Milliseconds when exact, else an `ns`-suffixed integer.
std::string format_duration(std::uint64_t ns);
/// Shortest round-trip decimal.
std::string format_double(double v);

} // namespace shv
