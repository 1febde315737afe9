#pragma once

// Core domain types: topics, hierarchical sensor ids, readings, units and
// sensor metadata, plus the per-level dictionary that maps topics to SIDs.

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace shv {

inline constexpr std::size_t max_topic_levels = 8;
inline constexpr std::size_t max_topic_bytes = 255;

/// A sensor's MQTT topic, e.g. `/r1/c1/n1/power`.
class Topic {
public:
  Topic() = default;
  explicit Topic(std::vector<std::string> components);

  /// Throws Error{malformed_topic}.
  static Topic parse(std::string_view text);
  static bool valid_component(std::string_view component);

  const std::vector<std::string>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }
  bool empty() const { return components_.empty(); }

  /// Serialized `/c1/c2/.../cK` form.
  std::string str() const;

  /// Appends components of `suffix`; throws if the result is not a valid topic.
  Topic operator/(const Topic& suffix) const;
  Topic operator/(std::string_view component) const;

  auto operator<=>(const Topic&) const = default;
  bool operator==(const Topic&) const = default;

private:
  std::vector<std::string> components_;
};

/// 128-bit hierarchical sensor id: eight 16-bit level fields, level 0 in the
/// most significant bits. A zero field marks an absent level.
class SensorId {
public:
  constexpr SensorId() = default;
  constexpr SensorId(std::uint64_t hi, std::uint64_t lo) : hi_(hi), lo_(lo) {}

  static SensorId from_levels(const std::array<std::uint16_t, max_topic_levels>& levels);
  /// Parses exactly 32 hex digits; returns nullopt otherwise.
  static std::optional<SensorId> from_hex(std::string_view hex);

  std::uint16_t level(std::size_t i) const;
  std::array<std::uint16_t, max_topic_levels> levels() const;
  /// Number of populated levels, assuming contiguity.
  std::size_t depth() const;

  std::uint64_t hi() const { return hi_; }
  std::uint64_t lo() const { return lo_; }
  std::string hex() const;

  auto operator<=>(const SensorId&) const = default;
  bool operator==(const SensorId&) const = default;

private:
  std::uint64_t hi_ = 0;
  std::uint64_t lo_ = 0;
};

struct SensorIdHash {
  std::size_t operator()(const SensorId& sid) const noexcept {
    return static_cast<std::size_t>(sid.hi() * 0x9e3779b97f4a7c15ULL ^ sid.lo());
  }
};

struct SensorReading {
  SensorId sid;
  std::uint64_t timestamp = 0;  // ns since epoch, > 0
  std::int64_t value = 0;       // raw, unscaled

  bool operator==(const SensorReading&) const = default;
};

/// A (timestamp, decoded value) pair as returned by queries.
struct TimedValue {
  std::uint64_t ts = 0;
  double value = 0.0;
  bool operator==(const TimedValue&) const = default;
};

/// Per-level bidirectional name <-> ordinal maps. Readers may run
/// concurrently; registrations are serialized.
class LevelDictionary {
public:
  LevelDictionary() = default;
  LevelDictionary(const LevelDictionary& other);
  LevelDictionary& operator=(const LevelDictionary& other);

  /// Looks up or registers every component. Throws Error{level_exhausted}.
  SensorId encode(const Topic& topic);
  /// Lookup only; nullopt if any component is not registered.
  std::optional<SensorId> find(const Topic& topic) const;
  /// Throws Error{unknown_ordinal} or Error{noncontiguous_levels}.
  Topic decode(SensorId sid) const;

  /// Monotone counter bumped on every registration.
  std::uint64_t generation() const;
  std::size_t level_size(std::size_t level) const;

  /// `<level>\t<ordinal>\t<name>\n` lines, levels then ordinals ascending.
  std::string serialize() const;
  static LevelDictionary deserialize(std::string_view text);

  void save(const std::filesystem::path& path) const;
  /// Missing file yields an empty dictionary.
  static LevelDictionary load(const std::filesystem::path& path);

private:
  struct Level {
    std::unordered_map<std::string, std::uint16_t> ordinals;
    std::vector<std::string> names;  // names[ordinal - 1]
  };

  std::uint16_t lookup_or_insert(std::size_t level, const std::string& name);

  mutable std::shared_mutex mutex_;
  std::array<Level, max_topic_levels> levels_;
  std::uint64_t generation_ = 0;
};

enum class Dimension {
  power,
  energy,
  temperature,
  time,
  bytes,
  dimensionless,
  compound,  // derived results such as B/s; never in the registry
};

std::string_view dimension_name(Dimension d);

struct Unit {
  std::string symbol;
  Dimension dimension = Dimension::dimensionless;
  double factor = 1.0;  // multiplier to the dimension's base unit

  bool operator==(const Unit&) const = default;
};

/// Registry lookup; accepts "C" and "degC" for °C. Throws Error{unknown_unit}.
const Unit& unit_by_symbol(std::string_view symbol);
const std::vector<Unit>& unit_registry();
const Unit& base_unit(Dimension d);
/// Registry unit with the given dimension and factor, if any.
const Unit* find_unit(Dimension d, double factor);

/// value * from.factor / to.factor. Throws Error{dimension_mismatch}.
double convert(double value, const Unit& from, const Unit& to);

struct SensorMetadata {
  Topic topic;
  Unit unit = unit_by_symbol("");
  double scale = 1.0;
  std::uint64_t interval_ns = 1'000'000'000;
  std::uint64_t ttl_ns = 0;  // 0 keeps data forever

  /// Throws Error{invalid_metadata}.
  void validate() const;
  bool operator==(const SensorMetadata&) const = default;
};

inline double scaled(const SensorReading& reading, const SensorMetadata& meta) {
  return static_cast<double>(reading.value) * meta.scale;
}

} // namespace shv

template <>
struct std::hash<shv::Topic> {
  std::size_t operator()(const shv::Topic& t) const noexcept {
    return std::hash<std::string>{}(t.str());
  }
};
