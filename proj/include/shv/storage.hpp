#pragma once

// Embedded, partitioned time-series store. Each SID lives on one node chosen
// by its ordinal at the partition level, as a directory of append-only
// segment files:
//
//   <root>/node<k>/<sid-as-32-hex>/<segment-seq>.seg
//   <root>/node<k>/<sid-as-32-hex>/index
//
// Segment files and the index start with the magic `SHV1`. Records are the
// same 16-byte big-endian (timestamp, value) layout used on the wire.

#include "shv/model.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <vector>

namespace shv {

struct StoreConfig {
  std::filesystem::path root;
  std::size_t nodes = 1;
  std::size_t partition_level = 0;
  std::size_t segment_bytes = 1 << 20;
  bool sync = false;  // fdatasync on every flush
};

/// Node index for a SID: (ordinal at the partition level) mod nodes.
std::size_t partition(SensorId sid, const StoreConfig& cfg);

struct RawPoint {
  std::uint64_t ts = 0;
  std::int64_t value = 0;
  bool operator==(const RawPoint&) const = default;
};

class Store {
public:
  /// Opens or creates a store. A new root records its layout in
  /// `<root>/store.pt`; reopening with a different node count or partition
  /// level throws Error{bad_store}.
  explicit Store(StoreConfig cfg);
  /// Opens an existing root using the layout recorded at creation.
  static StoreConfig read_config(const std::filesystem::path& root);

  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const StoreConfig& config() const { return cfg_; }

  void insert(SensorId sid, std::uint64_t ts, std::int64_t value);
  void insert(std::span<const SensorReading> readings);

  /// Records with t0 <= ts < t1, strictly increasing ts, last write wins.
  std::vector<RawPoint> query(SensorId sid, std::uint64_t t0, std::uint64_t t1) const;
  std::optional<RawPoint> latest(SensorId sid) const;

  /// Hides every record older than `ts`; returns how many distinct
  /// (sid, ts) entries disappeared from query results. A delete that removes
  /// anything is durable on return, together with everything inserted
  /// earlier into the affected series.
  std::uint64_t delete_before(std::uint64_t ts);
  std::uint64_t delete_before(SensorId sid, std::uint64_t ts);

  /// Rewrites each series into fresh segments without duplicates or
  /// hidden records. Query results are unchanged.
  void compact();

  /// Durability barrier: everything inserted before the call survives a
  /// process kill once this returns.
  void flush();

  std::vector<SensorId> series() const;
  std::uint64_t disk_bytes() const;
  std::filesystem::path node_dir(std::size_t node) const;

  /// Drops unflushed records and closes files without writing, as a killed
  /// process would. The store must not be used afterwards.
  void simulate_crash();

private:
  struct Series;

  Series& series_for(SensorId sid);
  Series* find_series(SensorId sid) const;
  void open_existing();

  StoreConfig cfg_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<SensorId, std::unique_ptr<Series>, SensorIdHash> series_;
  bool crashed_ = false;
};

} // namespace shv
