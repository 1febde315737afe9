#pragma once

#include "shv/metadata.hpp"
#include "shv/model.hpp"
#include "shv/storage.hpp"

#include <filesystem>
#include <memory>
#include <mutex>

namespace shv {

/// Store, topic dictionary and metadata opened together from one root:
/// the dictionary lives at `<root>/node0/dictionary`, metadata at
/// `<root>/node0/metadata.pt`.
class Database {
public:
  explicit Database(StoreConfig cfg);
  /// Opens an existing root, or creates a single-node one.
  static std::unique_ptr<Database> open(const std::filesystem::path& root);
  ~Database();

  Store& store() { return store_; }
  const Store& store() const { return store_; }
  LevelDictionary& dictionary() { return dict_; }
  const LevelDictionary& dictionary() const { return dict_; }
  MetadataStore& metadata() { return meta_; }
  const MetadataStore& metadata() const { return meta_; }

  /// Registered metadata, or defaults (dimensionless, scale 1, 1 s).
  SensorMetadata sensor_metadata(const Topic& topic) const;

  /// Persists the dictionary if it changed since the last save.
  void save_dictionary();
  /// store flush + dictionary save.
  void flush();

  const std::filesystem::path& root() const { return root_; }

private:
  std::filesystem::path root_;
  Store store_;
  LevelDictionary dict_;
  MetadataStore meta_;
  std::mutex save_mutex_;
  std::uint64_t saved_generation_ = 0;
};

} // namespace shv
