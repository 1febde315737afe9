#include "shv/database.hpp"

namespace shv {

namespace {

std::filesystem::path dictionary_file(const StoreConfig& cfg) {
  return cfg.root / "node0" / "dictionary";
}

} // namespace

Database::Database(StoreConfig cfg)
  : root_(cfg.root),
    store_(cfg),
    dict_(LevelDictionary::load(dictionary_file(cfg))),
    meta_(cfg.root / "node0" / "metadata.pt"),
    saved_generation_(dict_.generation()) {}

std::unique_ptr<Database> Database::open(const std::filesystem::path& root) {
  StoreConfig cfg;
  cfg.root = root;
  if (std::filesystem::exists(root / "store.pt"))
    cfg = Store::read_config(root);
  return std::make_unique<Database>(cfg);
}

Database::~Database() {
  try {
    save_dictionary();
  } catch (...) {
    // Best effort; the store still flushes in its own destructor.
  }
}

SensorMetadata Database::sensor_metadata(const Topic& topic) const {
  if (auto m = meta_.sensor(topic))
    return *m;
  SensorMetadata m;
  m.topic = topic;
  return m;
}

void Database::save_dictionary() {
  std::scoped_lock lock(save_mutex_);
  auto gen = dict_.generation();
  if (gen == saved_generation_)
    return;
  dict_.save(dictionary_file(store_.config()));
  saved_generation_ = gen;
}

void Database::flush() {
  // Dictionary first: stored data is unreadable without its topic mapping.
  save_dictionary();
  store_.flush();
}

} // namespace shv
