#include "shv/storage.hpp"

#include "shv/error.hpp"
#include "shv/ptree.hpp"
#include "shv/wire.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace shv {

namespace {

constexpr char magic[4] = {'S', 'H', 'V', '1'};
constexpr std::size_t header_bytes = sizeof(magic);
constexpr int max_cached_fds = 2048;

std::atomic<int> cached_fds{0};

[[noreturn]] void io_fail(const std::string& what) {
  throw Error(Errc::io_failure, what + ": " + std::strerror(errno));
}

std::string segment_name(std::uint64_t seq) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%08llu.seg", static_cast<unsigned long long>(seq));
  return buf;
}

void write_all(int fd, const std::uint8_t* data, std::size_t n, const fs::path& path) {
  while (n > 0) {
    auto w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR)
        continue;
      io_fail("write " + path.string());
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0)
    io_fail("open " + tmp.string());
  write_all(fd, reinterpret_cast<const std::uint8_t*>(content.data()), content.size(), tmp);
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0)
    io_fail("rename " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(Errc::io_failure, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::uint64_t to_u64(std::string_view s, const fs::path& path) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error(Errc::bad_store, "corrupt index " + path.string());
  return v;
}

} // namespace

std::size_t partition(SensorId sid, const StoreConfig& cfg) {
  if (cfg.nodes <= 1)
    return 0;
  return sid.level(cfg.partition_level) % cfg.nodes;
}

// -- Series -----------------------------------------------------------------

struct Store::Series {
  struct Segment {
    std::uint64_t seq = 0;
    std::uint64_t first_pos = 0;
    std::uint64_t min_ts = UINT64_MAX;
    std::uint64_t max_ts = 0;
    std::vector<wire::Record> records;
    std::size_t durable = 0;  // records already written to the file
    std::size_t count_hint = 0;  // from the index before loading
  };

  // Hides records with timestamp < ts written before position pos.
  struct Tombstone {
    std::uint64_t ts = 0;
    std::uint64_t pos = 0;
  };

  Series(SensorId id, fs::path d, const StoreConfig& c) : sid(id), dir(std::move(d)), cfg(c) {}
  ~Series() { close_fd(); }

  std::mutex mutex;
  SensorId sid;
  fs::path dir;
  const StoreConfig& cfg;
  std::vector<Segment> segments;
  std::vector<Tombstone> tombs;
  std::uint64_t next_pos = 0;
  bool loaded = false;
  bool index_dirty = false;
  int fd = -1;  // append handle for the last segment
  bool fd_cached = false;

  fs::path index_path() const { return dir / "index"; }
  fs::path segment_path(std::uint64_t seq) const { return dir / segment_name(seq); }

  std::size_t records_per_segment() const {
    auto n = (cfg.segment_bytes > header_bytes ? cfg.segment_bytes - header_bytes : 0) /
             wire::record_bytes;
    return std::max<std::size_t>(n, 1);
  }

  void close_fd() {
    if (fd >= 0) {
      ::close(fd);
      fd = -1;
      if (fd_cached)
        --cached_fds;
      fd_cached = false;
    }
  }

  void ensure_loaded() {
    if (loaded)
      return;
    loaded = true;
    if (!fs::exists(index_path()))
      return;
    auto text = read_file(index_path());
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "SHV1")
      throw Error(Errc::bad_store, "bad index magic in " + index_path().string());
    while (std::getline(in, line)) {
      std::istringstream fields(line);
      std::string kind;
      fields >> kind;
      std::vector<std::string> v;
      for (std::string f; fields >> f;)
        v.push_back(f);
      if (kind == "next" && v.size() == 1) {
        next_pos = to_u64(v[0], index_path());
      } else if (kind == "seg" && v.size() == 5) {
        Segment s;
        s.seq = to_u64(v[0], index_path());
        s.first_pos = to_u64(v[1], index_path());
        s.count_hint = to_u64(v[2], index_path());
        segments.push_back(std::move(s));
      } else if (kind == "tomb" && v.size() == 2) {
        tombs.push_back({to_u64(v[0], index_path()), to_u64(v[1], index_path())});
      } else if (!kind.empty()) {
        throw Error(Errc::bad_store, "corrupt index " + index_path().string());
      }
    }
    for (std::size_t i = 0; i < segments.size(); ++i) {
      auto& s = segments[i];
      bool last = i + 1 == segments.size();
      auto path = segment_path(s.seq);
      std::string data;
      if (fs::exists(path))
        data = read_file(path);
      else if (!last || s.count_hint > 0)
        throw Error(Errc::bad_store, "missing segment " + path.string());
      if (!data.empty() && (data.size() < header_bytes || std::memcmp(data.data(), magic, 4) != 0))
        throw Error(Errc::bad_store, "bad segment magic in " + path.string());
      std::size_t available = data.size() > header_bytes
                                ? (data.size() - header_bytes) / wire::record_bytes
                                : 0;
      // The index is authoritative for closed segments; the open one may
      // have grown after the index was last written.
      std::size_t count = last ? available : s.count_hint;
      if (count > available)
        throw Error(Errc::bad_store, "truncated segment " + path.string());
      auto bytes = std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(data.data()) + std::min(data.size(), header_bytes),
        count * wire::record_bytes);
      s.records = wire::decode_payload(bytes);
      s.durable = s.records.size();
      for (const auto& r : s.records) {
        s.min_ts = std::min(s.min_ts, r.timestamp);
        s.max_ts = std::max(s.max_ts, r.timestamp);
      }
      if (last && data.size() != header_bytes + count * wire::record_bytes && !data.empty()) {
        // Drop a torn trailing record.
        if (::truncate(path.c_str(), static_cast<off_t>(header_bytes + count * wire::record_bytes)) != 0)
          io_fail("truncate " + path.string());
      }
      next_pos = std::max<std::uint64_t>(next_pos, s.first_pos + s.records.size());
    }
  }

  std::string render_index() const {
    std::string out = "SHV1\n";
    out += "next " + std::to_string(next_pos) + "\n";
    for (const auto& s : segments) {
      out += "seg " + std::to_string(s.seq) + " " + std::to_string(s.first_pos) + " " +
             std::to_string(s.records.size()) + " " +
             std::to_string(s.records.empty() ? 0 : s.min_ts) + " " + std::to_string(s.max_ts) +
             "\n";
    }
    for (const auto& t : tombs)
      out += "tomb " + std::to_string(t.ts) + " " + std::to_string(t.pos) + "\n";
    return out;
  }

  void write_index() {
    write_data();
    fs::create_directories(dir);
    write_file_atomic(index_path(), render_index());
    index_dirty = false;
  }

  void append(std::uint64_t ts, std::int64_t value) {
    ensure_loaded();
    if (segments.empty() || segments.back().records.size() >= records_per_segment()) {
      close_fd();
      Segment s;
      s.seq = segments.empty() ? 1 : segments.back().seq + 1;
      s.first_pos = next_pos;
      segments.push_back(std::move(s));
      index_dirty = true;
    }
    auto& s = segments.back();
    s.records.push_back({ts, value});
    s.min_ts = std::min(s.min_ts, ts);
    s.max_ts = std::max(s.max_ts, ts);
    ++next_pos;
  }

  int open_segment(const Segment& s) {
    auto path = segment_path(s.seq);
    // A segment with nothing durable yet may collide with an orphan file
    // left by a crash between data and index writes.
    int flags = O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC | (s.durable == 0 ? O_TRUNC : 0);
    int f = ::open(path.c_str(), flags, 0644);
    if (f < 0)
      io_fail("open " + path.string());
    struct stat st {};
    if (::fstat(f, &st) != 0)
      io_fail("stat " + path.string());
    if (st.st_size == 0)
      write_all(f, reinterpret_cast<const std::uint8_t*>(magic), header_bytes, path);
    return f;
  }

  // Segment data always reaches the file before any index that counts it.
  void write_data() {
    bool created = false;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      auto& s = segments[i];
      if (s.durable == s.records.size())
        continue;
      if (!created) {
        fs::create_directories(dir);
        created = true;
      }
      bool last = i + 1 == segments.size();
      int f = last && fd >= 0 ? fd : open_segment(s);
      wire::Bytes buf;
      buf.reserve((s.records.size() - s.durable) * wire::record_bytes);
      for (std::size_t k = s.durable; k < s.records.size(); ++k)
        wire::append_record(buf, s.records[k]);
      write_all(f, buf.data(), buf.size(), segment_path(s.seq));
      if (cfg.sync)
        ::fdatasync(f);
      s.durable = s.records.size();
      if (last && fd < 0 && cached_fds.load() < max_cached_fds) {
        fd = f;
        fd_cached = true;
        ++cached_fds;
      } else if (f != fd) {
        ::close(f);
      }
    }
  }

  void flush() {
    if (!loaded)
      return;
    write_data();
    if (index_dirty)
      write_index();
  }

  // Visible records in [t0, t1): tombstone filtering, then stable sort by
  // timestamp keeping the last write of each timestamp.
  std::vector<RawPoint> visible(std::uint64_t t0, std::uint64_t t1) {
    ensure_loaded();
    std::vector<std::uint64_t> suffix_max(tombs.size() + 1, 0);
    for (std::size_t i = tombs.size(); i-- > 0;)
      suffix_max[i] = std::max(suffix_max[i + 1], tombs[i].ts);
    auto hidden = [&](std::uint64_t pos, std::uint64_t ts) {
      auto it = std::upper_bound(tombs.begin(), tombs.end(), pos,
                                 [](std::uint64_t p, const Tombstone& t) { return p < t.pos; });
      return ts < suffix_max[static_cast<std::size_t>(it - tombs.begin())];
    };
    std::vector<RawPoint> out;
    for (const auto& s : segments) {
      if (s.records.empty() || s.max_ts < t0 || s.min_ts >= t1)
        continue;
      for (std::size_t i = 0; i < s.records.size(); ++i) {
        const auto& r = s.records[i];
        if (r.timestamp < t0 || r.timestamp >= t1)
          continue;
        if (!tombs.empty() && hidden(s.first_pos + i, r.timestamp))
          continue;
        out.push_back({r.timestamp, r.value});
      }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const RawPoint& a, const RawPoint& b) { return a.ts < b.ts; });
    std::size_t w = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (w > 0 && out[w - 1].ts == out[i].ts)
        out[w - 1] = out[i];
      else
        out[w++] = out[i];
    }
    out.resize(w);
    return out;
  }

  std::uint64_t delete_before(std::uint64_t ts) {
    ensure_loaded();
    if (ts == 0)
      return 0;
    auto removed = visible(0, ts).size();
    if (removed == 0)
      return 0;
    tombs.push_back({ts, next_pos});
    std::vector<std::uint64_t> doomed;
    std::erase_if(segments, [&](const Segment& s) {
      bool all_hidden = s.records.empty() || s.max_ts < ts;
      if (all_hidden)
        doomed.push_back(s.seq);
      return all_hidden;
    });
    if (segments.empty())
      tombs.clear();
    if (!doomed.empty())
      close_fd();
    write_index();
    for (auto seq : doomed)
      fs::remove(segment_path(seq));
    return removed;
  }

  void compact() {
    ensure_loaded();
    if (segments.empty())
      return;
    flush();
    auto data = visible(0, UINT64_MAX);
    close_fd();
    std::vector<std::uint64_t> old;
    for (const auto& s : segments)
      old.push_back(s.seq);
    auto seq = segments.back().seq + 1;
    std::vector<Segment> fresh;
    auto per = records_per_segment();
    for (std::size_t off = 0; off < data.size(); off += per) {
      Segment s;
      s.seq = seq++;
      s.first_pos = off;
      auto end = std::min(data.size(), off + per);
      for (std::size_t i = off; i < end; ++i) {
        s.records.push_back({data[i].ts, data[i].value});
        s.min_ts = std::min(s.min_ts, data[i].ts);
        s.max_ts = std::max(s.max_ts, data[i].ts);
      }
      fresh.push_back(std::move(s));
    }
    fs::create_directories(dir);
    // New files first, then the index switch, then the old files go.
    for (auto& s : fresh) {
      int f = open_segment(s);
      wire::Bytes buf;
      for (const auto& r : s.records)
        wire::append_record(buf, r);
      write_all(f, buf.data(), buf.size(), segment_path(s.seq));
      if (cfg.sync)
        ::fdatasync(f);
      ::close(f);
      s.durable = s.records.size();
    }
    segments = std::move(fresh);
    tombs.clear();
    next_pos = data.size();
    write_index();
    for (auto s : old)
      fs::remove(segment_path(s));
  }
};

// -- Store ------------------------------------------------------------------

StoreConfig Store::read_config(const fs::path& root) {
  auto path = root / "store.pt";
  if (!fs::exists(path))
    throw Error(Errc::bad_store, "no store at " + root.string());
  auto tree = PropertyTree::load(path);
  StoreConfig cfg;
  cfg.root = root;
  cfg.nodes = static_cast<std::size_t>(tree.get_int("nodes").value_or(1));
  cfg.partition_level = static_cast<std::size_t>(tree.get_int("partitionLevel").value_or(0));
  cfg.segment_bytes = static_cast<std::size_t>(tree.get_int("segmentBytes").value_or(1 << 20));
  return cfg;
}

Store::Store(StoreConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.nodes == 0)
    throw Error(Errc::bad_store, "store needs at least one node");
  if (cfg_.partition_level >= max_topic_levels)
    throw Error(Errc::bad_store, "partition level must be in [0,7]");
  if (cfg_.segment_bytes < header_bytes + wire::record_bytes)
    throw Error(Errc::bad_store, "segment size too small");
  std::error_code ec;
  fs::create_directories(cfg_.root, ec);
  if (ec)
    throw Error(Errc::io_failure, "cannot create " + cfg_.root.string() + ": " + ec.message());
  auto layout = cfg_.root / "store.pt";
  if (fs::exists(layout)) {
    auto existing = read_config(cfg_.root);
    if (existing.nodes != cfg_.nodes || existing.partition_level != cfg_.partition_level)
      throw Error(Errc::bad_store,
                  "store at " + cfg_.root.string() + " was created with " +
                    std::to_string(existing.nodes) + " nodes at partition level " +
                    std::to_string(existing.partition_level));
  } else {
    PropertyTree tree;
    tree.add("nodes", std::to_string(cfg_.nodes));
    tree.add("partitionLevel", std::to_string(cfg_.partition_level));
    tree.add("segmentBytes", std::to_string(cfg_.segment_bytes));
    write_file_atomic(layout, tree.serialize());
  }
  for (std::size_t k = 0; k < cfg_.nodes; ++k)
    fs::create_directories(node_dir(k));
  open_existing();
}

Store::~Store() {
  if (crashed_)
    return;
  try {
    flush();
    std::shared_lock lock(mutex_);
    for (auto& [sid, s] : series_) {
      std::scoped_lock slock(s->mutex);
      if (s->loaded && !s->segments.empty())
        s->write_index();
    }
  } catch (...) {
    // Destructors must not throw; a failed final flush loses only what an
    // explicit flush() would have reported.
  }
}

fs::path Store::node_dir(std::size_t node) const {
  return cfg_.root / ("node" + std::to_string(node));
}

void Store::open_existing() {
  for (std::size_t k = 0; k < cfg_.nodes; ++k) {
    for (const auto& entry : fs::directory_iterator(node_dir(k))) {
      if (!entry.is_directory())
        continue;
      auto sid = SensorId::from_hex(entry.path().filename().string());
      if (!sid || !fs::exists(entry.path() / "index"))
        continue;
      series_.emplace(*sid, std::make_unique<Series>(*sid, entry.path(), cfg_));
    }
  }
}

Store::Series& Store::series_for(SensorId sid) {
  {
    std::shared_lock lock(mutex_);
    auto it = series_.find(sid);
    if (it != series_.end())
      return *it->second;
  }
  std::scoped_lock lock(mutex_);
  auto& slot = series_[sid];
  if (!slot)
    slot = std::make_unique<Series>(sid, node_dir(partition(sid, cfg_)) / sid.hex(), cfg_);
  return *slot;
}

Store::Series* Store::find_series(SensorId sid) const {
  std::shared_lock lock(mutex_);
  auto it = series_.find(sid);
  return it == series_.end() ? nullptr : it->second.get();
}

void Store::insert(SensorId sid, std::uint64_t ts, std::int64_t value) {
  auto& s = series_for(sid);
  std::scoped_lock lock(s.mutex);
  s.append(ts, value);
}

void Store::insert(std::span<const SensorReading> readings) {
  Series* cur = nullptr;
  std::unique_lock<std::mutex> lock;
  for (const auto& r : readings) {
    if (!cur || cur->sid != r.sid) {
      if (lock.owns_lock())
        lock.unlock();
      cur = &series_for(r.sid);
      lock = std::unique_lock(cur->mutex);
    }
    cur->append(r.timestamp, r.value);
  }
}

std::vector<RawPoint> Store::query(SensorId sid, std::uint64_t t0, std::uint64_t t1) const {
  if (t1 <= t0)
    return {};
  auto* s = find_series(sid);
  if (!s)
    return {};
  std::scoped_lock lock(s->mutex);
  return s->visible(t0, t1);
}

std::optional<RawPoint> Store::latest(SensorId sid) const {
  auto points = query(sid, 0, UINT64_MAX);
  if (points.empty())
    return std::nullopt;
  return points.back();
}

std::uint64_t Store::delete_before(std::uint64_t ts) {
  std::uint64_t removed = 0;
  for (auto sid : series())
    removed += delete_before(sid, ts);
  return removed;
}

std::uint64_t Store::delete_before(SensorId sid, std::uint64_t ts) {
  auto* s = find_series(sid);
  if (!s)
    return 0;
  std::scoped_lock lock(s->mutex);
  return s->delete_before(ts);
}

void Store::compact() {
  for (auto sid : series()) {
    auto* s = find_series(sid);
    std::scoped_lock lock(s->mutex);
    s->compact();
  }
}

void Store::flush() {
  std::shared_lock lock(mutex_);
  for (auto& [sid, s] : series_) {
    std::scoped_lock slock(s->mutex);
    s->flush();
  }
}

std::vector<SensorId> Store::series() const {
  std::shared_lock lock(mutex_);
  std::vector<SensorId> out;
  out.reserve(series_.size());
  for (const auto& [sid, s] : series_)
    out.push_back(sid);
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t Store::disk_bytes() const {
  std::uint64_t total = 0;
  for (const auto& entry : fs::recursive_directory_iterator(cfg_.root))
    if (entry.is_regular_file())
      total += entry.file_size();
  return total;
}

void Store::simulate_crash() {
  std::scoped_lock lock(mutex_);
  for (auto& [sid, s] : series_) {
    std::scoped_lock slock(s->mutex);
    s->close_fd();
  }
  series_.clear();
  crashed_ = true;
}

} // namespace shv
