#include "shv/model.hpp"

#include "shv/error.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <fstream>
#include <mutex>
#include <sstream>

namespace shv {

namespace {

[[noreturn]] void malformed(std::string_view text, std::string_view why) {
  throw Error(Errc::malformed_topic,
              "malformed topic '" + std::string(text) + "': " + std::string(why));
}

} // namespace

// -- Topic ------------------------------------------------------------------

bool Topic::valid_component(std::string_view c) {
  if (c.empty())
    return false;
  for (char ch : c) {
    bool ok = (ch >= 'A' && ch <= 'Z') || (ch >= 'a' && ch <= 'z') ||
              (ch >= '0' && ch <= '9') || ch == '_' || ch == '.' || ch == '-';
    if (!ok)
      return false;
  }
  return true;
}

Topic::Topic(std::vector<std::string> components)
  : components_(std::move(components)) {
  if (components_.empty() || components_.size() > max_topic_levels)
    malformed(str(), "need 1 to 8 components");
  for (const auto& c : components_)
    if (!valid_component(c))
      malformed(str(), "bad component '" + c + "'");
  if (str().size() > max_topic_bytes)
    malformed(str(), "longer than 255 bytes");
}

Topic Topic::parse(std::string_view text) {
  if (text.size() > max_topic_bytes)
    malformed(text, "longer than 255 bytes");
  if (text.empty() || text.front() != '/')
    malformed(text, "missing leading slash");
  std::vector<std::string> parts;
  std::size_t pos = 1;
  while (true) {
    auto next = text.find('/', pos);
    auto part = text.substr(pos, next == std::string_view::npos ? std::string_view::npos
                                                                 : next - pos);
    if (part.empty())
      malformed(text, "empty component");
    if (!valid_component(part))
      malformed(text, "bad character in '" + std::string(part) + "'");
    parts.emplace_back(part);
    if (parts.size() > max_topic_levels)
      malformed(text, "more than 8 components");
    if (next == std::string_view::npos)
      break;
    pos = next + 1;
  }
  Topic t;
  t.components_ = std::move(parts);
  return t;
}

std::string Topic::str() const {
  std::string out;
  for (const auto& c : components_) {
    out += '/';
    out += c;
  }
  return out;
}

Topic Topic::operator/(const Topic& suffix) const {
  auto parts = components_;
  parts.insert(parts.end(), suffix.components_.begin(), suffix.components_.end());
  return Topic(std::move(parts));
}

Topic Topic::operator/(std::string_view component) const {
  auto parts = components_;
  parts.emplace_back(component);
  return Topic(std::move(parts));
}

// -- SensorId ---------------------------------------------------------------

SensorId SensorId::from_levels(const std::array<std::uint16_t, max_topic_levels>& levels) {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;
  for (std::size_t i = 0; i < 4; ++i)
    hi = (hi << 16) | levels[i];
  for (std::size_t i = 4; i < 8; ++i)
    lo = (lo << 16) | levels[i];
  return {hi, lo};
}

std::uint16_t SensorId::level(std::size_t i) const {
  auto word = i < 4 ? hi_ : lo_;
  auto shift = 48 - 16 * (i % 4);
  return static_cast<std::uint16_t>(word >> shift);
}

std::array<std::uint16_t, max_topic_levels> SensorId::levels() const {
  std::array<std::uint16_t, max_topic_levels> out{};
  for (std::size_t i = 0; i < max_topic_levels; ++i)
    out[i] = level(i);
  return out;
}

std::size_t SensorId::depth() const {
  std::size_t n = 0;
  while (n < max_topic_levels && level(n) != 0)
    ++n;
  return n;
}

std::string SensorId::hex() const {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(32, '0');
  for (int i = 0; i < 16; ++i) {
    out[15 - i] = digits[(hi_ >> (4 * i)) & 0xf];
    out[31 - i] = digits[(lo_ >> (4 * i)) & 0xf];
  }
  return out;
}

std::optional<SensorId> SensorId::from_hex(std::string_view hex) {
  if (hex.size() != 32)
    return std::nullopt;
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;
  auto r1 = std::from_chars(hex.data(), hex.data() + 16, hi, 16);
  auto r2 = std::from_chars(hex.data() + 16, hex.data() + 32, lo, 16);
  if (r1.ec != std::errc{} || r1.ptr != hex.data() + 16 || r2.ec != std::errc{} ||
      r2.ptr != hex.data() + 32)
    return std::nullopt;
  return SensorId{hi, lo};
}

// -- LevelDictionary --------------------------------------------------------

LevelDictionary::LevelDictionary(const LevelDictionary& other) {
  std::shared_lock lock(other.mutex_);
  levels_ = other.levels_;
  generation_ = other.generation_;
}

LevelDictionary& LevelDictionary::operator=(const LevelDictionary& other) {
  if (this == &other)
    return *this;
  std::scoped_lock lock(mutex_);
  std::shared_lock other_lock(other.mutex_);
  levels_ = other.levels_;
  generation_ = other.generation_;
  return *this;
}

std::optional<SensorId> LevelDictionary::find(const Topic& topic) const {
  std::shared_lock lock(mutex_);
  std::array<std::uint16_t, max_topic_levels> fields{};
  const auto& parts = topic.components();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto it = levels_[i].ordinals.find(parts[i]);
    if (it == levels_[i].ordinals.end())
      return std::nullopt;
    fields[i] = it->second;
  }
  return SensorId::from_levels(fields);
}

std::uint16_t LevelDictionary::lookup_or_insert(std::size_t level, const std::string& name) {
  auto& lv = levels_[level];
  auto [it, inserted] = lv.ordinals.try_emplace(name, 0);
  if (inserted) {
    lv.names.push_back(name);
    it->second = static_cast<std::uint16_t>(lv.names.size());
    ++generation_;
  }
  return it->second;
}

SensorId LevelDictionary::encode(const Topic& topic) {
  if (topic.empty())
    throw Error(Errc::malformed_topic, "cannot encode an empty topic");
  if (auto sid = find(topic))
    return *sid;
  std::scoped_lock lock(mutex_);
  const auto& parts = topic.components();
  // Check capacity first so a failed registration leaves no partial state.
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& lv = levels_[i];
    if (!lv.ordinals.contains(parts[i]) && lv.names.size() >= 65535)
      throw Error(Errc::level_exhausted,
                  "level " + std::to_string(i) + " has 65535 names registered");
  }
  std::array<std::uint16_t, max_topic_levels> fields{};
  for (std::size_t i = 0; i < parts.size(); ++i)
    fields[i] = lookup_or_insert(i, parts[i]);
  return SensorId::from_levels(fields);
}

Topic LevelDictionary::decode(SensorId sid) const {
  auto fields = sid.levels();
  std::size_t depth = 0;
  while (depth < max_topic_levels && fields[depth] != 0)
    ++depth;
  for (std::size_t i = depth; i < max_topic_levels; ++i)
    if (fields[i] != 0)
      throw Error(Errc::noncontiguous_levels,
                  "sid " + sid.hex() + " has a populated level after an absent one");
  if (depth == 0)
    throw Error(Errc::unknown_ordinal, "sid " + sid.hex() + " has no levels");
  std::shared_lock lock(mutex_);
  std::vector<std::string> parts;
  parts.reserve(depth);
  for (std::size_t i = 0; i < depth; ++i) {
    const auto& names = levels_[i].names;
    if (fields[i] > names.size())
      throw Error(Errc::unknown_ordinal, "ordinal " + std::to_string(fields[i]) +
                                             " not registered at level " + std::to_string(i));
    parts.push_back(names[fields[i] - 1]);
  }
  return Topic(std::move(parts));
}

std::uint64_t LevelDictionary::generation() const {
  std::shared_lock lock(mutex_);
  return generation_;
}

std::size_t LevelDictionary::level_size(std::size_t level) const {
  std::shared_lock lock(mutex_);
  return levels_.at(level).names.size();
}

std::string LevelDictionary::serialize() const {
  std::shared_lock lock(mutex_);
  std::string out;
  for (std::size_t level = 0; level < max_topic_levels; ++level) {
    const auto& names = levels_[level].names;
    for (std::size_t i = 0; i < names.size(); ++i) {
      out += std::to_string(level);
      out += '\t';
      out += std::to_string(i + 1);
      out += '\t';
      out += names[i];
      out += '\n';
    }
  }
  return out;
}

LevelDictionary LevelDictionary::deserialize(std::string_view text) {
  LevelDictionary dict;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto eol = text.find('\n');
    auto line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    if (line.empty())
      continue;
    auto bad = [&] {
      return Error(Errc::bad_store, "dictionary line " + std::to_string(line_no) + " malformed");
    };
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos)
      throw bad();
    std::size_t level = 0;
    std::size_t ordinal = 0;
    if (std::from_chars(line.data(), line.data() + t1, level).ec != std::errc{} ||
        std::from_chars(line.data() + t1 + 1, line.data() + t2, ordinal).ec != std::errc{})
      throw bad();
    auto name = line.substr(t2 + 1);
    if (level >= max_topic_levels || !Topic::valid_component(name))
      throw bad();
    auto& lv = dict.levels_[level];
    // Ordinals must be dense and ascending for the bijection to survive.
    if (ordinal != lv.names.size() + 1 || lv.ordinals.contains(std::string(name)))
      throw bad();
    lv.names.emplace_back(name);
    lv.ordinals.emplace(std::string(name), static_cast<std::uint16_t>(ordinal));
    ++dict.generation_;
  }
  return dict;
}

void LevelDictionary::save(const std::filesystem::path& path) const {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << serialize();
    if (!out)
      throw Error(Errc::io_failure, "cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw Error(Errc::io_failure, "cannot rename to " + path.string() + ": " + ec.message());
}

LevelDictionary LevelDictionary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    return {};
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

// -- Units ------------------------------------------------------------------

std::string_view dimension_name(Dimension d) {
  switch (d) {
    case Dimension::power: return "power";
    case Dimension::energy: return "energy";
    case Dimension::temperature: return "temperature";
    case Dimension::time: return "time";
    case Dimension::bytes: return "bytes";
    case Dimension::dimensionless: return "dimensionless";
    case Dimension::compound: return "compound";
  }
  return "?";
}

const std::vector<Unit>& unit_registry() {
  static const std::vector<Unit> registry = {
    {"W", Dimension::power, 1.0},
    {"mW", Dimension::power, 1e-3},
    {"kW", Dimension::power, 1e3},
    {"MW", Dimension::power, 1e6},
    {"J", Dimension::energy, 1.0},
    {"kJ", Dimension::energy, 1e3},
    {"Wh", Dimension::energy, 3600.0},
    {"\xC2\xB0" "C", Dimension::temperature, 1.0},
    {"s", Dimension::time, 1.0},
    {"ms", Dimension::time, 1e-3},
    {"us", Dimension::time, 1e-6},
    {"ns", Dimension::time, 1e-9},
    {"B", Dimension::bytes, 1.0},
    {"KB", Dimension::bytes, 1e3},
    {"MB", Dimension::bytes, 1e6},
    {"GB", Dimension::bytes, 1e9},
    {"", Dimension::dimensionless, 1.0},
  };
  return registry;
}

const Unit& unit_by_symbol(std::string_view symbol) {
  if (symbol == "C" || symbol == "degC")
    symbol = "\xC2\xB0" "C";
  for (const auto& u : unit_registry())
    if (u.symbol == symbol)
      return u;
  throw Error(Errc::unknown_unit, "unknown unit '" + std::string(symbol) + "'");
}

const Unit& base_unit(Dimension d) {
  for (const auto& u : unit_registry())
    if (u.dimension == d && u.factor == 1.0)
      return u;
  return unit_by_symbol("");
}

const Unit* find_unit(Dimension d, double factor) {
  for (const auto& u : unit_registry())
    if (u.dimension == d && u.factor == factor)
      return &u;
  return nullptr;
}

double convert(double value, const Unit& from, const Unit& to) {
  if (from.dimension != to.dimension)
    throw Error(Errc::dimension_mismatch,
                "cannot convert " + std::string(dimension_name(from.dimension)) + " '" +
                    from.symbol + "' to " + std::string(dimension_name(to.dimension)) +
                    " '" + to.symbol + "'");
  if (from.factor == to.factor)
    return value;
  // Registry factors are integers or reciprocals of integers, so the ratio
  // is an exact fraction; the extended intermediate keeps this to a single
  // rounding and makes u -> v -> u exact to within one ulp.
  auto as_fraction = [](double f) -> std::pair<std::uint64_t, std::uint64_t> {
    if (f >= 1.0)
      return {static_cast<std::uint64_t>(f), 1};
    return {1, static_cast<std::uint64_t>(std::llround(1.0 / f))};
  };
  auto [pf, qf] = as_fraction(from.factor);
  auto [pt, qt] = as_fraction(to.factor);
  std::uint64_t num = pf * qt;
  std::uint64_t den = qf * pt;
  auto g = std::gcd(num, den);
  num /= g;
  den /= g;
  return static_cast<double>(static_cast<long double>(value) * num / den);
}

void SensorMetadata::validate() const {
  if (scale == 0.0)
    throw Error(Errc::invalid_metadata, topic.str() + ": scale must be nonzero");
  if (interval_ns == 0)
    throw Error(Errc::invalid_metadata, topic.str() + ": interval must be positive");
}

} // namespace shv
