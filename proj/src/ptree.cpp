#include "shv/ptree.hpp"

#include "shv/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace shv {

namespace {

class Parser {
public:
  explicit Parser(std::string_view text) : text_(text) {}

  void parse_entries(PropertyTree& parent, bool nested) {
    while (true) {
      skip_separators();
      if (at_end()) {
        if (nested)
          fail("unterminated block");
        return;
      }
      if (peek() == '}') {
        if (!nested)
          fail("unexpected '}'");
        ++pos_;
        return;
      }
      if (peek() == '{')
        fail("block without a key");
      auto& entry = parent.children.emplace_back();
      entry.key = read_key();
      skip_blanks();
      if (!at_end() && peek() != '\n' && peek() != ';' && peek() != '{' && peek() != '}' &&
          peek() != '#')
        entry.value = read_value();
      if (next_significant_is_brace()) {
        ++pos_;
        parse_entries(entry, true);
      }
    }
  }

private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  [[noreturn]] void fail(std::string_view why) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i)
      if (text_[i] == '\n')
        ++line;
    throw Error(Errc::config_error, "line " + std::to_string(line) + ": " + std::string(why));
  }

  void skip_comment() {
    while (!at_end() && peek() != '\n')
      ++pos_;
  }

  void skip_blanks() {
    while (!at_end() && (peek() == ' ' || peek() == '\t' || peek() == '\r'))
      ++pos_;
  }

  void skip_separators() {
    while (!at_end()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ';')
        ++pos_;
      else if (c == '#')
        skip_comment();
      else
        break;
    }
  }

  bool next_significant_is_brace() {
    auto save = pos_;
    while (!at_end()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n')
        ++pos_;
      else if (c == '#')
        skip_comment();
      else
        break;
    }
    if (!at_end() && peek() == '{')
      return true;
    pos_ = save;
    return false;
  }

  std::string read_quoted() {
    ++pos_;  // opening quote
    std::string out;
    while (true) {
      if (at_end() || peek() == '\n')
        fail("unterminated string");
      char c = text_[pos_++];
      if (c == '"')
        return out;
      if (c == '\\' && !at_end() && (peek() == '"' || peek() == '\\')) {
        out += text_[pos_++];
        continue;
      }
      out += c;
    }
  }

  std::string read_key() {
    if (peek() == '"')
      return read_quoted();
    auto start = pos_;
    while (!at_end()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ';' || c == '{' ||
          c == '}' || c == '#')
        break;
      ++pos_;
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string read_value() {
    if (peek() == '"') {
      auto v = read_quoted();
      skip_blanks();
      if (!at_end() && peek() != '\n' && peek() != ';' && peek() != '{' && peek() != '}' &&
          peek() != '#')
        fail("text after quoted value");
      return v;
    }
    auto start = pos_;
    while (!at_end()) {
      char c = peek();
      if (c == '\n' || c == ';' || c == '{' || c == '}' || c == '#')
        break;
      ++pos_;
    }
    auto v = text_.substr(start, pos_ - start);
    while (!v.empty() && (v.back() == ' ' || v.back() == '\t' || v.back() == '\r'))
      v.remove_suffix(1);
    return std::string(v);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

bool needs_quotes(std::string_view v) {
  if (v.empty())
    return true;
  if (v.front() == ' ' || v.front() == '\t' || v.back() == ' ' || v.back() == '\t' ||
      v.front() == '"')
    return true;
  for (char c : v)
    if (c == ';' || c == '{' || c == '}' || c == '#' || c == '\n' || c == '"')
      return true;
  return false;
}

std::string quote(std::string_view v) {
  std::string out = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\')
      out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

void render(const PropertyTree& node, int depth, std::string& out) {
  out.append(static_cast<std::size_t>(depth) * 2, ' ');
  out += needs_quotes(node.key) ? quote(node.key) : node.key;
  if (!node.value.empty() || node.children.empty()) {
    out += ' ';
    out += needs_quotes(node.value) ? quote(node.value) : node.value;
  }
  if (!node.children.empty()) {
    out += " {\n";
    for (const auto& child : node.children)
      render(child, depth + 1, out);
    out.append(static_cast<std::size_t>(depth) * 2, ' ');
    out += "}";
  }
  out += '\n';
}

} // namespace

PropertyTree PropertyTree::parse(std::string_view text) {
  PropertyTree root;
  Parser parser(text);
  parser.parse_entries(root, false);
  return root;
}

PropertyTree PropertyTree::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(Errc::config_error, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse(buf.str());
  } catch (const Error& e) {
    throw Error(Errc::config_error, path.string() + ": " + e.what());
  }
}

const PropertyTree* PropertyTree::find(std::string_view child_key) const {
  for (const auto& c : children)
    if (c.key == child_key)
      return &c;
  return nullptr;
}

std::vector<const PropertyTree*> PropertyTree::all(std::string_view child_key) const {
  std::vector<const PropertyTree*> out;
  for (const auto& c : children)
    if (c.key == child_key)
      out.push_back(&c);
  return out;
}

std::optional<std::string> PropertyTree::get(std::string_view child_key) const {
  if (auto* c = find(child_key))
    return c->value;
  return std::nullopt;
}

std::string PropertyTree::get_or(std::string_view child_key, std::string fallback) const {
  if (auto v = get(child_key))
    return *v;
  return fallback;
}

std::string PropertyTree::require(std::string_view child_key) const {
  if (auto v = get(child_key))
    return *v;
  throw Error(Errc::config_error,
              "'" + key + " " + value + "' is missing '" + std::string(child_key) + "'");
}

std::optional<std::int64_t> PropertyTree::get_int(std::string_view child_key) const {
  auto v = get(child_key);
  if (!v)
    return std::nullopt;
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc{} || ptr != v->data() + v->size())
    throw Error(Errc::config_error,
                "'" + std::string(child_key) + "' expects an integer, got '" + *v + "'");
  return out;
}

std::optional<double> PropertyTree::get_double(std::string_view child_key) const {
  auto v = get(child_key);
  if (!v)
    return std::nullopt;
  double out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc{} || ptr != v->data() + v->size())
    throw Error(Errc::config_error,
                "'" + std::string(child_key) + "' expects a number, got '" + *v + "'");
  return out;
}

std::optional<std::uint64_t> PropertyTree::get_duration_ns(std::string_view child_key) const {
  auto v = get(child_key);
  if (!v)
    return std::nullopt;
  return parse_duration_ns(*v);
}

PropertyTree& PropertyTree::add(std::string child_key, std::string child_value) {
  auto& c = children.emplace_back();
  c.key = std::move(child_key);
  c.value = std::move(child_value);
  return c;
}

std::string PropertyTree::serialize() const {
  std::string out;
  for (const auto& child : children)
    render(child, 0, out);
  return out;
}

std::uint64_t parse_duration_ns(std::string_view text) {
  std::uint64_t n = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
  if (ec != std::errc{} || ptr == text.data())
    throw Error(Errc::config_error, "bad duration '" + std::string(text) + "'");
  std::string_view suffix(ptr, static_cast<std::size_t>(text.data() + text.size() - ptr));
  std::uint64_t mult = 0;
  if (suffix.empty() || suffix == "ms")
    mult = 1'000'000;
  else if (suffix == "ns")
    mult = 1;
  else if (suffix == "us")
    mult = 1'000;
  else if (suffix == "s")
    mult = 1'000'000'000;
  else
    throw Error(Errc::config_error, "bad duration unit in '" + std::string(text) + "'");
  return n * mult;
}

} // namespace shv
