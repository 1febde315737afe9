#pragma once

// Property-tree configuration files shared by the pusher, the collect agent
// and the metadata store.
//
//   entry := key [value] [ '{' entry* '}' ]
//
// The value runs to the end of the line, a ';', or a brace. '#' starts a
// comment. Values may be double-quoted, in which case `\"` and `\\` escape.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace shv {

class PropertyTree {
public:
  std::string key;
  std::string value;
  std::vector<PropertyTree> children;

  /// Parses a whole document into the children of an unnamed root.
  /// Throws Error{config_error} with the offending line.
  static PropertyTree parse(std::string_view text);
  static PropertyTree load(const std::filesystem::path& path);

  /// First child with this key.
  const PropertyTree* find(std::string_view child_key) const;
  std::vector<const PropertyTree*> all(std::string_view child_key) const;

  std::optional<std::string> get(std::string_view child_key) const;
  std::string get_or(std::string_view child_key, std::string fallback) const;
  /// Throws Error{config_error} on a missing key.
  std::string require(std::string_view child_key) const;

  std::optional<std::int64_t> get_int(std::string_view child_key) const;
  std::optional<double> get_double(std::string_view child_key) const;
  /// Durations: bare integers are milliseconds; `ns`, `us`, `ms`, `s` suffixes accepted.
  std::optional<std::uint64_t> get_duration_ns(std::string_view child_key) const;

  PropertyTree& add(std::string child_key, std::string child_value = {});

  /// Renders a document that parse() reads back to an equal tree.
  std::string serialize() const;

  bool operator==(const PropertyTree&) const = default;
};

/// Throws Error{config_error}.
std::uint64_t parse_duration_ns(std::string_view text);

} // namespace shv
