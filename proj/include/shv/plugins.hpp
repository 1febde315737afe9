#pragma once

// Data-source plugins hosted by the pusher. A plugin owns groups of sensors;
// all sensors of a group are read together at one tick.
//
// Config blocks (property-tree grammar):
//
//   plugin tester { group g1 { interval 1000; sensors 100 } }
//   plugin procfile {
//     entity host { base /proc }
//     group mem { interval 1000; entity host; path meminfo; type meminfo }
//     group cpu { interval 1000; entity host; path stat; type procstat; sensor cpu.user }
//   }
//   plugin sysfile { group t { interval 1000; sensor temp0 { path /sys/.../temp } } }
//
// A block may instead name a separate file with `config <file>` whose
// top-level entries are the block's body; reload re-reads it.

#include "shv/model.hpp"
#include "shv/ptree.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace shv {

class Plugin;
std::unique_ptr<Plugin> make_plugin(const PropertyTree& block, const PropertyTree& body,
                                    const Topic& prefix);

struct SensorDef {
  std::string name;
  Topic topic;
  bool active = true;
  std::string source;  // file path (sysfile) or metric name (procfile)
};

struct GroupDef {
  std::string name;
  std::uint64_t interval_ns = 1'000'000'000;
  std::vector<SensorDef> sensors;
  std::string entity;
  std::filesystem::path path;  // procfile source file
  std::string format;          // procfile parser
};

struct EntityDef {
  std::string name;
  std::filesystem::path base;
};

class Plugin {
public:
  virtual ~Plugin() = default;

  const std::string& name() const { return name_; }
  virtual std::string_view kind() const = 0;
  const std::vector<GroupDef>& groups() const { return groups_; }

  /// One slot per sensor of the group, in order; nullopt marks a failed read.
  virtual std::vector<std::optional<std::int64_t>> read_group(std::size_t group) = 0;

protected:
  std::string name_;
  std::vector<GroupDef> groups_;
  std::map<std::string, EntityDef> entities_;

  std::filesystem::path resolve(const GroupDef& g, const std::filesystem::path& p) const;

  friend std::unique_ptr<Plugin> make_plugin(const PropertyTree& block, const PropertyTree& body,
                                             const Topic& prefix);
};

// make_plugin(block, body, prefix): builds a plugin from its `plugin <kind>`
// block. `body` holds the groups (the block itself, or the contents of its
// `config` file). Throws Error{config_error}.

/// Resolves `config <file>` relative to `config_dir` if present.
PropertyTree plugin_body(const PropertyTree& block, const std::filesystem::path& config_dir);

using ProcSnapshot = std::map<std::string, std::int64_t>;

ProcSnapshot parse_meminfo(std::string_view text);
ProcSnapshot parse_vmstat(std::string_view text);
ProcSnapshot parse_procstat(std::string_view text);
ProcSnapshot parse_proc(std::string_view format, std::string_view text);

/// Leading decimal integer of a file. Throws Error{unreadable} or
/// Error{not_numeric}.
std::int64_t sysfile_read(const std::filesystem::path& path);

} // namespace shv
