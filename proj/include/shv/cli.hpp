#pragma once

// Command-line tools. Each entry point takes the arguments after the program
// name and returns the exit code: 0 ok, 1 usage error, 2 runtime error.
// Data goes to `out`, diagnostics to `err`.

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace shv::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 1;
inline constexpr int exit_runtime = 2;

using Args = std::vector<std::string>;

int config_main(const Args& args, std::ostream& out, std::ostream& err);
int query_main(const Args& args, std::ostream& out, std::ostream& err);
int csvimport_main(const Args& args, std::ostream& out, std::ostream& err);
/// Daemons run until SIGINT or SIGTERM.
int pusher_main(const Args& args, std::ostream& out, std::ostream& err);
int agent_main(const Args& args, std::ostream& out, std::ostream& err);
int bench_main(const Args& args, std::ostream& out, std::ostream& err);

/// Integer nanoseconds, or RFC 3339 when the text contains '-' (a leading
/// minus sign is not a timestamp). Throws Error{bad_timestamp}.
std::uint64_t parse_timestamp(std::string_view text);

/// --store, else $SHV_STORE, else ./shv-data.
std::filesystem::path store_root(const std::string& flag);

} // namespace shv::cli
