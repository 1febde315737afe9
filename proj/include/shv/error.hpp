#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace shv {

enum class Errc {
  // model
  malformed_topic,
  level_exhausted,
  unknown_ordinal,
  noncontiguous_levels,
  dimension_mismatch,
  unknown_unit,
  invalid_metadata,
  // wire
  topic_too_long,
  payload_too_large,
  protocol_violation,
  bad_length,
  bad_payload,
  // pusher / plugins
  plugin_stopped,
  unknown_plugin,
  reload_failed,
  unknown_sensor,
  empty_window,
  empty_cache,
  unreadable,
  not_numeric,
  broker_unreachable,
  config_error,
  // storage
  io_failure,
  bad_store,
  // vsensor
  syntax_error,
  unknown_operand,
  cycle_detected,
  out_of_range,
  division_by_zero,
  // querylib
  insufficient_data,
  bad_header,
  bad_row,
  bad_timestamp,
  // collect agent
  bind_failure,
  // bench
  degenerate_input,
  invalid_model,
  harness_failure,
};

std::string_view errc_name(Errc code);

/// Single exception type for the whole library; callers branch on code().
class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& what)
    : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

} // namespace shv
