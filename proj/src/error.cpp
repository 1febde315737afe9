#include "shv/error.hpp"

namespace shv {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::malformed_topic: return "MalformedTopic";
    case Errc::level_exhausted: return "LevelExhausted";
    case Errc::unknown_ordinal: return "UnknownOrdinal";
    case Errc::noncontiguous_levels: return "NoncontiguousLevels";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::unknown_unit: return "UnknownUnit";
    case Errc::invalid_metadata: return "InvalidMetadata";
    case Errc::topic_too_long: return "TopicTooLong";
    case Errc::payload_too_large: return "PayloadTooLarge";
    case Errc::protocol_violation: return "ProtocolViolation";
    case Errc::bad_length: return "BadLength";
    case Errc::bad_payload: return "BadPayload";
    case Errc::plugin_stopped: return "PluginStopped";
    case Errc::unknown_plugin: return "UnknownPlugin";
    case Errc::reload_failed: return "ReloadFailed";
    case Errc::unknown_sensor: return "UnknownSensor";
    case Errc::empty_window: return "EmptyWindow";
    case Errc::empty_cache: return "EmptyCache";
    case Errc::unreadable: return "Unreadable";
    case Errc::not_numeric: return "NotNumeric";
    case Errc::broker_unreachable: return "BrokerUnreachable";
    case Errc::config_error: return "ConfigError";
    case Errc::io_failure: return "IoFailure";
    case Errc::bad_store: return "BadStore";
    case Errc::syntax_error: return "SyntaxError";
    case Errc::unknown_operand: return "UnknownOperand";
    case Errc::cycle_detected: return "CycleDetected";
    case Errc::out_of_range: return "OutOfRange";
    case Errc::division_by_zero: return "DivisionByZero";
    case Errc::insufficient_data: return "InsufficientData";
    case Errc::bad_header: return "BadHeader";
    case Errc::bad_row: return "BadRow";
    case Errc::bad_timestamp: return "BadTimestamp";
    case Errc::bind_failure: return "BindFailure";
    case Errc::degenerate_input: return "DegenerateInput";
    case Errc::invalid_model: return "InvalidModel";
    case Errc::harness_failure: return "HarnessFailure";
  }
  return "Unknown";
}

} // namespace shv
