#pragma once

// Publish-only MQTT 3.1.1 subset spoken between pushers and collect agents,
// and the 16-byte reading record layout carried in Publish payloads.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace shv::wire {

inline constexpr std::size_t max_payload_bytes = 256 * 1024;
inline constexpr std::size_t record_bytes = 16;
inline constexpr std::uint16_t default_port = 1883;
inline constexpr std::uint16_t default_keep_alive_s = 60;

using Bytes = std::vector<std::uint8_t>;

struct Connect {
  std::string client_id;
  std::uint16_t keep_alive_s = default_keep_alive_s;
  bool operator==(const Connect&) const = default;
};

struct ConnAck {
  std::uint8_t code = 0;
  bool operator==(const ConnAck&) const = default;
};

struct Publish {
  std::string topic;
  Bytes payload;
  bool operator==(const Publish&) const = default;
};

struct PingReq {
  bool operator==(const PingReq&) const = default;
};
struct PingResp {
  bool operator==(const PingResp&) const = default;
};
struct Disconnect {
  bool operator==(const Disconnect&) const = default;
};

using Packet = std::variant<Connect, ConnAck, Publish, PingReq, PingResp, Disconnect>;

/// Throws Error{topic_too_long} or Error{payload_too_large}.
Bytes encode_packet(const Packet& packet);
void encode_packet(const Packet& packet, Bytes& out);

struct Decoded {
  Packet packet;
  std::size_t consumed = 0;
};

/// Decodes one packet from the front of `buf`. Returns nullopt when more
/// bytes are needed; nothing is consumed in that case. Throws
/// Error{protocol_violation} when the session must be closed.
std::optional<Decoded> decode_packet(std::span<const std::uint8_t> buf);

struct Record {
  std::uint64_t timestamp = 0;
  std::int64_t value = 0;
  bool operator==(const Record&) const = default;
};

/// Throws Error{bad_payload} on an empty or timestamp-decreasing list.
Bytes encode_payload(std::span<const Record> records);
void append_record(Bytes& out, const Record& r);
/// Throws Error{bad_length} unless the size is a multiple of 16.
std::vector<Record> decode_payload(std::span<const std::uint8_t> bytes);

} // namespace shv::wire
