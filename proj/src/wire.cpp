#include "shv/wire.hpp"

#include "shv/error.hpp"
#include "shv/model.hpp"

namespace shv::wire {

namespace {

constexpr std::uint8_t type_connect = 1;
constexpr std::uint8_t type_connack = 2;
constexpr std::uint8_t type_publish = 3;
constexpr std::uint8_t type_pingreq = 12;
constexpr std::uint8_t type_pingresp = 13;
constexpr std::uint8_t type_disconnect = 14;

// Largest remaining length we accept: a maximal topic plus a maximal payload.
constexpr std::size_t max_remaining = max_payload_bytes + 2 + 65535;

[[noreturn]] void violation(const std::string& why) {
  throw Error(Errc::protocol_violation, why);
}

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8)
    out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v = (v << 8) | p[i];
  return v;
}

void put_string(Bytes& out, std::string_view s) {
  put_u16(out, static_cast<std::uint16_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

void put_remaining_length(Bytes& out, std::size_t n) {
  do {
    auto byte = static_cast<std::uint8_t>(n % 128);
    n /= 128;
    if (n > 0)
      byte |= 0x80;
    out.push_back(byte);
  } while (n > 0);
}

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> body) : body_(body) {}

  std::size_t left() const { return body_.size() - pos_; }

  std::uint8_t u8() {
    if (left() < 1)
      violation("packet body truncated");
    return body_[pos_++];
  }

  std::uint16_t u16() {
    auto hi = u8();
    auto lo = u8();
    return static_cast<std::uint16_t>((hi << 8) | lo);
  }

  std::string str() {
    auto n = u16();
    if (left() < n)
      violation("string overruns packet body");
    std::string s(reinterpret_cast<const char*>(body_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  Bytes rest() {
    Bytes b(body_.begin() + static_cast<std::ptrdiff_t>(pos_), body_.end());
    pos_ = body_.size();
    return b;
  }

private:
  std::span<const std::uint8_t> body_;
  std::size_t pos_ = 0;
};

} // namespace

void encode_packet(const Packet& packet, Bytes& out) {
  std::visit(
    [&](const auto& p) {
      using T = std::decay_t<decltype(p)>;
      if constexpr (std::is_same_v<T, Connect>) {
        if (p.client_id.size() > 65535)
          violation("client id too long");
        out.push_back(type_connect << 4);
        put_remaining_length(out, 10 + 2 + p.client_id.size());
        put_string(out, "MQTT");
        out.push_back(4);     // protocol level 3.1.1
        out.push_back(0x02);  // clean session
        put_u16(out, p.keep_alive_s);
        put_string(out, p.client_id);
      } else if constexpr (std::is_same_v<T, ConnAck>) {
        out.push_back(type_connack << 4);
        out.push_back(2);
        out.push_back(0);  // session present
        out.push_back(p.code);
      } else if constexpr (std::is_same_v<T, Publish>) {
        if (p.topic.size() > max_topic_bytes)
          throw Error(Errc::topic_too_long,
                      "topic of " + std::to_string(p.topic.size()) + " bytes exceeds 255");
        if (p.payload.size() > max_payload_bytes)
          throw Error(Errc::payload_too_large,
                      "payload of " + std::to_string(p.payload.size()) + " bytes exceeds 256 KiB");
        out.push_back(type_publish << 4);  // QoS 0, no DUP, no RETAIN
        put_remaining_length(out, 2 + p.topic.size() + p.payload.size());
        put_string(out, p.topic);
        out.insert(out.end(), p.payload.begin(), p.payload.end());
      } else if constexpr (std::is_same_v<T, PingReq>) {
        out.push_back(type_pingreq << 4);
        out.push_back(0);
      } else if constexpr (std::is_same_v<T, PingResp>) {
        out.push_back(type_pingresp << 4);
        out.push_back(0);
      } else {
        out.push_back(type_disconnect << 4);
        out.push_back(0);
      }
    },
    packet);
}

Bytes encode_packet(const Packet& packet) {
  Bytes out;
  encode_packet(packet, out);
  return out;
}

std::optional<Decoded> decode_packet(std::span<const std::uint8_t> buf) {
  if (buf.empty())
    return std::nullopt;
  std::uint8_t header = buf[0];
  std::uint8_t type = header >> 4;
  std::uint8_t flags = header & 0x0f;

  switch (type) {
    case type_connect:
    case type_connack:
    case type_pingreq:
    case type_pingresp:
    case type_disconnect:
      if (flags != 0)
        violation("reserved fixed-header flags set");
      break;
    case type_publish:
      if (flags != 0)
        violation("only QoS 0 publish without DUP/RETAIN is supported");
      break;
    default:
      violation("unsupported packet type " + std::to_string(type));
  }

  // Remaining length: at most four 7-bit groups.
  std::size_t remaining = 0;
  std::size_t multiplier = 1;
  std::size_t pos = 1;
  while (true) {
    if (pos >= buf.size())
      return std::nullopt;
    if (pos > 4)
      violation("malformed remaining length");
    std::uint8_t byte = buf[pos++];
    remaining += static_cast<std::size_t>(byte & 0x7f) * multiplier;
    multiplier *= 128;
    if ((byte & 0x80) == 0)
      break;
    if (pos > 4)
      violation("malformed remaining length");
  }
  if (remaining > max_remaining)
    violation("packet of " + std::to_string(remaining) + " bytes exceeds limit");
  if (buf.size() - pos < remaining)
    return std::nullopt;

  Reader body(buf.subspan(pos, remaining));
  Decoded out;
  out.consumed = pos + remaining;

  switch (type) {
    case type_connect: {
      auto proto = body.str();
      auto level = body.u8();
      if (proto != "MQTT" || level != 4)
        violation("unsupported protocol '" + proto + "' level " + std::to_string(level));
      auto connect_flags = body.u8();
      // Wills, usernames and passwords are not part of the subset.
      if ((connect_flags & ~0x02) != 0)
        violation("unsupported connect flags");
      Connect c;
      c.keep_alive_s = body.u16();
      c.client_id = body.str();
      if (body.left() != 0)
        violation("trailing bytes in CONNECT");
      out.packet = std::move(c);
      break;
    }
    case type_connack: {
      if (remaining != 2)
        violation("CONNACK must have 2 body bytes");
      body.u8();
      out.packet = ConnAck{body.u8()};
      break;
    }
    case type_publish: {
      Publish p;
      p.topic = body.str();
      p.payload = body.rest();
      if (p.payload.size() > max_payload_bytes)
        violation("payload exceeds 256 KiB");
      out.packet = std::move(p);
      break;
    }
    case type_pingreq:
    case type_pingresp:
    case type_disconnect:
      if (remaining != 0)
        violation("control packet with a body");
      if (type == type_pingreq)
        out.packet = PingReq{};
      else if (type == type_pingresp)
        out.packet = PingResp{};
      else
        out.packet = Disconnect{};
      break;
  }
  return out;
}

void append_record(Bytes& out, const Record& r) {
  put_u64(out, r.timestamp);
  put_u64(out, static_cast<std::uint64_t>(r.value));
}

Bytes encode_payload(std::span<const Record> records) {
  if (records.empty())
    throw Error(Errc::bad_payload, "payload needs at least one record");
  Bytes out;
  out.reserve(records.size() * record_bytes);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i > 0 && records[i].timestamp < records[i - 1].timestamp)
      throw Error(Errc::bad_payload, "record timestamps must be nondecreasing");
    append_record(out, records[i]);
  }
  return out;
}

std::vector<Record> decode_payload(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % record_bytes != 0)
    throw Error(Errc::bad_length,
                "payload of " + std::to_string(bytes.size()) + " bytes is not a multiple of 16");
  std::vector<Record> out;
  out.reserve(bytes.size() / record_bytes);
  for (std::size_t off = 0; off < bytes.size(); off += record_bytes) {
    Record r;
    r.timestamp = get_u64(bytes.data() + off);
    r.value = static_cast<std::int64_t>(get_u64(bytes.data() + off + 8));
    out.push_back(r);
  }
  return out;
}

} // namespace shv::wire
