#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "circus/atom.hpp"

namespace circus::actor {

inline constexpr std::string_view kProtocolVersion = "1";
inline constexpr std::uint16_t kDefaultPort = 4462;

struct Address {
  std::string node;
  std::string service;

  auto operator<=>(const Address&) const = default;
  std::string str() const { return node + "/" + service; }
};

/// One bus message. Kinds starting with "sys/" are runtime traffic.
struct Envelope {
  std::uint64_t id = 0;
  Address src;
  Address dst;
  std::string kind;
  DataAtom payload;
  AtomTimestamp sent_at;
  /// Set on replies: id of the request being answered.
  std::optional<std::uint64_t> in_reply_to;
};

bool is_system_kind(std::string_view kind) noexcept;

/// Payload helper: a cluster atom named after the kind.
DataAtom make_payload(std::string name, AtomPayload data = AtomPayload(Cluster{}));

nlohmann::json envelope_to_json(const Envelope& env);
Envelope envelope_from_json(const nlohmann::json& j);
/// Single-line frame including the trailing newline.
std::string encode_frame(const Envelope& env);
/// Throws MalformedDocument or SchemaViolation.
Envelope decode_frame(std::string_view line);

/// Nanoseconds since the UNIX epoch carried by a timestamp.
std::int64_t epoch_nanos(const AtomTimestamp& ts);

}  // namespace circus::actor
