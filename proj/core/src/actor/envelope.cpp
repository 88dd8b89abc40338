#include "circus/actor/envelope.hpp"

#include "circus/error.hpp"

namespace circus::actor {

using nlohmann::json;

bool is_system_kind(std::string_view kind) noexcept { return kind.substr(0, 4) == "sys/"; }

DataAtom make_payload(std::string name, AtomPayload data) {
  return DataAtom{std::move(name), timestamp_now(), std::move(data)};
}

namespace {

json address_json(const Address& a) { return {{"node", a.node}, {"service", a.service}}; }

Address address_from(const json& j) { return {j.at("node").get<std::string>(), j.at("service").get<std::string>()}; }

}  // namespace

json envelope_to_json(const Envelope& env) {
  json j{{"id", env.id},
         {"src", address_json(env.src)},
         {"dst", address_json(env.dst)},
         {"kind", env.kind},
         {"payload", encode_atom_json(env.payload)},
         {"sent_at", encode_timestamp_json(env.sent_at)}};
  if (env.in_reply_to) j["in_reply_to"] = *env.in_reply_to;
  return j;
}

Envelope envelope_from_json(const json& j) {
  Envelope env;
  try {
    env.id = j.at("id").get<std::uint64_t>();
    env.src = address_from(j.at("src"));
    env.dst = address_from(j.at("dst"));
    env.kind = j.at("kind").get<std::string>();
    if (j.contains("in_reply_to")) env.in_reply_to = j.at("in_reply_to").get<std::uint64_t>();
    env.payload = decode_atom_json(j.at("payload"));
    env.sent_at = decode_timestamp_json(j.at("sent_at"));
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("envelope: ") + e.what());
  }
  if (env.kind.empty()) fail(Errc::schema_violation, "envelope kind is empty");
  return env;
}

std::string encode_frame(const Envelope& env) { return envelope_to_json(env).dump() + "\n"; }

Envelope decode_frame(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(Errc::malformed_document, e.what());
  }
  if (!j.is_object()) fail(Errc::schema_violation, "frame is not an object");
  return envelope_from_json(j);
}

std::int64_t epoch_nanos(const AtomTimestamp& ts) {
  return static_cast<std::int64_t>(ts.epoch_seconds) * 1'000'000'000 + ts.epoch_nanos;
}

}  // namespace circus::actor
