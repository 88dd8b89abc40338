#include "circus/actor/error_manager.hpp"

#include "circus/error.hpp"

namespace circus::actor {

using nlohmann::json;

std::string_view to_string(Severity s) noexcept {
  switch (s) {
    case Severity::info: return "info";
    case Severity::warning: return "warning";
    case Severity::error: return "error";
    case Severity::fatal: return "fatal";
  }
  return "";
}

Severity severity_from_string(std::string_view s) {
  for (auto v : {Severity::info, Severity::warning, Severity::error, Severity::fatal}) {
    if (to_string(v) == s) return v;
  }
  fail(Errc::invalid_argument, "unknown severity " + std::string(s));
}

json record_to_json(const ErrorRecord& r) {
  return {{"id", r.id},
          {"source", {{"node", r.source.node}, {"service", r.source.service}}},
          {"severity", to_string(r.severity)},
          {"code", r.code},
          {"text", r.text},
          {"at", encode_timestamp_json(r.at)},
          {"acknowledged", r.acknowledged}};
}

ErrorRecord record_from_json(const json& j) {
  try {
    ErrorRecord r;
    r.id = j.at("id").get<std::uint64_t>();
    r.source = {j.at("source").at("node").get<std::string>(), j.at("source").at("service").get<std::string>()};
    r.severity = severity_from_string(j.at("severity").get<std::string>());
    r.code = j.at("code").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.at = decode_timestamp_json(j.at("at"));
    r.acknowledged = j.at("acknowledged").get<bool>();
    return r;
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("error record: ") + e.what());
  }
}

AtomPayload record_to_payload(const ErrorRecord& r) {
  // The id does not fit I32, so it travels as a decimal string.
  return make_cluster({{"id", make_scalar(std::to_string(r.id))},
                       {"node", make_scalar(r.source.node)},
                       {"service", make_scalar(r.source.service)},
                       {"severity", make_scalar(std::string(to_string(r.severity)))},
                       {"code", make_scalar(r.code)},
                       {"text", make_scalar(r.text)},
                       {"at_sec", make_scalar(std::to_string(r.at.epoch_seconds))},
                       {"at_nsec", make_scalar(std::to_string(r.at.epoch_nanos))},
                       {"acknowledged", make_scalar(r.acknowledged)}});
}

ErrorRecord record_from_payload(const AtomPayload& p) {
  auto str = [&](const char* key) -> const std::string& {
    const auto* f = p.find(key);
    if (!f) fail(Errc::schema_violation, std::string("error record payload lacks ") + key);
    return f->as_string();
  };
  ErrorRecord r;
  r.id = std::stoull(str("id"));
  r.source = {str("node"), str("service")};
  r.severity = severity_from_string(str("severity"));
  r.code = str("code");
  r.text = str("text");
  r.at = make_timestamp(std::stoull(str("at_sec")), static_cast<std::uint32_t>(std::stoul(str("at_nsec"))));
  const auto* ack = p.find("acknowledged");
  r.acknowledged = ack && ack->as_double() != 0.0;
  return r;
}

std::uint16_t ErrorStore::node_tag(std::string_view node_name) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : node_name) {
    h ^= c;
    h *= 16777619u;
  }
  return static_cast<std::uint16_t>(h & 0xfff);
}

ErrorStore::ErrorStore(std::string node_name) : node_(std::move(node_name)), tag_(node_tag(node_)) {}

ErrorRecord ErrorStore::report(ErrorRecord rec) {
  std::lock_guard lk(mu_);
  ++lamport_;
  rec.id = (lamport_ << 12) | tag_;
  if (rec.at.display.empty()) rec.at = timestamp_now();
  records_[rec.id] = rec;
  return rec;
}

bool ErrorStore::merge(const ErrorRecord& rec) {
  std::lock_guard lk(mu_);
  lamport_ = std::max(lamport_, rec.id >> 12);
  auto [it, inserted] = records_.try_emplace(rec.id, rec);
  if (!inserted && rec.acknowledged) it->second.acknowledged = true;
  return inserted;
}

ErrorRecord ErrorStore::acknowledge(std::uint64_t id) {
  std::lock_guard lk(mu_);
  auto it = records_.find(id);
  if (it == records_.end()) fail(Errc::unknown_id, "no error record " + std::to_string(id));
  it->second.acknowledged = true;
  return it->second;
}

bool ErrorStore::merge_acknowledge(std::uint64_t id) {
  std::lock_guard lk(mu_);
  auto it = records_.find(id);
  if (it == records_.end()) return false;
  it->second.acknowledged = true;
  return true;
}

std::size_t ErrorStore::auto_clear(Severity below) {
  std::lock_guard lk(mu_);
  std::size_t n = 0;
  for (auto it = records_.begin(); it != records_.end();) {
    const auto& r = it->second;
    if (r.acknowledged && r.severity != Severity::fatal && r.severity < below) {
      it = records_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

std::vector<ErrorRecord> ErrorStore::list(const ErrorFilter& filter) const {
  std::lock_guard lk(mu_);
  std::vector<ErrorRecord> out;
  for (const auto& [id, r] : records_) {
    if (filter.min_severity && r.severity < *filter.min_severity) continue;
    if (filter.source_node && r.source.node != *filter.source_node) continue;
    if (filter.code && r.code != *filter.code) continue;
    if (filter.unacknowledged_only && r.acknowledged) continue;
    out.push_back(r);
  }
  return out;
}

std::size_t ErrorStore::size() const {
  std::lock_guard lk(mu_);
  return records_.size();
}

}  // namespace circus::actor
