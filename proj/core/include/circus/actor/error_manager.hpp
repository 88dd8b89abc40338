#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "circus/actor/envelope.hpp"
#include "circus/atom.hpp"

namespace circus::actor {

enum class Severity { info, warning, error, fatal };
std::string_view to_string(Severity s) noexcept;
Severity severity_from_string(std::string_view s);

struct ErrorRecord {
  std::uint64_t id = 0;
  Address source;
  Severity severity = Severity::error;
  std::string code;
  std::string text;
  AtomTimestamp at;
  bool acknowledged = false;

  bool operator==(const ErrorRecord&) const = default;
};

struct ErrorFilter {
  std::optional<Severity> min_severity;
  std::optional<std::string> source_node;
  std::optional<std::string> code;
  bool unacknowledged_only = false;
};

nlohmann::json record_to_json(const ErrorRecord& r);
ErrorRecord record_from_json(const nlohmann::json& j);
AtomPayload record_to_payload(const ErrorRecord& r);
ErrorRecord record_from_payload(const AtomPayload& p);

/// One replica of the cluster-wide error list. Ids are (lamport << 12) | node
/// tag, so every replica orders records the same way and one source's ids
/// strictly increase.
class ErrorStore {
 public:
  explicit ErrorStore(std::string node_name);

  /// Assigns the id and stores the record; returns the stored copy.
  ErrorRecord report(ErrorRecord rec);
  /// Inserts a record reported on another replica. Returns false if known.
  bool merge(const ErrorRecord& rec);
  /// Throws UnknownId.
  ErrorRecord acknowledge(std::uint64_t id);
  /// Applies a replicated acknowledgement; false when the id is unknown.
  bool merge_acknowledge(std::uint64_t id);
  /// Drops acknowledged records below `severity`; fatal records always stay.
  std::size_t auto_clear(Severity below = Severity::error);

  std::vector<ErrorRecord> list(const ErrorFilter& filter = {}) const;
  std::size_t size() const;

  static std::uint16_t node_tag(std::string_view node_name);

 private:
  std::string node_;
  std::uint16_t tag_;
  mutable std::mutex mu_;
  std::uint64_t lamport_ = 0;
  std::map<std::uint64_t, ErrorRecord> records_;
};

}  // namespace circus::actor
