#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "circus/atom.hpp"
#include "circus/pipeline/optimizer.hpp"
#include "circus/script/script.hpp"

namespace circus::orchestration {

inline constexpr const char* kScheduleVersion = "1";
inline constexpr std::size_t kMaxScanDims = 4;

using ScriptLibrary = std::map<std::string, script::ExperimentScript>;

enum class ScanOrder { lexicographic, snake };

struct ScanDim {
  std::string param;
  std::vector<nlohmann::json> values;
};

/// Grid over up to four parameters. The first dimension varies slowest.
/// Snake order reverses a dimension on every other sweep so consecutive
/// points differ in exactly one parameter by one step.
struct ScanSpec {
  std::vector<ScanDim> dims;
  ScanOrder order = ScanOrder::snake;

  std::size_t size() const;
  /// Index into each dimension's value list for enumeration position i.
  std::vector<std::size_t> digits(std::size_t i) const;
  script::ParamValues point(std::size_t i) const;
};

struct ScheduleEntry {
  std::string script;
  script::ParamValues params;
  std::uint32_t repeat = 1;
  std::optional<ScanSpec> scan;
  std::optional<pipeline::FeedbackSpec> feedback;

  /// Scan points, or the feedback budget, or 1.
  std::size_t points() const;
};

struct Schedule {
  std::vector<ScheduleEntry> entries;
  std::string created_by;
  AtomTimestamp created_at;
};

/// Throws SchemaViolation whose message starts with the offending field path,
/// e.g. "entries[0].scan.dims[1].values: must not be empty".
Schedule schedule_from_json(const nlohmann::json& doc);
nlohmann::json schedule_to_json(const Schedule& s);
/// Hash of the entries (not the metadata), used to match persisted monkey
/// state to a schedule.
std::string schedule_hash(const Schedule& s);

/// Checks script references, parameter names and types against a library.
/// Throws SchemaViolation with a field path.
void validate_schedule(const Schedule& s, const ScriptLibrary& library);

}  // namespace circus::orchestration
