#pragma once

// Data atoms: the single unit of acquired and monitored data, plus the JSON
// interchange codec used for files on disk and for payloads on the bus.
//
// Document layout (keys sorted lexicographically in every object):
//
//   [ { "<name>": {
//         "Timestamp": {"clock": u64, "str": "...", "tv_nsec": u32, "tv_sec": u64},
//         "Type": "",                       <- cluster
//         "<field>": {"Type": "DBL", "__value": 1.2345},
//         "<array>": {"MemberDims": "[3]", "Type": "Array", "v": [...]}
//   } } ]

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

namespace circus {

struct AtomTimestamp {
  /// Local time rendered with "%H:%M:%S.%f %m/%d/%Y" (microsecond precision).
  std::string display;
  std::uint64_t epoch_seconds = 0;
  std::uint32_t epoch_nanos = 0;
  std::optional<std::uint64_t> rf_clock;

  bool operator==(const AtomTimestamp&) const = default;
};

/// Wall-clock timestamp, non-decreasing across calls within a process.
AtomTimestamp timestamp_now(std::optional<std::uint64_t> rf_clock = std::nullopt);
AtomTimestamp make_timestamp(std::uint64_t epoch_seconds, std::uint32_t epoch_nanos,
                             std::optional<std::uint64_t> rf_clock = std::nullopt);

std::string format_display_time(std::uint64_t epoch_seconds, std::uint32_t epoch_nanos);
/// Parses a display string back to (seconds, nanoseconds truncated to µs).
std::optional<std::pair<std::uint64_t, std::uint32_t>> parse_display_time(std::string_view text);
/// True when `display` re-parses to the epoch fields (µs truncation).
bool display_consistent(const AtomTimestamp& ts);

enum class ScalarType { dbl, i32, sgl, boolean, str };

std::string_view type_tag(ScalarType t) noexcept;
std::optional<ScalarType> scalar_type_from_tag(std::string_view tag) noexcept;

/// Variant index order matches ScalarType.
using Scalar = std::variant<double, std::int32_t, float, bool, std::string>;

ScalarType scalar_type(const Scalar& s) noexcept;

using ArrayData = std::variant<std::vector<double>, std::vector<std::int32_t>, std::vector<float>,
                               std::vector<bool>, std::vector<std::string>>;

/// Homogeneous one-dimensional array. The element type is the variant
/// alternative; the dimension string is always "[size]".
struct AtomArray {
  ArrayData values;

  ScalarType element_type() const noexcept;
  std::size_t size() const noexcept;
  std::string dims() const;
  bool operator==(const AtomArray&) const = default;
};

struct AtomPayload;

struct ClusterField;
using Cluster = std::vector<ClusterField>;

struct AtomPayload {
  std::variant<Scalar, AtomArray, Cluster> value;

  AtomPayload();
  AtomPayload(Scalar s);
  AtomPayload(AtomArray a);
  AtomPayload(Cluster c);

  bool is_scalar() const noexcept { return value.index() == 0; }
  bool is_array() const noexcept { return value.index() == 1; }
  bool is_cluster() const noexcept { return value.index() == 2; }

  const Scalar& scalar() const;
  const AtomArray& array() const;
  const Cluster& cluster() const;
  Cluster& cluster();

  /// Cluster member lookup; nullptr when absent or not a cluster.
  const AtomPayload* find(std::string_view name) const;
  /// Numeric view of a scalar (I32/DBL/SGL/Bool); throws SchemaViolation otherwise.
  double as_double() const;
  const std::string& as_string() const;

  bool operator==(const AtomPayload& other) const;
};

struct ClusterField {
  std::string name;
  AtomPayload value;
  bool operator==(const ClusterField&) const = default;
};

AtomPayload make_scalar(double v);
AtomPayload make_scalar(std::int32_t v);
AtomPayload make_scalar(float v);
AtomPayload make_scalar(bool v);
AtomPayload make_scalar(std::string v);
AtomPayload make_scalar(const char* v);
template <typename T>
AtomPayload make_array(std::vector<T> values) {
  return AtomPayload(AtomArray{ArrayData(std::move(values))});
}
AtomPayload make_cluster(std::vector<std::pair<std::string, AtomPayload>> fields);

struct DataAtom {
  std::string name;
  AtomTimestamp timestamp;
  AtomPayload data;

  bool operator==(const DataAtom&) const = default;
};

/// Throws SchemaViolation when the atom breaks an invariant (empty name,
/// duplicate cluster field, reserved key, non-finite float, bad nanos).
void validate_atom(const DataAtom& atom);

/// Shape signature used for name/type stability checks, e.g. "DBL",
/// "Array<float>", "{a:I32,b:Array<int>}". SGL and DBL arrays share the
/// "float" family because the interchange format does not tag array elements.
std::string shape_signature(const AtomPayload& payload);

/// Equality where 32-bit floats compare by their widened value and float
/// arrays compare across SGL/DBL element types (what survives a round trip).
bool equivalent_after_widening(const AtomPayload& a, const AtomPayload& b);
bool equivalent_after_widening(const DataAtom& a, const DataAtom& b);

nlohmann::json encode_atom_json(const DataAtom& atom);
/// Deterministic, pretty-printed interchange document.
std::string encode_atom(const DataAtom& atom);

DataAtom decode_atom_json(const nlohmann::json& doc);
/// Throws MalformedDocument on syntax errors and SchemaViolation on layout errors.
DataAtom decode_atom(std::string_view document);

nlohmann::json encode_timestamp_json(const AtomTimestamp& ts);
AtomTimestamp decode_timestamp_json(const nlohmann::json& j);

}  // namespace circus
