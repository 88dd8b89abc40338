#include "circus/atom.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <limits>
#include <set>

#include "circus/error.hpp"

namespace circus {

using nlohmann::json;

namespace {

constexpr std::uint32_t kNanosPerSecond = 1'000'000'000;

std::atomic<std::uint64_t> g_last_now_ns{0};

bool parse_uint(std::string_view s, std::size_t digits, int& out) {
  if (s.size() != digits) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

// ---------------------------------------------------------------------------
// Timestamps

std::string format_display_time(std::uint64_t epoch_seconds, std::uint32_t epoch_nanos) {
  std::time_t t = static_cast<std::time_t>(epoch_seconds);
  std::tm tm{};
  localtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%02d:%02d:%02d.%06u %02d/%02d/%04d", tm.tm_hour, tm.tm_min,
                tm.tm_sec, epoch_nanos / 1000u, tm.tm_mon + 1, tm.tm_mday, tm.tm_year + 1900);
  return buf;
}

std::optional<std::pair<std::uint64_t, std::uint32_t>> parse_display_time(std::string_view text) {
  // HH:MM:SS.ffffff mm/dd/YYYY
  if (text.size() != 26 || text[2] != ':' || text[5] != ':' || text[8] != '.' ||
      text[15] != ' ' || text[18] != '/' || text[21] != '/') {
    return std::nullopt;
  }
  int hh, mm, ss, us, mon, day, year;
  if (!parse_uint(text.substr(0, 2), 2, hh) || !parse_uint(text.substr(3, 2), 2, mm) ||
      !parse_uint(text.substr(6, 2), 2, ss) || !parse_uint(text.substr(9, 6), 6, us) ||
      !parse_uint(text.substr(16, 2), 2, mon) || !parse_uint(text.substr(19, 2), 2, day) ||
      !parse_uint(text.substr(22, 4), 4, year)) {
    return std::nullopt;
  }
  std::tm tm{};
  tm.tm_hour = hh;
  tm.tm_min = mm;
  tm.tm_sec = ss;
  tm.tm_mon = mon - 1;
  tm.tm_mday = day;
  tm.tm_year = year - 1900;
  tm.tm_isdst = -1;
  std::time_t t = std::mktime(&tm);
  if (t == static_cast<std::time_t>(-1) || t < 0) return std::nullopt;
  return std::make_pair(static_cast<std::uint64_t>(t), static_cast<std::uint32_t>(us) * 1000u);
}

bool display_consistent(const AtomTimestamp& ts) {
  auto parsed = parse_display_time(ts.display);
  if (!parsed) return false;
  return parsed->first == ts.epoch_seconds && parsed->second == (ts.epoch_nanos / 1000u) * 1000u;
}

AtomTimestamp make_timestamp(std::uint64_t epoch_seconds, std::uint32_t epoch_nanos,
                             std::optional<std::uint64_t> rf_clock) {
  if (epoch_nanos >= kNanosPerSecond) fail(Errc::invalid_argument, "epoch_nanos out of range");
  return AtomTimestamp{format_display_time(epoch_seconds, epoch_nanos), epoch_seconds, epoch_nanos,
                       rf_clock};
}

AtomTimestamp timestamp_now(std::optional<std::uint64_t> rf_clock) {
  auto since = std::chrono::system_clock::now().time_since_epoch();
  auto ns = static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(since).count());
  auto last = g_last_now_ns.load();
  while (true) {
    auto next = std::max(ns, last);
    if (g_last_now_ns.compare_exchange_weak(last, next)) {
      ns = next;
      break;
    }
  }
  return make_timestamp(ns / kNanosPerSecond, static_cast<std::uint32_t>(ns % kNanosPerSecond),
                        rf_clock);
}

// ---------------------------------------------------------------------------
// Payload model

std::string_view type_tag(ScalarType t) noexcept {
  switch (t) {
    case ScalarType::dbl: return "DBL";
    case ScalarType::i32: return "I32";
    case ScalarType::sgl: return "SGL";
    case ScalarType::boolean: return "Bool";
    case ScalarType::str: return "Str";
  }
  return "";
}

std::optional<ScalarType> scalar_type_from_tag(std::string_view tag) noexcept {
  if (tag == "DBL") return ScalarType::dbl;
  if (tag == "I32") return ScalarType::i32;
  if (tag == "SGL") return ScalarType::sgl;
  if (tag == "Bool") return ScalarType::boolean;
  if (tag == "Str") return ScalarType::str;
  return std::nullopt;
}

ScalarType scalar_type(const Scalar& s) noexcept { return static_cast<ScalarType>(s.index()); }

ScalarType AtomArray::element_type() const noexcept {
  return static_cast<ScalarType>(values.index());
}

std::size_t AtomArray::size() const noexcept {
  return std::visit([](const auto& v) { return v.size(); }, values);
}

std::string AtomArray::dims() const { return "[" + std::to_string(size()) + "]"; }

AtomPayload::AtomPayload() : value(Cluster{}) {}
AtomPayload::AtomPayload(Scalar s) : value(std::move(s)) {}
AtomPayload::AtomPayload(AtomArray a) : value(std::move(a)) {}
AtomPayload::AtomPayload(Cluster c) : value(std::move(c)) {}

const Scalar& AtomPayload::scalar() const {
  if (!is_scalar()) fail(Errc::schema_violation, "payload is not a scalar");
  return std::get<Scalar>(value);
}

const AtomArray& AtomPayload::array() const {
  if (!is_array()) fail(Errc::schema_violation, "payload is not an array");
  return std::get<AtomArray>(value);
}

const Cluster& AtomPayload::cluster() const {
  if (!is_cluster()) fail(Errc::schema_violation, "payload is not a cluster");
  return std::get<Cluster>(value);
}

Cluster& AtomPayload::cluster() {
  if (!is_cluster()) fail(Errc::schema_violation, "payload is not a cluster");
  return std::get<Cluster>(value);
}

const AtomPayload* AtomPayload::find(std::string_view name) const {
  if (!is_cluster()) return nullptr;
  for (const auto& f : std::get<Cluster>(value)) {
    if (f.name == name) return &f.value;
  }
  return nullptr;
}

double AtomPayload::as_double() const {
  const auto& s = scalar();
  switch (scalar_type(s)) {
    case ScalarType::dbl: return std::get<double>(s);
    case ScalarType::i32: return std::get<std::int32_t>(s);
    case ScalarType::sgl: return std::get<float>(s);
    case ScalarType::boolean: return std::get<bool>(s) ? 1.0 : 0.0;
    case ScalarType::str: break;
  }
  fail(Errc::schema_violation, "string scalar has no numeric value");
}

const std::string& AtomPayload::as_string() const {
  const auto& s = scalar();
  if (scalar_type(s) != ScalarType::str) fail(Errc::schema_violation, "scalar is not a string");
  return std::get<std::string>(s);
}

namespace {

std::vector<const ClusterField*> sorted_fields(const Cluster& c) {
  std::vector<const ClusterField*> out;
  out.reserve(c.size());
  for (const auto& f : c) out.push_back(&f);
  std::sort(out.begin(), out.end(),
            [](const ClusterField* a, const ClusterField* b) { return a->name < b->name; });
  return out;
}

template <typename Eq>
bool clusters_equal(const Cluster& a, const Cluster& b, Eq eq) {
  if (a.size() != b.size()) return false;
  auto sa = sorted_fields(a);
  auto sb = sorted_fields(b);
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i]->name != sb[i]->name || !eq(sa[i]->value, sb[i]->value)) return false;
  }
  return true;
}

}  // namespace

// Clusters are keyed maps: equality ignores member order, because the
// interchange format always emits members sorted.
bool AtomPayload::operator==(const AtomPayload& other) const {
  if (value.index() != other.value.index()) return false;
  if (is_cluster()) {
    return clusters_equal(cluster(), other.cluster(),
                          [](const AtomPayload& x, const AtomPayload& y) { return x == y; });
  }
  if (is_scalar()) return scalar() == other.scalar();
  return array() == other.array();
}

AtomPayload make_scalar(double v) { return AtomPayload(Scalar(v)); }
AtomPayload make_scalar(std::int32_t v) { return AtomPayload(Scalar(v)); }
AtomPayload make_scalar(float v) { return AtomPayload(Scalar(v)); }
AtomPayload make_scalar(bool v) { return AtomPayload(Scalar(v)); }
AtomPayload make_scalar(std::string v) { return AtomPayload(Scalar(std::move(v))); }
AtomPayload make_scalar(const char* v) { return AtomPayload(Scalar(std::string(v))); }

AtomPayload make_cluster(std::vector<std::pair<std::string, AtomPayload>> fields) {
  Cluster c;
  c.reserve(fields.size());
  for (auto& [name, value] : fields) c.push_back(ClusterField{std::move(name), std::move(value)});
  return AtomPayload(std::move(c));
}

// ---------------------------------------------------------------------------
// Validation, shapes, equivalence

namespace {

bool reserved_member(std::string_view name) { return name == "Type" || name == "Timestamp"; }

void validate_payload(const AtomPayload& p, const std::string& path) {
  if (p.is_scalar()) {
    const auto& s = p.scalar();
    if (auto d = std::get_if<double>(&s); d && !std::isfinite(*d)) {
      fail(Errc::schema_violation, path + ": non-finite DBL");
    }
    if (auto f = std::get_if<float>(&s); f && !std::isfinite(*f)) {
      fail(Errc::schema_violation, path + ": non-finite SGL");
    }
    return;
  }
  if (p.is_array()) {
    const auto& a = p.array();
    bool ok = std::visit(
        [](const auto& v) {
          using T = typename std::decay_t<decltype(v)>::value_type;
          if constexpr (std::is_floating_point_v<T>) {
            return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
          }
          return true;
        },
        a.values);
    if (!ok) fail(Errc::schema_violation, path + ": non-finite array element");
    return;
  }
  std::set<std::string_view> seen;
  for (const auto& f : p.cluster()) {
    if (f.name.empty()) fail(Errc::schema_violation, path + ": empty cluster field name");
    if (reserved_member(f.name)) fail(Errc::schema_violation, path + ": reserved field name " + f.name);
    if (!seen.insert(f.name).second) {
      fail(Errc::schema_violation, path + ": duplicate cluster field " + f.name);
    }
    validate_payload(f.value, path + "/" + f.name);
  }
}

std::string_view array_family(ScalarType t) {
  switch (t) {
    case ScalarType::dbl:
    case ScalarType::sgl: return "float";
    case ScalarType::i32: return "int";
    case ScalarType::boolean: return "bool";
    case ScalarType::str: return "str";
  }
  return "";
}

std::vector<double> widened(const AtomArray& a) {
  if (auto d = std::get_if<std::vector<double>>(&a.values)) return *d;
  const auto& f = std::get<std::vector<float>>(a.values);
  return std::vector<double>(f.begin(), f.end());
}

}  // namespace

void validate_atom(const DataAtom& atom) {
  if (atom.name.empty()) fail(Errc::schema_violation, "atom name is empty");
  if (atom.timestamp.epoch_nanos >= kNanosPerSecond) {
    fail(Errc::schema_violation, "tv_nsec must be below 1e9");
  }
  validate_payload(atom.data, atom.name);
}

std::string shape_signature(const AtomPayload& payload) {
  if (payload.is_scalar()) return std::string(type_tag(scalar_type(payload.scalar())));
  if (payload.is_array()) {
    return "Array<" + std::string(array_family(payload.array().element_type())) + ">";
  }
  std::string out = "{";
  bool first = true;
  for (const auto* f : sorted_fields(payload.cluster())) {
    if (!first) out += ",";
    first = false;
    out += f->name + ":" + shape_signature(f->value);
  }
  return out + "}";
}

bool equivalent_after_widening(const AtomPayload& a, const AtomPayload& b) {
  if (a.value.index() != b.value.index()) return false;
  if (a.is_cluster()) {
    return clusters_equal(a.cluster(), b.cluster(), [](const AtomPayload& x, const AtomPayload& y) {
      return equivalent_after_widening(x, y);
    });
  }
  if (a.is_scalar()) return a.scalar() == b.scalar();
  const auto& x = a.array();
  const auto& y = b.array();
  if (x.size() == 0 && y.size() == 0) return true;
  auto fx = array_family(x.element_type());
  if (fx != array_family(y.element_type())) return false;
  if (fx == "float") return widened(x) == widened(y);
  return x == y;
}

bool equivalent_after_widening(const DataAtom& a, const DataAtom& b) {
  return a.name == b.name && a.timestamp == b.timestamp && equivalent_after_widening(a.data, b.data);
}

// ---------------------------------------------------------------------------
// Codec

nlohmann::json encode_timestamp_json(const AtomTimestamp& ts) {
  json t = json::object();
  t["clock"] = ts.rf_clock.value_or(0);
  t["str"] = ts.display;
  t["tv_nsec"] = ts.epoch_nanos;
  t["tv_sec"] = ts.epoch_seconds;
  return t;
}

namespace {

json scalar_json(const Scalar& s) {
  return std::visit([](const auto& v) -> json { return json(v); }, s);
}

void encode_into(const AtomPayload& p, json& obj) {
  if (p.is_scalar()) {
    obj["Type"] = std::string(type_tag(scalar_type(p.scalar())));
    obj["__value"] = scalar_json(p.scalar());
    return;
  }
  if (p.is_array()) {
    const auto& a = p.array();
    obj["MemberDims"] = a.dims();
    obj["Type"] = "Array";
    json v = json::array();
    std::visit(
        [&v](const auto& vec) {
          for (const auto& x : vec) v.push_back(json(x));
        },
        a.values);
    obj["v"] = std::move(v);
    return;
  }
  obj["Type"] = "";
  for (const auto& f : p.cluster()) {
    json member = json::object();
    encode_into(f.value, member);
    obj[f.name] = std::move(member);
  }
}

const json& require(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(Errc::schema_violation, path + ": missing \"" + key + "\"");
  return *it;
}

std::uint64_t require_unsigned(const json& obj, const char* key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    fail(Errc::schema_violation, path + ": \"" + key + "\" must be an unsigned integer");
  }
  return v.get<std::uint64_t>();
}

double number_value(const json& v, const std::string& path) {
  if (!v.is_number()) fail(Errc::schema_violation, path + ": expected a number");
  return v.get<double>();
}

std::int32_t int32_value(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail(Errc::schema_violation, path + ": expected an integer");
  if (v.is_number_unsigned()) {
    auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max())) {
      fail(Errc::schema_violation, path + ": integer out of I32 range");
    }
    return static_cast<std::int32_t>(u);
  }
  auto i = v.get<std::int64_t>();
  if (i < std::numeric_limits<std::int32_t>::min() || i > std::numeric_limits<std::int32_t>::max()) {
    fail(Errc::schema_violation, path + ": integer out of I32 range");
  }
  return static_cast<std::int32_t>(i);
}

Scalar decode_scalar(ScalarType t, const json& v, const std::string& path) {
  switch (t) {
    case ScalarType::dbl: return number_value(v, path);
    case ScalarType::i32: return int32_value(v, path);
    case ScalarType::sgl: return static_cast<float>(number_value(v, path));
    case ScalarType::boolean:
      if (!v.is_boolean()) fail(Errc::schema_violation, path + ": expected a boolean");
      return v.get<bool>();
    case ScalarType::str:
      if (!v.is_string()) fail(Errc::schema_violation, path + ": expected a string");
      return v.get<std::string>();
  }
  fail(Errc::schema_violation, path + ": unknown scalar type");
}

// The array layout carries no element tag: element type is recovered from the
// JSON value kinds (floats -> DBL, integers -> I32, booleans, strings).
AtomArray decode_array(const json& obj, const std::string& path) {
  const auto& dims = require(obj, "MemberDims", path);
  const auto& v = require(obj, "v", path);
  if (!dims.is_string()) fail(Errc::schema_violation, path + ": MemberDims must be a string");
  if (!v.is_array()) fail(Errc::schema_violation, path + ": \"v\" must be a list");
  if (dims.get<std::string>() != "[" + std::to_string(v.size()) + "]") {
    fail(Errc::schema_violation, path + ": MemberDims does not match element count");
  }
  if (v.empty()) return AtomArray{std::vector<double>{}};
  bool all_bool = true, all_str = true, all_int = true, all_num = true;
  for (const auto& x : v) {
    all_bool &= x.is_boolean();
    all_str &= x.is_string();
    all_int &= x.is_number_integer();
    all_num &= x.is_number();
  }
  if (all_bool) return AtomArray{v.get<std::vector<bool>>()};
  if (all_str) return AtomArray{v.get<std::vector<std::string>>()};
  if (all_int) {
    bool fits = std::all_of(v.begin(), v.end(), [](const json& x) {
      if (x.is_number_unsigned()) {
        return x.get<std::uint64_t>() <= static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max());
      }
      auto i = x.get<std::int64_t>();
      return i >= std::numeric_limits<std::int32_t>::min() && i <= std::numeric_limits<std::int32_t>::max();
    });
    if (fits) {
      std::vector<std::int32_t> out;
      out.reserve(v.size());
      for (const auto& x : v) out.push_back(int32_value(x, path));
      return AtomArray{std::move(out)};
    }
  }
  if (!all_num) fail(Errc::schema_violation, path + ": array elements are not homogeneous");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(x.get<double>());
  return AtomArray{std::move(out)};
}

AtomPayload decode_payload(const json& obj, const std::string& path, bool top_level) {
  if (!obj.is_object()) fail(Errc::schema_violation, path + ": expected an object");
  const auto& type = require(obj, "Type", path);
  if (!type.is_string()) fail(Errc::schema_violation, path + ": Type must be a string");
  const auto tag = type.get<std::string>();
  if (tag.empty()) {
    Cluster c;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (it.key() == "Type" || (top_level && it.key() == "Timestamp")) continue;
      c.push_back(ClusterField{it.key(), decode_payload(it.value(), path + "/" + it.key(), false)});
    }
    return AtomPayload(std::move(c));
  }
  if (tag == "Array") return AtomPayload(decode_array(obj, path));
  auto st = scalar_type_from_tag(tag);
  if (!st) fail(Errc::schema_violation, path + ": unknown Type tag \"" + tag + "\"");
  return AtomPayload(decode_scalar(*st, require(obj, "__value", path), path));
}

}  // namespace

AtomTimestamp decode_timestamp_json(const nlohmann::json& t) {
  const std::string path = "Timestamp";
  if (!t.is_object()) fail(Errc::schema_violation, "Timestamp must be an object");
  AtomTimestamp ts;
  auto clock = require_unsigned(t, "clock", path);
  const auto& str = require(t, "str", path);
  if (!str.is_string()) fail(Errc::schema_violation, "Timestamp: \"str\" must be a string");
  ts.display = str.get<std::string>();
  auto nsec = require_unsigned(t, "tv_nsec", path);
  if (nsec >= kNanosPerSecond) fail(Errc::schema_violation, "Timestamp: tv_nsec out of range");
  ts.epoch_nanos = static_cast<std::uint32_t>(nsec);
  ts.epoch_seconds = require_unsigned(t, "tv_sec", path);
  if (clock != 0) ts.rf_clock = clock;
  return ts;
}

nlohmann::json encode_atom_json(const DataAtom& atom) {
  validate_atom(atom);
  json body = json::object();
  body["Timestamp"] = encode_timestamp_json(atom.timestamp);
  encode_into(atom.data, body);
  json wrapper = json::object();
  wrapper[atom.name] = std::move(body);
  return json::array({std::move(wrapper)});
}

std::string encode_atom(const DataAtom& atom) { return encode_atom_json(atom).dump(4); }

DataAtom decode_atom_json(const nlohmann::json& doc) {
  if (!doc.is_array() || doc.size() != 1 || !doc[0].is_object() || doc[0].size() != 1) {
    fail(Errc::schema_violation, "document must be a one-element list holding {name: atom}");
  }
  auto it = doc[0].begin();
  DataAtom atom;
  atom.name = it.key();
  if (atom.name.empty()) fail(Errc::schema_violation, "atom name is empty");
  const auto& body = it.value();
  if (!body.is_object()) fail(Errc::schema_violation, atom.name + ": expected an object");
  atom.timestamp = decode_timestamp_json(require(body, "Timestamp", atom.name));
  atom.data = decode_payload(body, atom.name, true);
  return atom;
}

DataAtom decode_atom(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end());
  } catch (const json::parse_error& e) {
    fail(Errc::malformed_document, e.what());
  }
  return decode_atom_json(doc);
}

}  // namespace circus
