#include "circus/orchestration/schedule.hpp"

#include <set>

#include "circus/error.hpp"
#include "circus/pipeline/stages.hpp"

namespace circus::orchestration {

using nlohmann::json;

std::size_t ScanSpec::size() const {
  if (dims.empty()) return 0;
  std::size_t n = 1;
  for (const auto& d : dims) n *= d.values.size();
  return n;
}

std::vector<std::size_t> ScanSpec::digits(std::size_t i) const {
  if (i >= size()) fail(Errc::invalid_argument, "scan index " + std::to_string(i) + " out of range");
  std::vector<std::size_t> out(dims.size());
  std::size_t stride = 1;
  for (std::size_t k = dims.size(); k-- > 0;) {
    const auto len = dims[k].values.size();
    auto digit = (i / stride) % len;
    if (order == ScanOrder::snake && (i / (stride * len)) % 2 == 1) digit = len - 1 - digit;
    out[k] = digit;
    stride *= len;
  }
  return out;
}

script::ParamValues ScanSpec::point(std::size_t i) const {
  script::ParamValues out;
  const auto d = digits(i);
  for (std::size_t k = 0; k < dims.size(); ++k) out[dims[k].param] = dims[k].values[d[k]];
  return out;
}

std::size_t ScheduleEntry::points() const {
  if (scan) return scan->size();
  if (feedback) return feedback->budget;
  return 1;
}

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  fail(Errc::schema_violation, path + ": " + what);
}

ScanSpec scan_from(const json& j, const std::string& path) {
  if (!j.is_object()) bad(path, "expected an object");
  ScanSpec s;
  if (j.contains("order")) {
    const auto& o = j["order"];
    if (o == "snake") {
      s.order = ScanOrder::snake;
    } else if (o == "lexicographic") {
      s.order = ScanOrder::lexicographic;
    } else {
      bad(path + ".order", "must be snake or lexicographic");
    }
  }
  if (!j.contains("dims") || !j["dims"].is_array()) bad(path + ".dims", "expected an array");
  const auto& dims = j["dims"];
  if (dims.empty()) bad(path + ".dims", "must not be empty");
  if (dims.size() > kMaxScanDims) bad(path + ".dims", "at most 4 dimensions");
  std::set<std::string> seen;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const auto here = path + ".dims[" + std::to_string(k) + "]";
    const auto& d = dims[k];
    if (!d.is_object() || !d.contains("param") || !d["param"].is_string()) bad(here + ".param", "missing");
    const auto param = d["param"].get<std::string>();
    if (!seen.insert(param).second) bad(here + ".param", "duplicate parameter " + param);
    if (!d.contains("values") || !d["values"].is_array()) bad(here + ".values", "expected an array");
    if (d["values"].empty()) bad(here + ".values", "must not be empty");
    s.dims.push_back({param, d["values"].get<std::vector<json>>()});
  }
  return s;
}

json scan_to(const ScanSpec& s) {
  json dims = json::array();
  for (const auto& d : s.dims) dims.push_back({{"param", d.param}, {"values", d.values}});
  return {{"order", s.order == ScanOrder::snake ? "snake" : "lexicographic"}, {"dims", dims}};
}

}  // namespace

Schedule schedule_from_json(const json& doc) {
  if (!doc.is_object()) bad("schedule", "expected an object");
  if (doc.contains("version") && doc["version"] != kScheduleVersion) bad("version", "unsupported version");
  Schedule s;
  if (doc.contains("created_by")) {
    if (!doc["created_by"].is_string()) bad("created_by", "expected a string");
    s.created_by = doc["created_by"].get<std::string>();
  }
  if (doc.contains("created_at")) {
    try {
      s.created_at = decode_timestamp_json(doc["created_at"]);
    } catch (const Error& e) {
      bad("created_at", e.what());
    }
  } else {
    s.created_at = timestamp_now();
  }
  if (!doc.contains("entries") || !doc["entries"].is_array()) bad("entries", "expected an array");
  if (doc["entries"].empty()) bad("entries", "must not be empty");
  for (std::size_t i = 0; i < doc["entries"].size(); ++i) {
    const auto path = "entries[" + std::to_string(i) + "]";
    const auto& e = doc["entries"][i];
    if (!e.is_object()) bad(path, "expected an object");
    ScheduleEntry entry;
    if (!e.contains("script") || !e["script"].is_string() || e["script"].get<std::string>().empty()) {
      bad(path + ".script", "missing");
    }
    entry.script = e["script"].get<std::string>();
    if (e.contains("params")) {
      if (!e["params"].is_object()) bad(path + ".params", "expected an object");
      for (const auto& [k, v] : e["params"].items()) entry.params[k] = v;
    }
    if (e.contains("repeat")) {
      const auto& r = e["repeat"];
      if (!r.is_number_unsigned() || r.get<std::uint64_t>() < 1 || r.get<std::uint64_t>() > UINT32_MAX) {
        bad(path + ".repeat", "must be a positive integer");
      }
      entry.repeat = r.get<std::uint32_t>();
    }
    if (e.contains("scan")) entry.scan = scan_from(e["scan"], path + ".scan");
    if (e.contains("feedback")) {
      try {
        entry.feedback = pipeline::feedback_from_json(e["feedback"]);
      } catch (const Error& err) {
        bad(path + ".feedback", err.what());
      }
      if (entry.feedback->budget < 1) bad(path + ".feedback.budget", "must be at least 1");
    }
    if (entry.scan && entry.feedback) bad(path, "an entry takes a scan or a feedback loop, not both");
    if (entry.feedback && entry.repeat != 1) bad(path + ".repeat", "feedback entries run each proposal once");
    s.entries.push_back(std::move(entry));
  }
  return s;
}

json schedule_to_json(const Schedule& s) {
  json entries = json::array();
  for (const auto& e : s.entries) {
    json params = json::object();
    for (const auto& [k, v] : e.params) params[k] = v;
    json j{{"script", e.script}, {"params", params}, {"repeat", e.repeat}};
    if (e.scan) j["scan"] = scan_to(*e.scan);
    if (e.feedback) j["feedback"] = pipeline::feedback_to_json(*e.feedback);
    entries.push_back(std::move(j));
  }
  return {{"version", kScheduleVersion},
          {"created_by", s.created_by},
          {"created_at", encode_timestamp_json(s.created_at)},
          {"entries", entries}};
}

std::string schedule_hash(const Schedule& s) {
  return pipeline::hex64(pipeline::fnv1a(schedule_to_json(s)["entries"].dump()));
}

void validate_schedule(const Schedule& s, const ScriptLibrary& library) {
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    const auto path = "entries[" + std::to_string(i) + "]";
    const auto& e = s.entries[i];
    auto it = library.find(e.script);
    if (it == library.end()) bad(path + ".script", "unknown script " + e.script);
    const auto& decls = it->second.params;
    auto check = [&](const std::string& name, const json& value, const std::string& where) {
      auto d = decls.find(name);
      if (d == decls.end()) bad(where, e.script + " has no parameter " + name);
      try {
        script::check_param(d->second, value);
      } catch (const Error& err) {
        bad(where, err.what());
      }
    };
    for (const auto& [k, v] : e.params) check(k, v, path + ".params." + k);
    if (e.scan) {
      for (std::size_t k = 0; k < e.scan->dims.size(); ++k) {
        const auto& d = e.scan->dims[k];
        for (std::size_t j = 0; j < d.values.size(); ++j) {
          check(d.param, d.values[j],
                path + ".scan.dims[" + std::to_string(k) + "].values[" + std::to_string(j) + "]");
        }
      }
    }
    if (e.feedback) {
      for (std::size_t k = 0; k < e.feedback->params.size(); ++k) {
        const auto& p = e.feedback->params[k];
        check(p.name, json(p.lo), path + ".feedback.params[" + std::to_string(k) + "].lo");
        check(p.name, json(p.hi), path + ".feedback.params[" + std::to_string(k) + "].hi");
      }
    }
  }
}

}  // namespace circus::orchestration
