#include "circus/script/script.hpp"

#include <fstream>
#include <set>

#include "circus/error.hpp"

namespace circus::script {

using nlohmann::json;
using rtio::MachineTime;

namespace {

constexpr std::uint32_t kMaxRepeat = 1'000'000;

const std::map<std::string, std::vector<std::string>>& required_fields() {
  static const std::map<std::string, std::vector<std::string>> fields{
      {"wait_trigger", {"trigger"}},
      {"delay", {"duration"}},
      {"set_ttl", {"channel", "level"}},
      {"ttl_pulse", {"channel", "width"}},
      {"set_voltages", {"pairs"}},
      {"set_voltages_at_trigger", {"trigger", "delay", "pairs"}},
      {"call_service", {"service", "command"}},
      {"emit", {"name", "value"}},
      {"record_trace", {"name"}},
      {"require", {"var", "reason"}},
      {"repeat", {"count", "steps"}},
      {"segment", {"name", "steps"}},
  };
  return fields;
}

void check_steps(const json& steps, const std::string& path) {
  if (!steps.is_array()) fail(Errc::schema_violation, path + ": expected an array");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto here = path + "[" + std::to_string(i) + "]";
    const auto& s = steps[i];
    if (!s.is_object()) fail(Errc::schema_violation, here + ": expected an object");
    if (!s.contains("op") || !s["op"].is_string()) fail(Errc::schema_violation, here + ".op: missing");
    const auto op = s["op"].get<std::string>();
    auto it = required_fields().find(op);
    if (it == required_fields().end()) fail(Errc::schema_violation, here + ".op: unknown step '" + op + "'");
    for (const auto& f : it->second) {
      if (!s.contains(f)) fail(Errc::schema_violation, here + "." + f + ": missing");
    }
    if (op == "repeat" || op == "segment") check_steps(s["steps"], here + ".steps");
  }
}

ParamDecl infer_param(const std::string& name, const json& value) {
  ParamDecl d{name, ParamType::number, Dimension::none, value};
  if (value.is_boolean()) {
    d.type = ParamType::boolean;
  } else if (value.is_number_integer()) {
    d.type = ParamType::integer;
  } else if (value.is_number()) {
    d.type = ParamType::number;
  } else if (value.is_string()) {
    const auto s = value.get<std::string>();
    if (looks_like_quantity(s)) {
      d.type = ParamType::quantity;
      d.dimension = parse_quantity(s).dimension;
    } else {
      d.type = ParamType::string;
    }
  } else {
    fail(Errc::schema_violation, "params." + name + ": unsupported parameter value");
  }
  return d;
}

}  // namespace

ExperimentScript script_from_json(const json& doc) {
  if (!doc.is_object()) fail(Errc::schema_violation, "script: expected an object");
  if (!doc.contains("name") || !doc["name"].is_string() || doc["name"].get<std::string>().empty()) {
    fail(Errc::schema_violation, "name: missing");
  }
  if (doc.contains("step_set") && doc["step_set"] != kStepSet) {
    fail(Errc::schema_violation, "step_set: unsupported step set " + doc["step_set"].dump());
  }
  ExperimentScript s;
  s.name = doc["name"].get<std::string>();
  if (doc.contains("params")) {
    if (!doc["params"].is_object()) fail(Errc::schema_violation, "params: expected an object");
    for (const auto& [k, v] : doc["params"].items()) s.params[k] = infer_param(k, v);
  }
  if (!doc.contains("steps")) fail(Errc::schema_violation, "steps: missing");
  check_steps(doc["steps"], "steps");
  s.steps = doc["steps"];
  return s;
}

json script_to_json(const ExperimentScript& script) {
  json params = json::object();
  for (const auto& [k, d] : script.params) params[k] = d.default_value;
  return {{"name", script.name}, {"step_set", kStepSet}, {"params", params}, {"steps", script.steps}};
}

ExperimentScript load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    fail(Errc::malformed_document, e.what());
  }
  return script_from_json(doc);
}

void check_param(const ParamDecl& decl, const json& value) {
  bool ok = false;
  switch (decl.type) {
    case ParamType::number: ok = value.is_number(); break;
    case ParamType::integer: ok = value.is_number_integer(); break;
    case ParamType::boolean: ok = value.is_boolean(); break;
    case ParamType::string: ok = value.is_string(); break;
    case ParamType::quantity:
      if (value.is_number()) {
        ok = true;
      } else if (value.is_string()) {
        try {
          const auto q = parse_quantity(value.get<std::string>());
          ok = q.dimension == decl.dimension || q.dimension == Dimension::none;
        } catch (const Error&) {
          ok = false;
        }
      }
      break;
  }
  if (!ok) fail(Errc::invalid_argument, "parameter " + decl.name + " cannot take " + value.dump());
}

ParamValues bind_params(const ExperimentScript& script, const ParamValues& overrides) {
  ParamValues out;
  for (const auto& [k, d] : script.params) out[k] = d.default_value;
  for (const auto& [k, v] : overrides) {
    auto it = script.params.find(k);
    if (it == script.params.end()) fail(Errc::invalid_argument, script.name + " has no parameter " + k);
    check_param(it->second, v);
    out[k] = v;
  }
  return out;
}

AtomPayload payload_from_value(const json& v) {
  if (v.is_boolean()) return make_scalar(v.get<bool>());
  if (v.is_number_integer()) {
    const auto i = v.get<std::int64_t>();
    if (i >= INT32_MIN && i <= INT32_MAX) return make_scalar(static_cast<std::int32_t>(i));
    return make_scalar(static_cast<double>(i));
  }
  if (v.is_number()) return make_scalar(v.get<double>());
  if (v.is_string()) return make_scalar(v.get<std::string>());
  if (v.is_array()) {
    if (std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
      return make_array(v.get<std::vector<double>>());
    }
    if (std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); })) {
      return make_array(v.get<std::vector<std::string>>());
    }
    fail(Errc::invalid_argument, "arrays must hold only numbers or only strings");
  }
  if (v.is_object()) {
    std::vector<std::pair<std::string, AtomPayload>> fields;
    for (const auto& [k, e] : v.items()) fields.emplace_back(k, payload_from_value(e));
    return make_cluster(std::move(fields));
  }
  fail(Errc::invalid_argument, "cannot convert " + v.dump() + " to a payload");
}

namespace {

class Compiler {
 public:
  Compiler(const ParamValues& params, const rtio::CrateConfig& config) : params_(params), config_(config) {}

  OpList steps(const json& steps, const std::string& path) {
    OpList out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto here = path + "[" + std::to_string(i) + "]";
      try {
        out.push_back(step(steps[i], here));
      } catch (const Error& e) {
        if (e.code() == Errc::invalid_argument) fail(Errc::invalid_argument, here + ": " + e.what());
        throw;
      }
    }
    return out;
  }

 private:
  const json& get(const json& s, const char* field) {
    const json& v = s.at(field);
    if (v.is_string()) {
      const auto& text = v.get_ref<const std::string&>();
      if (!text.empty() && text.front() == '$') {
        auto it = params_.find(text.substr(1));
        if (it == params_.end()) fail(Errc::invalid_argument, "unknown parameter " + text);
        return it->second;
      }
    }
    return v;
  }

  std::string str(const json& s, const char* field) {
    const auto& v = get(s, field);
    if (!v.is_string()) fail(Errc::invalid_argument, std::string(field) + " must be a string");
    return v.get<std::string>();
  }

  MachineTime duration(const json& s, const char* field, MachineTime fallback = MachineTime(0)) {
    if (!s.contains(field)) return fallback;
    const auto t = as_duration(get(s, field), field);
    if (t < MachineTime(0)) fail(Errc::invalid_argument, std::string(field) + " must be non-negative");
    return t;
  }

  std::uint16_t ttl_output(const std::string& ref) {
    const auto ttl = ttl_index(ref);
    if (config_.ttl_direction(ttl) != rtio::TtlDirection::output) {
      fail(Errc::config_mismatch, ref + " is not an output line");
    }
    return ttl;
  }

  std::uint16_t ttl_index(const std::string& ref) {
    if (auto it = config_.ttl_names.find(ref); it != config_.ttl_names.end()) return it->second;
    if (ref.rfind("ttl", 0) == 0 && ref.size() > 3) {
      const auto n = parse_index(ref.substr(3));
      if (n && *n < config_.ttl_count()) return static_cast<std::uint16_t>(*n);
    }
    fail(Errc::config_mismatch, "no TTL channel " + ref);
  }

  std::uint16_t trigger_input(const std::string& ref) { return resolve_trigger_input(config_, ref); }

  std::uint16_t hv_index(const json& ref) {
    std::optional<unsigned long> n;
    if (ref.is_number_unsigned()) {
      n = ref.get<unsigned long>();
    } else if (ref.is_string()) {
      const auto s = ref.get<std::string>();
      if (s.rfind("hv", 0) == 0 && s.size() > 2) n = parse_index(s.substr(2));
    }
    if (!n || *n >= config_.hv_channels.size()) fail(Errc::config_mismatch, "no hv channel " + ref.dump());
    return static_cast<std::uint16_t>(*n);
  }

  static std::optional<unsigned long> parse_index(const std::string& s) {
    if (s.empty() || s.size() > 5 || s.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
    return std::stoul(s);
  }

  std::vector<VoltagePair> pairs(const json& s) {
    const auto& list = get(s, "pairs");
    if (!list.is_array()) fail(Errc::invalid_argument, "pairs must be a list");
    std::vector<VoltagePair> out;
    std::set<std::uint16_t> seen;
    for (const auto& p : list) {
      const json* ch = nullptr;
      const json* volts = nullptr;
      if (p.is_object() && p.contains("channel") && p.contains("volts")) {
        ch = &p["channel"];
        volts = &p["volts"];
      } else if (p.is_array() && p.size() == 2) {
        ch = &p[0];
        volts = &p[1];
      } else {
        fail(Errc::invalid_argument, "pair must be {channel, volts}");
      }
      const auto hv = hv_index(resolve(*ch));
      if (!seen.insert(hv).second) fail(Errc::invalid_argument, "hv" + std::to_string(hv) + " listed twice");
      out.push_back({hv, as_volts(resolve(*volts), "volts")});
    }
    return out;
  }

  const json& resolve(const json& v) {
    if (v.is_string()) {
      const auto& text = v.get_ref<const std::string&>();
      if (!text.empty() && text.front() == '$') {
        auto it = params_.find(text.substr(1));
        if (it == params_.end()) fail(Errc::invalid_argument, "unknown parameter " + text);
        return it->second;
      }
    }
    return v;
  }

  json resolve_deep(const json& v) {
    if (v.is_object()) {
      json out = json::object();
      for (const auto& [k, e] : v.items()) out[k] = resolve_deep(e);
      return out;
    }
    if (v.is_array()) {
      json out = json::array();
      for (const auto& e : v) out.push_back(resolve_deep(e));
      return out;
    }
    return resolve(v);
  }

  Op step(const json& s, const std::string& path) {
    const auto kind = s.at("op").get<std::string>();
    if (kind == "wait_trigger") {
      const auto trig = str(s, "trigger");
      return {op::WaitTrigger{trig, trigger_input(trig), duration(s, "window", kDefaultTriggerWindow)}};
    }
    if (kind == "delay") return {op::Delay{duration(s, "duration")}};
    if (kind == "set_ttl") {
      const auto& level = get(s, "level");
      if (!level.is_boolean()) fail(Errc::invalid_argument, "level must be a boolean");
      return {op::SetTtl{ttl_output(str(s, "channel")), level.get<bool>(), duration(s, "offset")}};
    }
    if (kind == "ttl_pulse") {
      const auto width = duration(s, "width");
      if (width <= MachineTime(0)) fail(Errc::invalid_argument, "width must be positive");
      return {op::TtlPulse{ttl_output(str(s, "channel")), width, duration(s, "offset")}};
    }
    if (kind == "set_voltages") return {op::SetVoltages{pairs(s), duration(s, "offset")}};
    if (kind == "set_voltages_at_trigger") {
      const auto trig = str(s, "trigger");
      return {op::SetVoltagesAtTrigger{trig, trigger_input(trig), duration(s, "delay"), pairs(s),
                                       duration(s, "window", kDefaultTriggerWindow)}};
    }
    if (kind == "call_service") {
      AtomPayload payload = make_scalar(std::string());
      if (s.contains("payload")) payload = payload_from_value(resolve_deep(s["payload"]));
      return {op::CallService{str(s, "service"), str(s, "command"), std::move(payload),
                              s.contains("store_as") ? str(s, "store_as") : std::string()}};
    }
    if (kind == "emit") return {op::Emit{str(s, "name"), payload_from_value(resolve_deep(s["value"]))}};
    if (kind == "record_trace") return {op::RecordTrace{str(s, "name")}};
    if (kind == "require") {
      op::Require r;
      r.var = str(s, "var");
      r.reason = str(s, "reason");
      if (s.contains("equals")) r.equals = resolve_deep(s["equals"]);
      if (s.contains("min")) r.min = as_si(get(s, "min"), Dimension::none, "min");
      if (s.contains("max")) r.max = as_si(get(s, "max"), Dimension::none, "max");
      if (s.contains("fatal")) r.fatal = get(s, "fatal").get<bool>();
      return {r};
    }
    if (kind == "repeat") {
      const auto& count = get(s, "count");
      if (!count.is_number_integer() || count.get<std::int64_t>() < 0 || count.get<std::int64_t>() > kMaxRepeat) {
        fail(Errc::invalid_argument, "count must be an integer in [0, " + std::to_string(kMaxRepeat) + "]");
      }
      return {op::Repeat{count.get<std::uint32_t>(), steps(s["steps"], path + ".steps")}};
    }
    if (kind == "segment") {
      auto body = steps(s["steps"], path + ".steps");
      if (!timed_only(body)) fail(Errc::invalid_argument, "segments may only hold timed output steps");
      return {op::Segment{str(s, "name"), std::move(body)}};
    }
    fail(Errc::invalid_argument, "unknown step " + kind);
  }

  const ParamValues& params_;
  const rtio::CrateConfig& config_;
};

void collect_services(const OpList& ops, std::set<std::string>& out) {
  for (const auto& o : ops) {
    if (const auto* c = std::get_if<op::CallService>(&o.v)) out.insert(c->service);
    if (const auto* r = std::get_if<op::Repeat>(&o.v)) collect_services(r->body, out);
  }
}

}  // namespace

std::uint16_t resolve_trigger_input(const rtio::CrateConfig& config, const std::string& trigger) {
  if (auto it = config.ttl_names.find(trigger); it != config.ttl_names.end()) {
    if (config.ttl_direction(it->second) != rtio::TtlDirection::input) {
      fail(Errc::config_mismatch, trigger + " is not an input line");
    }
    return it->second;
  }
  try {
    const auto trig = rtio::trigger_from_string(trigger);
    if (auto it = config.trigger_inputs.find(trig); it != config.trigger_inputs.end()) return it->second;
  } catch (const Error&) {
  }
  fail(Errc::config_mismatch, "no trigger input " + trigger);
}

Program compile(const ExperimentScript& script, const ParamValues& params, const rtio::CrateConfig& config) {
  const auto bound = bind_params(script, params);
  Compiler c(bound, config);
  return {script.name, c.steps(script.steps, "steps")};
}

std::vector<std::string> referenced_services(const Program& program) {
  std::set<std::string> out;
  collect_services(program.ops, out);
  return {out.begin(), out.end()};
}

bool timed_only(const OpList& ops) {
  for (const auto& o : ops) {
    const bool timed = std::holds_alternative<op::Delay>(o.v) || std::holds_alternative<op::SetTtl>(o.v) ||
                       std::holds_alternative<op::TtlPulse>(o.v) || std::holds_alternative<op::SetVoltages>(o.v);
    if (!timed) return false;
  }
  return true;
}

}  // namespace circus::script
