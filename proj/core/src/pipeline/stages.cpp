#include "circus/pipeline/stages.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "circus/autotune/pulse_timing.hpp"
#include "circus/daq/daq_manager.hpp"
#include "circus/error.hpp"
#include "circus/pipeline/zip.hpp"

namespace circus::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string_view to_string(LeafKind k) noexcept {
  switch (k) {
    case LeafKind::waveform: return "waveform";
    case LeafKind::image: return "image";
    case LeafKind::atom: return "atom";
  }
  return "";
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// "<stem>__<digits>.json" -> (stem, digits)
std::optional<std::pair<std::string, std::uint64_t>> split_sequenced(std::string_view file) {
  constexpr std::string_view ext = ".json";
  if (file.size() <= ext.size() || file.substr(file.size() - ext.size()) != ext) return std::nullopt;
  const auto base = file.substr(0, file.size() - ext.size());
  const auto sep = base.rfind("__");
  if (sep == std::string_view::npos || sep + 2 == base.size()) return std::nullopt;
  const auto digits = base.substr(sep + 2);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) return std::nullopt;
  return std::make_pair(std::string(base.substr(0, sep)), std::stoull(std::string(digits)));
}

SourceMeta meta_for(std::string_view file, std::uint64_t ordinal, const std::map<std::string, std::string>& stems,
                    std::string container) {
  SourceMeta m;
  m.container = std::move(container);
  if (auto seq = split_sequenced(file)) {
    auto it = stems.find(seq->first);
    m.detector = it != stems.end() ? it->second : seq->first;
    m.acquisition = seq->second;
    m.format = "atom-json";
  } else if (file.size() > 5 && file.substr(file.size() - 5) == ".json") {
    m.detector = std::string(file.substr(0, file.size() - 5));
    m.acquisition = ordinal;
    m.format = "atom-json";
  } else {
    const auto dot = file.rfind('.');
    m.detector = std::string(file.substr(0, dot));
    m.acquisition = ordinal;
    m.format = "unknown";
  }
  return m;
}

}  // namespace

std::vector<fs::path> raw_files(const fs::path& run_dir) {
  std::vector<fs::path> files;
  for (auto it = fs::recursive_directory_iterator(run_dir); it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_directory() && it->path().filename() == "_stages") {
      it.disable_recursion_pending();
      continue;
    }
    if (!it->is_regular_file()) continue;
    auto rel = fs::relative(it->path(), run_dir);
    const auto name = rel.filename().string();
    if (rel == "manifest.json" || name.find(".tmp") != std::string::npos) continue;
    files.push_back(std::move(rel));
  }
  std::sort(files.begin(), files.end());
  return files;
}

BronzeStore raw_to_bronze(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) fail(Errc::missing_run, "no run directory " + run_dir.string());
  BronzeStore store;
  store.run_id = run_dir.filename().string();

  std::map<std::string, std::string> stems;
  if (fs::exists(run_dir / "manifest.json")) {
    for (const auto& a : daq::read_manifest(run_dir).atoms) stems[a.file_name] = a.name;
  }

  const auto files = raw_files(run_dir);
  for (const auto& rel : files) {
    auto bytes = read_file(run_dir / rel);
    const auto key = rel.generic_string();
    if (looks_like_zip(bytes)) {
      std::uint64_t ordinal = 0;
      for (auto& m : read_zip(bytes)) {
        const auto member_file = fs::path(m.name).filename().string();
        store.entries[key + "!" + m.name] = {meta_for(member_file, ++ordinal, stems, key), std::move(m.bytes)};
      }
    } else {
      store.entries[key] = {meta_for(rel.filename().string(), 0, stems, {}), std::move(bytes)};
    }
  }
  return store;
}

namespace {

constexpr std::string_view kBronzeMagic = "CIRCUSB1";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t& at) {
  if (at + 8 > in.size()) fail(Errc::malformed_document, "bronze cache truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  at += 8;
  return v;
}

void put_blob(std::string& out, std::string_view s) {
  put_u64(out, s.size());
  out += s;
}

std::string get_blob(std::string_view in, std::size_t& at) {
  const auto n = get_u64(in, at);
  if (at + n > in.size()) fail(Errc::malformed_document, "bronze cache truncated");
  std::string s(in.substr(at, n));
  at += n;
  return s;
}

}  // namespace

std::string serialize_bronze(const BronzeStore& store) {
  std::string out(kBronzeMagic);
  put_blob(out, store.run_id);
  put_u64(out, store.entries.size());
  for (const auto& [key, e] : store.entries) {
    put_blob(out, key);
    put_blob(out, json{{"detector", e.meta.detector},
                       {"acquisition", e.meta.acquisition},
                       {"format", e.meta.format},
                       {"container", e.meta.container}}
                      .dump());
    put_blob(out, e.bytes);
  }
  return out;
}

BronzeStore deserialize_bronze(std::string_view in) {
  if (in.substr(0, kBronzeMagic.size()) != kBronzeMagic) fail(Errc::malformed_document, "not a bronze cache");
  std::size_t at = kBronzeMagic.size();
  BronzeStore store;
  store.run_id = get_blob(in, at);
  const auto n = get_u64(in, at);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto key = get_blob(in, at);
    const auto meta = json::parse(get_blob(in, at));
    BronzeEntry e;
    e.meta = {meta.at("detector").get<std::string>(), meta.at("acquisition").get<std::uint64_t>(),
              meta.at("format").get<std::string>(), meta.at("container").get<std::string>()};
    e.bytes = get_blob(in, at);
    store.entries.emplace(std::move(key), std::move(e));
  }
  return store;
}

namespace {

std::optional<std::vector<double>> numeric_values(const AtomArray& a) {
  return std::visit(
      [](const auto& v) -> std::optional<std::vector<double>> {
        using T = typename std::decay_t<decltype(v)>::value_type;
        if constexpr (std::is_same_v<T, double> || std::is_same_v<T, float> || std::is_same_v<T, std::int32_t>) {
          return std::vector<double>(v.begin(), v.end());
        } else {
          return std::nullopt;
        }
      },
      a.values);
}

bool is_numeric_scalar(const AtomPayload& p) {
  if (!p.is_scalar()) return false;
  const auto t = scalar_type(p.scalar());
  return t == ScalarType::dbl || t == ScalarType::i32 || t == ScalarType::sgl;
}

}  // namespace

SilverRecord bronze_to_silver(const BronzeStore& store) {
  SilverRecord silver;
  silver.run_id = store.run_id;
  for (const auto& [key, entry] : store.entries) {
    if (entry.meta.format != "atom-json") {
      silver.ledger.push_back({key, "unknown format"});
      continue;
    }
    if (entry.bytes.empty()) {
      silver.ledger.push_back({key, "too short"});
      continue;
    }
    DataAtom atom;
    try {
      atom = decode_atom(entry.bytes);
    } catch (const Error& e) {
      silver.ledger.push_back({key, e.what()});
      continue;
    }

    const auto& name = atom.name;
    if (name.size() > kConfigSuffix.size() && name.substr(name.size() - kConfigSuffix.size()) == kConfigSuffix) {
      DetectorConfig cfg;
      cfg.raw = atom.data;
      if (const auto* g = atom.data.find("gain"); g && is_numeric_scalar(*g)) cfg.gain = g->as_double();
      silver.configs[name.substr(0, name.size() - kConfigSuffix.size())] = cfg;
      continue;
    }

    SilverLeaf leaf;
    leaf.source_key = key;
    leaf.at = atom.timestamp;
    const auto& data = atom.data;
    if (data.is_array() && numeric_values(data.array())) {
      auto v = *numeric_values(data.array());
      if (v.size() < 3) {
        silver.ledger.push_back({key, "too short"});
        continue;
      }
      if (!(v[1] > 0.0)) {
        silver.ledger.push_back({key, "non-positive time increment"});
        continue;
      }
      leaf.kind = LeafKind::waveform;
      leaf.waveform.t0 = v[0];
      leaf.waveform.dt = v[1];
      leaf.waveform.samples.assign(v.begin() + 2, v.end());
    } else if (data.is_cluster() && data.find("width") && data.find("height") && data.find("pixels")) {
      const auto* px = data.find("pixels");
      std::optional<std::vector<double>> pixels;
      if (px->is_array()) pixels = numeric_values(px->array());
      const double w = data.find("width")->as_double();
      const double h = data.find("height")->as_double();
      if (!pixels || w < 0 || h < 0 || static_cast<double>(pixels->size()) != w * h) {
        silver.ledger.push_back({key, "image shape does not match pixel count"});
        continue;
      }
      leaf.kind = LeafKind::image;
      leaf.image = {static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h), std::move(*pixels)};
    } else {
      leaf.kind = LeafKind::atom;
      leaf.payload = data;
    }

    auto& acqs = silver.detectors[name];
    if (!acqs.emplace(entry.meta.acquisition, std::move(leaf)).second) {
      silver.ledger.push_back({key, "duplicate acquisition"});
    }
  }
  return silver;
}

DataAtom ledger_atom(const std::string& run_id, const std::vector<ParseFailure>& ledger) {
  std::vector<std::string> keys, reasons;
  for (const auto& f : ledger) {
    keys.push_back(f.key);
    reasons.push_back(f.reason);
  }
  return {"pipeline/parse_failures", timestamp_now(),
          make_cluster({{"run_id", make_scalar(run_id)}, {"keys", make_array(keys)}, {"reasons", make_array(reasons)}})};
}

double border_median(const Image& img, std::uint32_t margin) {
  std::vector<double> border;
  for (std::uint32_t y = 0; y < img.height; ++y) {
    for (std::uint32_t x = 0; x < img.width; ++x) {
      const bool edge = x < margin || y < margin || x + margin >= img.width || y + margin >= img.height;
      if (edge) border.push_back(img.pixels[static_cast<std::size_t>(y) * img.width + x]);
    }
  }
  if (border.empty()) return 0.0;
  std::sort(border.begin(), border.end());
  const auto n = border.size();
  return n % 2 ? border[n / 2] : 0.5 * (border[n / 2 - 1] + border[n / 2]);
}

Observables image_observables(const Image& img, double gain, double background) {
  const auto n = img.pixels.size();
  double sum = 0.0;
  for (double p : img.pixels) sum += (p - background) / gain;
  const double mean = n ? sum / static_cast<double>(n) : 0.0;
  double ss = 0.0;
  for (double p : img.pixels) {
    const double d = (p - background) / gain - mean;
    ss += d * d;
  }
  const double std = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
  return {{"sum", sum}, {"mean", mean}, {"std", std}};
}

GoldRecord silver_to_gold(const SilverRecord& silver, const GoldOptions& options) {
  GoldRecord gold;
  gold.silver = silver;
  for (const auto& [det, acqs] : silver.detectors) {
    for (const auto& [acq, leaf] : acqs) {
      Observables obs;
      switch (leaf.kind) {
        case LeafKind::image: {
          double gain = 1.0;
          if (auto it = silver.configs.find(det); it != silver.configs.end()) gain = it->second.gain;
          if (!(gain > 0.0) || !std::isfinite(gain)) {
            gold.ledger.push_back({leaf.source_key, "detector gain must be positive"});
            continue;
          }
          const double bg = options.background.mode == BackgroundSpec::Mode::fixed
                                ? options.background.value
                                : border_median(leaf.image, options.background.margin);
          obs = image_observables(leaf.image, gain, bg);
          obs["background"] = bg;
          break;
        }
        case LeafKind::waveform:
          if (!leaf.waveform.samples.empty()) {
            const auto& s = leaf.waveform.samples;
            const auto peak = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
            obs["peak_time"] = leaf.waveform.time_at(peak) * 1e9;
          }
          try {
            obs["pulse_time"] = autotune::extract_pulse_time(leaf.waveform);
          } catch (const Error& e) {
            gold.ledger.push_back({leaf.source_key, e.what()});
            continue;
          }
          break;
        case LeafKind::atom:
          if (is_numeric_scalar(leaf.payload)) {
            obs["value"] = leaf.payload.as_double();
          } else if (leaf.payload.is_cluster()) {
            for (const auto& f : leaf.payload.cluster()) {
              if (is_numeric_scalar(f.value)) obs[f.name] = f.value.as_double();
            }
          }
          break;
      }
      if (!obs.empty()) gold.observables[det][acq] = std::move(obs);
    }
  }
  return gold;
}

namespace {

json payload_json(const AtomPayload& p, const AtomTimestamp& at) { return encode_atom_json({"leaf", at, p}); }

AtomPayload payload_from(const json& j) { return decode_atom_json(j).data; }

json ledger_json(const std::vector<ParseFailure>& ledger) {
  json out = json::array();
  for (const auto& f : ledger) out.push_back({{"key", f.key}, {"reason", f.reason}});
  return out;
}

std::vector<ParseFailure> ledger_from(const json& j) {
  std::vector<ParseFailure> out;
  for (const auto& f : j) out.push_back({f.at("key").get<std::string>(), f.at("reason").get<std::string>()});
  return out;
}

}  // namespace

json silver_to_json(const SilverRecord& s) {
  json dets = json::object();
  for (const auto& [det, acqs] : s.detectors) {
    json a = json::object();
    for (const auto& [acq, leaf] : acqs) {
      json l{{"kind", to_string(leaf.kind)}, {"source_key", leaf.source_key}, {"at", encode_timestamp_json(leaf.at)}};
      switch (leaf.kind) {
        case LeafKind::waveform:
          l["waveform"] = {{"t0", leaf.waveform.t0}, {"dt", leaf.waveform.dt}, {"samples", leaf.waveform.samples}};
          break;
        case LeafKind::image:
          l["image"] = {{"width", leaf.image.width}, {"height", leaf.image.height}, {"pixels", leaf.image.pixels}};
          break;
        case LeafKind::atom: l["payload"] = payload_json(leaf.payload, leaf.at); break;
      }
      a[std::to_string(acq)] = std::move(l);
    }
    dets[det] = std::move(a);
  }
  json cfgs = json::object();
  for (const auto& [det, c] : s.configs) cfgs[det] = {{"gain", c.gain}, {"raw", payload_json(c.raw, {})}};
  return {{"run_id", s.run_id}, {"detectors", dets}, {"configs", cfgs}, {"ledger", ledger_json(s.ledger)}};
}

SilverRecord silver_from_json(const json& j) {
  try {
    SilverRecord s;
    s.run_id = j.at("run_id").get<std::string>();
    for (const auto& [det, acqs] : j.at("detectors").items()) {
      auto& out = s.detectors[det];
      for (const auto& [acq, l] : acqs.items()) {
        SilverLeaf leaf;
        leaf.source_key = l.at("source_key").get<std::string>();
        leaf.at = decode_timestamp_json(l.at("at"));
        const auto kind = l.at("kind").get<std::string>();
        if (kind == "waveform") {
          leaf.kind = LeafKind::waveform;
          const auto& w = l.at("waveform");
          leaf.waveform = {w.at("t0").get<double>(), w.at("dt").get<double>(), w.at("samples").get<std::vector<double>>()};
        } else if (kind == "image") {
          leaf.kind = LeafKind::image;
          const auto& im = l.at("image");
          leaf.image = {im.at("width").get<std::uint32_t>(), im.at("height").get<std::uint32_t>(),
                        im.at("pixels").get<std::vector<double>>()};
        } else {
          leaf.kind = LeafKind::atom;
          leaf.payload = payload_from(l.at("payload"));
        }
        out.emplace(std::stoull(acq), std::move(leaf));
      }
    }
    for (const auto& [det, c] : j.at("configs").items()) {
      s.configs[det] = {c.at("gain").get<double>(), payload_from(c.at("raw"))};
    }
    s.ledger = ledger_from(j.at("ledger"));
    return s;
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("silver record: ") + e.what());
  }
}

json gold_to_json(const GoldRecord& g) {
  json obs = json::object();
  for (const auto& [det, acqs] : g.observables) {
    json a = json::object();
    for (const auto& [acq, o] : acqs) a[std::to_string(acq)] = o;
    obs[det] = std::move(a);
  }
  return {{"silver", silver_to_json(g.silver)}, {"observables", obs}, {"ledger", ledger_json(g.ledger)}};
}

GoldRecord gold_from_json(const json& j) {
  try {
    GoldRecord g;
    g.silver = silver_from_json(j.at("silver"));
    for (const auto& [det, acqs] : j.at("observables").items()) {
      for (const auto& [acq, o] : acqs.items()) g.observables[det][std::stoull(acq)] = o.get<Observables>();
    }
    g.ledger = ledger_from(j.at("ledger"));
    return g;
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("gold record: ") + e.what());
  }
}

json options_to_json(const GoldOptions& o) {
  return {{"background",
           {{"mode", o.background.mode == BackgroundSpec::Mode::fixed ? "fixed" : "border_median"},
            {"margin", o.background.margin},
            {"value", o.background.value}}}};
}

}  // namespace circus::pipeline
