#include "circus/rtio/trace.hpp"

#include <algorithm>

#include "circus/error.hpp"

namespace circus::rtio {

void WaveformTrace::record(const std::string& channel, MachineTime at, double value) {
  channels[channel].push_back({at, value});
}

void WaveformTrace::append(const WaveformTrace& other) {
  for (const auto& [name, samples] : other.channels) {
    auto& dst = channels[name];
    dst.insert(dst.end(), samples.begin(), samples.end());
  }
  sines.insert(sines.end(), other.sines.begin(), other.sines.end());
}

std::size_t WaveformTrace::sample_count() const {
  std::size_t n = sines.size();
  for (const auto& [_, s] : channels) n += s.size();
  return n;
}

const std::vector<TraceSample>& WaveformTrace::samples(std::string_view channel) const {
  static const std::vector<TraceSample> kEmpty;
  auto it = channels.find(std::string(channel));
  return it == channels.end() ? kEmpty : it->second;
}

std::vector<MachineTime> WaveformTrace::rising_edges(std::string_view channel) const {
  std::vector<MachineTime> out;
  double prev = 0.0;
  for (const auto& s : samples(channel)) {
    if (prev <= 0.5 && s.value > 0.5) out.push_back(s.at);
    prev = s.value;
  }
  return out;
}

double WaveformTrace::value_at(std::string_view channel, MachineTime t, double fallback) const {
  const auto& s = samples(channel);
  auto it = std::upper_bound(s.begin(), s.end(), t,
                             [](MachineTime x, const TraceSample& ts) { return x < ts.at; });
  if (it == s.begin()) return fallback;
  return std::prev(it)->value;
}

WaveformTrace WaveformTrace::relative_to(MachineTime origin) const {
  WaveformTrace out = *this;
  for (auto& [_, samples] : out.channels) {
    for (auto& s : samples) s.at -= origin;
  }
  for (auto& s : out.sines) s.at -= origin;
  return out;
}

DataAtom trace_to_atom(const WaveformTrace& trace, std::string name, AtomTimestamp ts) {
  Cluster root;
  for (const auto& [channel, samples] : trace.channels) {
    std::vector<double> times, values;
    times.reserve(samples.size());
    values.reserve(samples.size());
    for (const auto& s : samples) {
      times.push_back(static_cast<double>(s.at.mu()));
      values.push_back(s.value);
    }
    root.push_back({channel, make_cluster({{"time_mu", make_array(std::move(times))},
                                           {"value", make_array(std::move(values))}})});
  }
  if (!trace.sines.empty()) {
    std::vector<double> t, sector, f, a, p;
    for (const auto& s : trace.sines) {
      t.push_back(static_cast<double>(s.at.mu()));
      sector.push_back(s.sector);
      f.push_back(s.sine.frequency_hz);
      a.push_back(s.sine.amplitude_v);
      p.push_back(s.sine.phase_rad);
    }
    root.push_back({"_sines", make_cluster({{"amplitude_v", make_array(std::move(a))},
                                            {"frequency_hz", make_array(std::move(f))},
                                            {"phase_rad", make_array(std::move(p))},
                                            {"sector", make_array(std::move(sector))},
                                            {"time_mu", make_array(std::move(t))}})});
  }
  return DataAtom{std::move(name), std::move(ts), AtomPayload(std::move(root))};
}

namespace {

std::vector<double> doubles(const AtomPayload* p) {
  if (!p || !p->is_array()) fail(Errc::schema_violation, "trace: expected an array");
  const auto& a = p->array();
  if (auto d = std::get_if<std::vector<double>>(&a.values)) return *d;
  if (auto i = std::get_if<std::vector<std::int32_t>>(&a.values)) return {i->begin(), i->end()};
  if (auto f = std::get_if<std::vector<float>>(&a.values)) return {f->begin(), f->end()};
  fail(Errc::schema_violation, "trace: array is not numeric");
}

}  // namespace

WaveformTrace trace_from_atom(const DataAtom& atom) {
  WaveformTrace out;
  for (const auto& field : atom.data.cluster()) {
    if (field.name == "_sines") {
      auto t = doubles(field.value.find("time_mu"));
      auto sector = doubles(field.value.find("sector"));
      auto f = doubles(field.value.find("frequency_hz"));
      auto a = doubles(field.value.find("amplitude_v"));
      auto p = doubles(field.value.find("phase_rad"));
      for (std::size_t i = 0; i < t.size(); ++i) {
        out.sines.push_back({MachineTime(static_cast<std::int64_t>(t[i])),
                             static_cast<std::uint16_t>(sector[i]), SineSet{f[i], a[i], p[i]}});
      }
      continue;
    }
    auto t = doubles(field.value.find("time_mu"));
    auto v = doubles(field.value.find("value"));
    if (t.size() != v.size()) fail(Errc::schema_violation, "trace: time/value length mismatch");
    auto& samples = out.channels[field.name];
    for (std::size_t i = 0; i < t.size(); ++i) {
      samples.push_back({MachineTime(static_cast<std::int64_t>(t[i])), v[i]});
    }
  }
  return out;
}

}  // namespace circus::rtio
