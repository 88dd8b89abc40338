#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "circus/atom.hpp"
#include "circus/rtio/types.hpp"

namespace circus::rtio {

struct TraceSample {
  MachineTime at;
  double value = 0.0;
  bool operator==(const TraceSample&) const = default;
};

/// Rotating-wall output is recorded as a descriptor, not as sampled sine.
struct SineRecord {
  MachineTime at;
  std::uint16_t sector = 0;
  SineSet sine;
  bool operator==(const SineRecord&) const = default;
};

/// Piecewise-constant record of every output change, keyed by channel name
/// ("ttl3", "dac5", "hv5", "relay5", "pulser0", "trap").
struct WaveformTrace {
  std::map<std::string, std::vector<TraceSample>> channels;
  std::vector<SineRecord> sines;

  void record(const std::string& channel, MachineTime at, double value);
  void append(const WaveformTrace& other);
  bool empty() const { return channels.empty() && sines.empty(); }
  std::size_t sample_count() const;

  const std::vector<TraceSample>& samples(std::string_view channel) const;
  /// Times at which a channel goes from <= 0.5 to > 0.5.
  std::vector<MachineTime> rising_edges(std::string_view channel) const;
  /// Value held at time t (last sample at or before t), or `fallback`.
  double value_at(std::string_view channel, MachineTime t, double fallback = 0.0) const;
  /// Copy with every timestamp moved by -origin.
  WaveformTrace relative_to(MachineTime origin) const;

  bool operator==(const WaveformTrace&) const = default;
};

/// Export as a DataAtom cluster: one sub-cluster per channel holding
/// "time_mu" and "value" arrays; sine descriptors go under "_sines".
DataAtom trace_to_atom(const WaveformTrace& trace, std::string name, AtomTimestamp ts);
WaveformTrace trace_from_atom(const DataAtom& atom);

}  // namespace circus::rtio
