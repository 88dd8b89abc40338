#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "circus/atom.hpp"
#include "circus/waveform.hpp"

namespace circus::pipeline {

// ---- bronze: raw bytes with source metadata --------------------------------

struct SourceMeta {
  std::string detector;
  std::uint64_t acquisition = 0;
  std::string format;     // "atom-json" or "unknown"
  std::string container;  // archive file name for zip members, else empty
  bool operator==(const SourceMeta&) const = default;
};

struct BronzeEntry {
  SourceMeta meta;
  std::string bytes;
  bool operator==(const BronzeEntry&) const = default;
};

/// Key: path relative to the run directory; zip members are "<archive>!<member>".
struct BronzeStore {
  std::string run_id;
  std::map<std::string, BronzeEntry> entries;
  bool operator==(const BronzeStore&) const = default;
};

/// Data files of a run directory, relative and sorted.
std::vector<std::filesystem::path> raw_files(const std::filesystem::path& run_dir);

/// Captures every data file of runs/<id>/ (manifest, temp files and the
/// stage cache excluded). Throws MissingRun.
BronzeStore raw_to_bronze(const std::filesystem::path& run_dir);

/// Concatenated binary form used for the bronze cache.
std::string serialize_bronze(const BronzeStore& store);
BronzeStore deserialize_bronze(std::string_view bytes);

// ---- silver: parsed three-level structure ----------------------------------

struct Image {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<double> pixels;  // row-major
  bool operator==(const Image&) const = default;
};

enum class LeafKind { waveform, image, atom };
std::string_view to_string(LeafKind k) noexcept;

struct SilverLeaf {
  LeafKind kind = LeafKind::atom;
  std::string source_key;
  AtomTimestamp at;
  Waveform waveform;
  Image image;
  AtomPayload payload;  // generic leaves keep the decoded payload
  bool operator==(const SilverLeaf&) const = default;
};

struct DetectorConfig {
  double gain = 1.0;
  AtomPayload raw;
  bool operator==(const DetectorConfig&) const = default;
};

struct ParseFailure {
  std::string key;
  std::string reason;
  bool operator==(const ParseFailure&) const = default;
};

struct SilverRecord {
  std::string run_id;
  /// detector -> acquisition index -> leaf
  std::map<std::string, std::map<std::uint64_t, SilverLeaf>> detectors;
  std::map<std::string, DetectorConfig> configs;
  std::vector<ParseFailure> ledger;
  bool operator==(const SilverRecord&) const = default;
};

/// Atoms named "<detector>.config" carry detector settings ("gain").
inline constexpr std::string_view kConfigSuffix = ".config";

SilverRecord bronze_to_silver(const BronzeStore& store);
/// The parse-failure ledger as a DataAtom for the console.
DataAtom ledger_atom(const std::string& run_id, const std::vector<ParseFailure>& ledger);

// ---- gold: silver plus observables -----------------------------------------

struct BackgroundSpec {
  enum class Mode { border_median, fixed } mode = Mode::border_median;
  std::uint32_t margin = 8;
  double value = 0.0;
};

struct GoldOptions {
  BackgroundSpec background;
};

using Observables = std::map<std::string, double>;

struct GoldRecord {
  SilverRecord silver;
  /// detector -> acquisition -> observable name -> value
  std::map<std::string, std::map<std::uint64_t, Observables>> observables;
  std::vector<ParseFailure> ledger;
  bool operator==(const GoldRecord&) const = default;
};

/// Median of the pixels within `margin` of any edge (all pixels when the
/// image is smaller than the frame).
double border_median(const Image& img, std::uint32_t margin);
/// sum/mean/std (population) of (pixel - background) / gain, accumulated in
/// row-major order.
Observables image_observables(const Image& img, double gain, double background);

/// Images get sum/mean/std/background; waveforms get pulse_time (50%
/// crossing, ns) and peak_time (largest sample, ns); numeric atoms get
/// "value" or one observable per numeric cluster field.
GoldRecord silver_to_gold(const SilverRecord& silver, const GoldOptions& options = {});

// ---- serialization & hashing ------------------------------------------------

nlohmann::json silver_to_json(const SilverRecord& s);
SilverRecord silver_from_json(const nlohmann::json& j);
nlohmann::json gold_to_json(const GoldRecord& g);
GoldRecord gold_from_json(const nlohmann::json& j);
nlohmann::json options_to_json(const GoldOptions& o);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);
std::string hex64(std::uint64_t v);

}  // namespace circus::pipeline
