#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "circus/atom.hpp"
#include "circus/pipeline/stages.hpp"

namespace circus::testkit {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "circus");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& bytes);

/// Random atom exercising every scalar type, arrays and nested clusters.
DataAtom random_atom(std::mt19937_64& rng, int depth = 2);

/// Truth kept alongside a generated run so tests can recompute observables
/// without going through the pipeline.
struct SyntheticRun {
  std::string run_id;
  double gain = 1.0;
  std::vector<pipeline::Image> images;  // acquisition i + 1
  std::vector<double> pulse_centers_s;
};

/// Writes runs/<id>/ with a detector config, camera images, MCP waveforms
/// (t0, dt, samples...) and a manifest, the way the DAQ lays out files.
SyntheticRun write_synthetic_run(const std::filesystem::path& data_root, const std::string& run_id,
                                 std::uint64_t seed, std::size_t acquisitions = 3, std::uint32_t width = 32,
                                 std::uint32_t height = 24);

DataAtom image_atom(const std::string& name, const pipeline::Image& img, AtomTimestamp ts);
DataAtom waveform_atom(const std::string& name, double t0, double dt, const std::vector<double>& samples,
                       AtomTimestamp ts);

}  // namespace circus::testkit
