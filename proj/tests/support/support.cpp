#include "support.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "circus/daq/daq_manager.hpp"

namespace circus::testkit {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

namespace {

std::string random_name(std::mt19937_64& rng) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz_0123456789";
  std::uniform_int_distribution<std::size_t> len(1, 10), pick(0, alphabet.size() - 1);
  std::string s(1, alphabet[pick(rng) % 26]);
  for (auto n = len(rng); n > 1; --n) s += alphabet[pick(rng)];
  return s;
}

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {"a", "Z", " ", "\"", "\\", "\n", "µ", "é", "{}", "[x]", "7"};
  std::uniform_int_distribution<std::size_t> len(0, 12), pick(0, pieces.size() - 1);
  std::string s;
  for (auto n = len(rng); n > 0; --n) s += pieces[pick(rng)];
  return s;
}

double random_double(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 3);
  switch (kind(rng)) {
    case 0: return std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    case 1: return std::ldexp(std::uniform_real_distribution<double>(-1.0, 1.0)(rng),
                              std::uniform_int_distribution<int>(-300, 300)(rng));
    case 2: return static_cast<double>(std::uniform_int_distribution<int>(-1000, 1000)(rng));
    default: return 0.0;
  }
}

Scalar random_scalar(std::mt19937_64& rng, ScalarType t) {
  switch (t) {
    case ScalarType::dbl: return random_double(rng);
    case ScalarType::i32: return std::uniform_int_distribution<std::int32_t>()(rng);
    case ScalarType::sgl: return static_cast<float>(std::uniform_real_distribution<double>(-1e6, 1e6)(rng));
    case ScalarType::boolean: return static_cast<bool>(rng() & 1);
    case ScalarType::str: return random_text(rng);
  }
  return 0.0;
}

AtomPayload random_array(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(0, 8);
  const auto n = len(rng);
  switch (std::uniform_int_distribution<int>(0, 4)(rng)) {
    case 0: {
      std::vector<double> v(n);
      for (auto& x : v) x = random_double(rng);
      return make_array(v);
    }
    case 1: {
      std::vector<std::int32_t> v(n);
      for (auto& x : v) x = std::uniform_int_distribution<std::int32_t>()(rng);
      return make_array(v);
    }
    case 2: {
      std::vector<float> v(n);
      for (auto& x : v) x = static_cast<float>(std::uniform_real_distribution<double>(-100, 100)(rng));
      return make_array(v);
    }
    case 3: {
      std::vector<bool> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = rng() & 1;
      return make_array(v);
    }
    default: {
      std::vector<std::string> v(n);
      for (auto& x : v) x = random_text(rng);
      return make_array(v);
    }
  }
}

AtomPayload random_payload(std::mt19937_64& rng, int depth) {
  const int kinds = depth > 0 ? 3 : 2;
  switch (std::uniform_int_distribution<int>(0, kinds - 1)(rng)) {
    case 0: return AtomPayload(random_scalar(rng, static_cast<ScalarType>(std::uniform_int_distribution<int>(0, 4)(rng))));
    case 1: return random_array(rng);
    default: {
      Cluster c;
      const auto n = std::uniform_int_distribution<int>(0, 5)(rng);
      for (int i = 0; i < n; ++i) {
        std::string name = random_name(rng) + std::to_string(i);
        c.push_back({name, random_payload(rng, depth - 1)});
      }
      return AtomPayload(std::move(c));
    }
  }
}

std::string atom_file(const std::string& stem, std::uint64_t seq) { return daq::atom_file_name(stem, seq); }

}  // namespace

DataAtom random_atom(std::mt19937_64& rng, int depth) {
  DataAtom a;
  a.name = random_name(rng);
  if (rng() & 1) a.name += "/" + random_name(rng);
  const auto sec = std::uniform_int_distribution<std::uint64_t>(0, 4'000'000'000ull)(rng);
  const auto ns = std::uniform_int_distribution<std::uint32_t>(0, 999'999'999)(rng);
  std::optional<std::uint64_t> clock;
  if (rng() & 1) clock = rng() >> 1;
  a.timestamp = make_timestamp(sec, ns, clock);
  a.data = random_payload(rng, depth);
  return a;
}

DataAtom image_atom(const std::string& name, const pipeline::Image& img, AtomTimestamp ts) {
  return {name, std::move(ts),
          make_cluster({{"width", make_scalar(static_cast<std::int32_t>(img.width))},
                        {"height", make_scalar(static_cast<std::int32_t>(img.height))},
                        {"pixels", make_array(img.pixels)}})};
}

DataAtom waveform_atom(const std::string& name, double t0, double dt, const std::vector<double>& samples,
                       AtomTimestamp ts) {
  std::vector<double> v{t0, dt};
  v.insert(v.end(), samples.begin(), samples.end());
  return {name, std::move(ts), make_array(v)};
}

SyntheticRun write_synthetic_run(const fs::path& data_root, const std::string& run_id, std::uint64_t seed,
                                 std::size_t acquisitions, std::uint32_t width, std::uint32_t height) {
  std::mt19937_64 rng(seed);
  SyntheticRun run;
  run.run_id = run_id;
  run.gain = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
  const auto dir = data_root / "runs" / run_id;
  fs::create_directories(dir);

  const std::uint64_t t_base = 1'700'000'000ull + seed * 1000;
  daq::Manifest manifest;
  manifest.run_id = run_id;
  manifest.started_at = make_timestamp(t_base, 0);
  manifest.stopped_at = make_timestamp(t_base + 60, 0);

  const std::string cam = "mcp/camera";
  const std::string wave = "mcp/waveform";
  const auto cam_stem = daq::sanitize_name(cam);
  const auto wave_stem = daq::sanitize_name(wave);
  const auto cfg_stem = daq::sanitize_name(cam + ".config");

  DataAtom cfg{cam + ".config", make_timestamp(t_base, 1),
               make_cluster({{"gain", make_scalar(run.gain)}, {"exposure_ms", make_scalar(10.0)}})};
  write_file(dir / atom_file(cfg_stem, 1), encode_atom(cfg));

  std::normal_distribution<double> noise(0.0, 3.0);
  std::uniform_real_distribution<double> level(50.0, 150.0);
  for (std::size_t a = 0; a < acquisitions; ++a) {
    pipeline::Image img{width, height, std::vector<double>(static_cast<std::size_t>(width) * height)};
    const double bg = level(rng);
    const double cx = std::uniform_real_distribution<double>(width * 0.3, width * 0.7)(rng);
    const double cy = std::uniform_real_distribution<double>(height * 0.3, height * 0.7)(rng);
    for (std::uint32_t y = 0; y < height; ++y) {
      for (std::uint32_t x = 0; x < width; ++x) {
        const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        img.pixels[static_cast<std::size_t>(y) * width + x] =
            std::round(bg + 400.0 * std::exp(-r2 / 18.0) + noise(rng));
      }
    }
    write_file(dir / atom_file(cam_stem, a + 1), encode_atom(image_atom(cam, img, make_timestamp(t_base + a + 1, 0))));
    run.images.push_back(std::move(img));

    const double dt = 1e-9;
    const double center = std::uniform_real_distribution<double>(200e-9, 800e-9)(rng);
    std::vector<double> samples(1000);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double t = static_cast<double>(i) * dt;
      samples[i] = 0.8 * std::exp(-0.5 * std::pow((t - center) / 20e-9, 2));
    }
    write_file(dir / atom_file(wave_stem, a + 1),
               encode_atom(waveform_atom(wave, 0.0, dt, samples, make_timestamp(t_base + a + 1, 5))));
    run.pulse_centers_s.push_back(center);
  }

  manifest.atoms = {{cam, cam_stem, acquisitions, "Cluster"},
                    {cam + ".config", cfg_stem, 1, "Cluster"},
                    {wave, wave_stem, acquisitions, "Array"}};
  write_file(dir / "manifest.json", daq::manifest_to_json(manifest).dump(2));
  return run;
}

}  // namespace circus::testkit
