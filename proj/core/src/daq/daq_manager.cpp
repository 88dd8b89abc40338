#include "circus/daq/daq_manager.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "circus/error.hpp"

namespace circus::daq {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(RunState s) noexcept {
  switch (s) {
    case RunState::open: return "open";
    case RunState::closing: return "closing";
    case RunState::closed: return "closed";
  }
  return "";
}

json manifest_to_json(const Manifest& m) {
  json atoms = json::array();
  for (const auto& a : m.atoms) {
    atoms.push_back({{"name", a.name}, {"file_name", a.file_name}, {"count", a.count}, {"type_tag", a.type_tag}});
  }
  return {{"run_id", m.run_id},
          {"started_at", encode_timestamp_json(m.started_at)},
          {"stopped_at", m.stopped_at ? encode_timestamp_json(*m.stopped_at) : json(nullptr)},
          {"atoms", atoms}};
}

Manifest manifest_from_json(const json& j) {
  try {
    Manifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.started_at = decode_timestamp_json(j.at("started_at"));
    if (j.contains("stopped_at") && !j.at("stopped_at").is_null()) {
      m.stopped_at = decode_timestamp_json(j.at("stopped_at"));
    }
    for (const auto& a : j.at("atoms")) {
      m.atoms.push_back({a.at("name").get<std::string>(), a.at("file_name").get<std::string>(),
                         a.at("count").get<std::uint64_t>(), a.at("type_tag").get<std::string>()});
    }
    return m;
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("manifest: ") + e.what());
  }
}

Manifest read_manifest(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json");
  if (!in) fail(Errc::missing_run, "no manifest in " + run_dir.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(Errc::malformed_document, e.what());
  }
  return manifest_from_json(j);
}

std::string sanitize_name(std::string_view atom_name) {
  std::string s(atom_name);
  std::replace(s.begin(), s.end(), '/', '.');
  return s;
}

std::string atom_file_name(std::string_view atom_name, std::uint64_t seq) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "__%06llu.json", static_cast<unsigned long long>(seq));
  return sanitize_name(atom_name) + buf;
}

fs::path default_data_root() {
  if (const char* env = std::getenv("CIRCUS_DATA_ROOT"); env && *env) return env;
  return "data";
}

fs::path runs_dir(const fs::path& root) { return root / "runs"; }

namespace {

void sync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

std::string errno_text(const fs::path& p) { return p.string() + ": " + std::strerror(errno); }

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes, bool sync) {
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid()) + "." + std::to_string(counter++);
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) fail(Errc::io_error, errno_text(tmp));
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const auto msg = errno_text(tmp);
      ::close(fd);
      ::unlink(tmp.c_str());
      fail(Errc::io_error, msg);
    }
    done += static_cast<std::size_t>(n);
  }
  if (sync && ::fsync(fd) != 0) {
    const auto msg = errno_text(tmp);
    ::close(fd);
    ::unlink(tmp.c_str());
    fail(Errc::io_error, msg);
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    const auto msg = errno_text(path);
    ::unlink(tmp.c_str());
    fail(Errc::io_error, msg);
  }
  if (sync) sync_dir(path.parent_path());
}

struct DaqManager::Run {
  struct NameInfo {
    std::string file_name;
    std::uint64_t count = 0;
    std::string signature;
  };

  std::string id;
  fs::path dir;
  AtomTimestamp started_at;
  std::optional<AtomTimestamp> stopped_at;
  std::chrono::steady_clock::time_point started_mono;

  mutable std::mutex mu;  // guards everything below
  RunState state = RunState::open;
  std::map<std::string, NameInfo> names;
  std::set<std::string> stems;
  std::uint64_t atom_count = 0;

  std::mutex q_mu;
  std::condition_variable q_cv;
  std::deque<DataAtom> queue;
  std::size_t busy = 0;
  bool stopping = false;
  std::thread writer;
};

DaqManager::DaqManager(fs::path root, DaqOptions options) : root_(std::move(root)), options_(std::move(options)) {
  fs::create_directories(runs_dir(root_));
}

DaqManager::~DaqManager() {
  std::vector<std::string> open;
  {
    std::lock_guard lk(mu_);
    for (const auto& [id, run] : runs_) {
      if (run->state == RunState::open) open.push_back(id);
    }
  }
  for (const auto& id : open) {
    try {
      run_stop(id);
    } catch (const std::exception&) {
    }
  }
}

std::shared_ptr<DaqManager::Run> DaqManager::find(const std::string& run_id) const {
  std::lock_guard lk(mu_);
  auto it = runs_.find(run_id);
  if (it == runs_.end()) fail(Errc::missing_run, "no run " + run_id);
  return it->second;
}

std::string DaqManager::next_run_id() const {
  std::uint64_t max_id = 0;
  auto consider = [&](const std::string& name) {
    if (name.empty() || !std::all_of(name.begin(), name.end(), [](char c) { return c >= '0' && c <= '9'; })) return;
    max_id = std::max<std::uint64_t>(max_id, std::stoull(name));
  };
  for (const auto& [id, run] : runs_) consider(id);
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(runs_dir(root_), ec)) consider(entry.path().filename().string());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(max_id + 1));
  return buf;
}

RunHandle DaqManager::run_start(const std::string& requested) {
  std::shared_ptr<Run> run;
  {
    std::lock_guard lk(mu_);
    const auto id = requested.empty() ? next_run_id() : requested;
    if (id.find('/') != std::string::npos || id == "." || id == "..") {
      fail(Errc::invalid_argument, "run id must be a plain directory name");
    }
    if (runs_.count(id) || fs::exists(runs_dir(root_) / id / "manifest.json")) {
      fail(Errc::duplicate_run, "run " + id + " already exists");
    }
    run = std::make_shared<Run>();
    run->id = id;
    run->dir = runs_dir(root_) / id;
    run->started_at = timestamp_now();
    run->started_mono = std::chrono::steady_clock::now();
    fs::create_directories(run->dir);
    write_manifest(*run);
    runs_[id] = run;
  }
  run->writer = std::thread([this, run] { writer_loop(run); });
  return handle(run->id);
}

fs::path DaqManager::store(Run& run, const DataAtom& atom) {
  validate_atom(atom);
  const auto sig = shape_signature(atom.data);
  std::lock_guard lk(run.mu);
  if (run.state != RunState::open) fail(Errc::run_closed, "run " + run.id + " is " + std::string(to_string(run.state)));
  auto it = run.names.find(atom.name);
  if (it == run.names.end()) {
    const auto stem = sanitize_name(atom.name);
    if (run.stems.count(stem)) {
      fail(Errc::invalid_argument, "atom name " + atom.name + " collides with another after sanitizing");
    }
    run.stems.insert(stem);
    it = run.names.emplace(atom.name, Run::NameInfo{stem, 0, sig}).first;
  } else if (it->second.signature != sig) {
    fail(Errc::type_changed, atom.name + " was " + it->second.signature + ", now " + sig);
  }
  const auto seq = it->second.count + 1;
  const auto path = run.dir / atom_file_name(atom.name, seq);
  write_file_atomic(path, encode_atom(atom), options_.sync);
  it->second.count = seq;
  ++run.atom_count;
  return path;
}

fs::path DaqManager::write_atom(const std::string& run_id, const DataAtom& atom) {
  auto run = find(run_id);
  return store(*run, atom);
}

void DaqManager::submit(const std::string& run_id, DataAtom atom) {
  auto run = find(run_id);
  {
    std::lock_guard lk(run->mu);
    if (run->state != RunState::open) fail(Errc::run_closed, "run " + run_id + " is not open");
  }
  {
    std::lock_guard lk(run->q_mu);
    if (run->queue.size() >= options_.queue_limit) {
      const std::string text = "DAQ queue for run " + run_id + " is full (" + std::to_string(options_.queue_limit) + ")";
      if (options_.on_error) options_.on_error("ResourceExhausted", text);
      fail(Errc::resource_exhausted, text);
    }
    run->queue.push_back(std::move(atom));
  }
  run->q_cv.notify_all();
}

void DaqManager::writer_loop(const std::shared_ptr<Run>& run) {
  std::unique_lock lk(run->q_mu);
  for (;;) {
    run->q_cv.wait(lk, [&] { return run->stopping || !run->queue.empty(); });
    if (run->queue.empty()) break;
    auto atom = std::move(run->queue.front());
    run->queue.pop_front();
    ++run->busy;
    lk.unlock();
    try {
      store(*run, atom);
    } catch (const Error& e) {
      {
        std::lock_guard elk(err_mu_);
        last_error_ = e.what();
      }
      if (options_.on_error) options_.on_error(std::string(circus::to_string(e.code())), e.what());
    }
    lk.lock();
    --run->busy;
    run->q_cv.notify_all();
  }
}

void DaqManager::write_manifest(const Run& run) {
  Manifest m;
  m.run_id = run.id;
  m.started_at = run.started_at;
  m.stopped_at = run.stopped_at;
  for (const auto& [name, info] : run.names) m.atoms.push_back({name, info.file_name, info.count, info.signature});
  write_file_atomic(run.dir / "manifest.json", manifest_to_json(m).dump(2), options_.sync);
}

RunSummary DaqManager::run_stop(const std::string& run_id) {
  auto run = find(run_id);
  {
    std::lock_guard lk(run->mu);
    if (run->state != RunState::open) fail(Errc::run_closed, "run " + run_id + " already stopped");
  }
  {
    std::lock_guard lk(run->q_mu);
    run->stopping = true;
  }
  run->q_cv.notify_all();
  if (run->writer.joinable()) run->writer.join();

  RunSummary summary;
  {
    std::lock_guard lk(run->mu);
    run->state = RunState::closing;
    run->stopped_at = timestamp_now();
    write_manifest(*run);
    run->state = RunState::closed;
    summary.run_id = run->id;
    summary.atom_count = run->atom_count;
    for (const auto& [name, info] : run->names) summary.names.push_back(name);
    summary.duration_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - run->started_mono).count();
  }
  return summary;
}

RunHandle DaqManager::handle(const std::string& run_id) const {
  auto run = find(run_id);
  std::lock_guard lk(run->mu);
  return {run->id, run->started_at, run->state, run->atom_count};
}

std::vector<std::string> DaqManager::open_runs() const {
  std::lock_guard lk(mu_);
  std::vector<std::string> ids;
  for (const auto& [id, run] : runs_) {
    std::lock_guard rl(run->mu);
    if (run->state == RunState::open) ids.push_back(id);
  }
  return ids;
}

std::optional<std::string> DaqManager::last_async_error() const {
  std::lock_guard lk(err_mu_);
  return last_error_;
}

}  // namespace circus::daq
