#include "circus/pipeline/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "circus/daq/daq_manager.hpp"
#include "circus/error.hpp"

namespace circus::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<std::string> read_if_exists(const fs::path& p) {
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) return std::nullopt;
  return read_bytes(p);
}

std::string hash_of(std::string_view bytes) { return hex64(fnv1a(bytes)); }

std::string raw_fingerprint(const fs::path& dir) {
  std::string acc;
  for (const auto& rel : raw_files(dir)) {
    const auto p = dir / rel;
    acc += rel.generic_string();
    acc += '\0';
    acc += std::to_string(fs::file_size(p));
    acc += '\0';
    acc += std::to_string(fs::last_write_time(p).time_since_epoch().count());
    acc += '\n';
  }
  return hash_of(acc);
}

std::string index_field(const json& index, const char* key) {
  return index.is_object() && index.contains(key) && index[key].is_string() ? index[key].get<std::string>() : "";
}

}  // namespace

bool run_id_less(const std::string& a, const std::string& b) {
  const bool na = all_digits(a), nb = all_digits(b);
  if (na != nb) return na;
  if (na) {
    const auto sa = a.substr(std::min(a.find_first_not_of('0'), a.size()));
    const auto sb = b.substr(std::min(b.find_first_not_of('0'), b.size()));
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    if (sa != sb) return sa < sb;
  }
  return a < b;
}

std::pair<std::string, std::string> split_column(const std::string& column) {
  const auto dot = column.rfind('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == column.size()) {
    fail(Errc::unknown_observable, column + " is not <detector>.<observable>");
  }
  return {column.substr(0, dot), column.substr(dot + 1)};
}

std::optional<std::pair<double, AtomTimestamp>> column_value(const GoldRecord& gold, const std::string& column) {
  const auto [det, obs] = split_column(column);
  auto it = gold.observables.find(det);
  if (it == gold.observables.end()) return std::nullopt;
  for (auto acq = it->second.rbegin(); acq != it->second.rend(); ++acq) {
    if (auto v = acq->second.find(obs); v != acq->second.end()) {
      AtomTimestamp at;
      if (auto d = gold.silver.detectors.find(det); d != gold.silver.detectors.end()) {
        if (auto leaf = d->second.find(acq->first); leaf != d->second.end()) at = leaf->second.at;
      }
      return std::make_pair(v->second, at);
    }
  }
  return std::nullopt;
}

Pipeline::Pipeline(fs::path data_root, GoldOptions options)
    : root_(std::move(data_root)), options_(options), options_hash_(hash_of(options_to_json(options).dump())) {}

fs::path Pipeline::run_dir(const std::string& run_id) const { return daq::runs_dir(root_) / run_id; }

std::vector<std::string> Pipeline::run_ids() const {
  std::vector<std::string> ids;
  std::error_code ec;
  const auto dir = daq::runs_dir(root_);
  if (!fs::is_directory(dir, ec)) return ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  }
  std::sort(ids.begin(), ids.end(), run_id_less);
  return ids;
}

std::mutex& Pipeline::run_lock(const std::string& run_id) {
  std::lock_guard lk(locks_mu_);
  auto& m = locks_[run_id];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

GoldRecord Pipeline::promote(const std::string& run_id) {
  const auto dir = run_dir(run_id);
  if (!fs::is_directory(dir)) fail(Errc::missing_run, "no run " + run_id);
  std::lock_guard lk(run_lock(run_id));

  const auto stages = dir / "_stages";
  json index;
  if (auto bytes = read_if_exists(stages / "index.json")) {
    index = json::parse(*bytes, nullptr, false);
  }
  const auto fp = raw_fingerprint(dir);
  const bool raw_same = index_field(index, "raw_fingerprint") == fp;
  const bool options_same = index_field(index, "options_hash") == options_hash_;

  std::optional<std::string> gold_bytes;
  if (raw_same && options_same) {
    gold_bytes = read_if_exists(stages / "gold.cbor");
    if (gold_bytes && hash_of(*gold_bytes) == index_field(index, "gold_hash")) {
      ++gold_cached_;
      return gold_from_json(json::from_cbor(*gold_bytes));
    }
  }

  fs::create_directories(stages);

  BronzeStore bronze;
  std::optional<std::string> bronze_bytes;
  if (raw_same) bronze_bytes = read_if_exists(stages / "bronze.bin");
  if (bronze_bytes && hash_of(*bronze_bytes) == index_field(index, "bronze_hash")) {
    bronze = deserialize_bronze(*bronze_bytes);
  } else {
    bronze = raw_to_bronze(dir);
    bronze_bytes = serialize_bronze(bronze);
    daq::write_file_atomic(stages / "bronze.bin", *bronze_bytes, false);
    ++bronze_built_;
  }
  const auto bronze_hash = hash_of(*bronze_bytes);

  SilverRecord silver;
  std::optional<std::string> silver_bytes;
  if (bronze_hash == index_field(index, "bronze_hash")) silver_bytes = read_if_exists(stages / "silver.cbor");
  if (silver_bytes && hash_of(*silver_bytes) == index_field(index, "silver_hash")) {
    silver = silver_from_json(json::from_cbor(*silver_bytes));
  } else {
    silver = bronze_to_silver(bronze);
    const auto cbor = json::to_cbor(silver_to_json(silver));
    silver_bytes = std::string(cbor.begin(), cbor.end());
    daq::write_file_atomic(stages / "silver.cbor", *silver_bytes, false);
    ++silver_built_;
  }
  const auto silver_hash = hash_of(*silver_bytes);

  auto gold = silver_to_gold(silver, options_);
  const auto cbor = json::to_cbor(gold_to_json(gold));
  const std::string out(cbor.begin(), cbor.end());
  daq::write_file_atomic(stages / "gold.cbor", out, false);
  ++gold_built_;

  const json new_index{{"raw_fingerprint", fp},       {"bronze_hash", bronze_hash}, {"silver_hash", silver_hash},
                       {"gold_hash", hash_of(out)}, {"options_hash", options_hash_}};
  daq::write_file_atomic(stages / "index.json", new_index.dump(2), false);
  return gold;
}

GoldRecord Pipeline::gold_from(const std::string& run_id, Source source) {
  const auto dir = run_dir(run_id);
  if (!fs::is_directory(dir)) fail(Errc::missing_run, "no run " + run_id);
  if (source == Source::raw) return silver_to_gold(bronze_to_silver(raw_to_bronze(dir)), options_);

  const auto stages = dir / "_stages";
  const char* file = source == Source::bronze ? "bronze.bin" : source == Source::silver ? "silver.cbor" : "gold.cbor";
  if (!fs::exists(stages / file)) promote(run_id);
  std::lock_guard lk(run_lock(run_id));
  const auto bytes = read_bytes(stages / file);
  switch (source) {
    case Source::bronze: return silver_to_gold(bronze_to_silver(deserialize_bronze(bytes)), options_);
    case Source::silver: return silver_to_gold(silver_from_json(json::from_cbor(bytes)), options_);
    default: return gold_from_json(json::from_cbor(bytes));
  }
}

DataAtom Pipeline::ledger(const std::string& run_id) {
  const auto gold = promote(run_id);
  auto all = gold.silver.ledger;
  all.insert(all.end(), gold.ledger.begin(), gold.ledger.end());
  return ledger_atom(run_id, all);
}

Dataset Pipeline::build_dataset(const std::vector<std::string>& observables, std::vector<std::string> runs) {
  for (const auto& c : observables) split_column(c);
  if (runs.empty()) runs = run_ids();
  std::sort(runs.begin(), runs.end(), run_id_less);
  runs.erase(std::unique(runs.begin(), runs.end()), runs.end());
  for (const auto& id : runs) {
    if (!fs::is_directory(run_dir(id))) fail(Errc::missing_run, "no run " + id);
  }

  // Runs are promoted in parallel; each worker only takes its own run's lock.
  std::vector<GoldRecord> golds(runs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t i; (i = next++) < runs.size();) {
      try {
        golds[i] = promote(runs[i]);
      } catch (...) {
        std::lock_guard lk(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(runs.size(), std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  Dataset d;
  d.columns = observables;
  std::vector<bool> seen(observables.size(), false);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    Dataset::Row row;
    row.run_id = runs[r];
    try {
      row.started_at = daq::read_manifest(run_dir(runs[r])).started_at;
    } catch (const Error&) {
    }
    for (std::size_t c = 0; c < observables.size(); ++c) {
      auto v = column_value(golds[r], observables[c]);
      seen[c] = seen[c] || v.has_value();
      row.values.push_back(v ? std::optional<double>(v->first) : std::nullopt);
    }
    d.rows.push_back(std::move(row));
  }
  for (std::size_t c = 0; c < observables.size(); ++c) {
    if (!seen[c]) fail(Errc::unknown_observable, observables[c] + " is not present in any requested run");
  }
  return d;
}

DataAtom Pipeline::last_observable(const std::string& name) {
  split_column(name);
  const auto ids = run_ids();
  for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
    if (auto v = column_value(promote(*it), name)) return {name, v->second, make_scalar(v->first)};
  }
  fail(Errc::no_data, "no run has a value for " + name);
}

StageStats Pipeline::stats() const { return {bronze_built_, silver_built_, gold_built_, gold_cached_}; }

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_dataset_csv(const Dataset& d, const fs::path& path) {
  std::ostringstream out;
  out << "run_id,started_at";
  for (const auto& c : d.columns) out << ',' << csv_field(c);
  out << '\n';
  for (const auto& row : d.rows) {
    out << csv_field(row.run_id) << ',' << (row.started_at ? csv_field(row.started_at->display) : "null");
    for (const auto& v : row.values) out << ',' << (v ? number(*v) : "null");
    out << '\n';
  }
  daq::write_file_atomic(path, out.str(), false);
}

json dataset_manifest(const Dataset& d, const fs::path& csv_path) {
  json rows = json::array();
  for (const auto& row : d.rows) {
    json values = json::object();
    for (std::size_t c = 0; c < d.columns.size(); ++c) {
      values[d.columns[c]] = row.values[c] ? json(*row.values[c]) : json(nullptr);
    }
    rows.push_back({{"run_id", row.run_id},
                    {"started_at", row.started_at ? encode_timestamp_json(*row.started_at) : json(nullptr)},
                    {"values", values}});
  }
  return {{"format", "csv"},
          {"file", csv_path.filename().string()},
          {"delimiter", ","},
          {"null", "null"},
          {"columns", json(std::vector<std::string>{"run_id", "started_at"})},
          {"observables", d.columns},
          {"rows", rows}};
}

}  // namespace circus::pipeline
