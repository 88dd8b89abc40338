#include "circus/orchestration/gateway.hpp"

#include <cstdlib>

#include <httplib.h>

#include "circus/error.hpp"

namespace circus::orchestration {

using nlohmann::json;

namespace {

constexpr std::size_t kSubscriberBacklog = 10'000;

json error_body(const Error& e) { return {{"error", std::string(to_string(e.code()))}, {"detail", e.what()}}; }

[[noreturn]] void invalid(const std::string& path, const std::string& what) {
  fail(Errc::invalid_command, path + ": " + what);
}

}  // namespace

Gateway::Gateway(GatewayOptions options) : options_(std::move(options)) {
  token_ = options_.token;
  if (!token_ && options_.token_from_env) {
    if (const char* env = std::getenv(kTokenEnv); env && *env) token_ = env;
  }
}

Gateway::~Gateway() { stop(); }

void Gateway::attach_node(actor::Node* node) {
  std::lock_guard lk(mu_);
  node_ = node;
}

void Gateway::add_monkey(const std::string& crate, Monkey* monkey) {
  std::lock_guard lk(mu_);
  monkeys_[crate] = monkey;
}

void Gateway::remove_monkey(const std::string& crate) {
  std::lock_guard lk(mu_);
  monkeys_.erase(crate);
}

void Gateway::set_library(ScriptLibrary library) {
  std::lock_guard lk(mu_);
  library_ = std::move(library);
}

void Gateway::on_submit(SubmitHandler handler) {
  std::lock_guard lk(mu_);
  submit_ = std::move(handler);
}

void Gateway::log(const std::string& line) {
  const auto stamped = timestamp_now().display + " " + line;
  {
    std::lock_guard lk(mu_);
    log_.push_back(stamped);
    while (log_.size() > kSnapshotLogLines) log_.pop_front();
  }
  publish({{"type", "log"}, {"line", stamped}});
}

void Gateway::publish(json event) {
  const auto line = event.dump();
  {
    std::lock_guard lk(events_mu_);
    for (auto& [id, sub] : subscribers_) {
      if (sub->lines.size() < kSubscriberBacklog) sub->lines.push_back(line);
    }
  }
  events_cv_.notify_all();
}

Monkey::Sink Gateway::monkey_sink(const std::string& crate) {
  return [this, crate](const MonkeyEvent& e) {
    using T = MonkeyEvent::Type;
    if (e.type == T::point_started || e.type == T::poll) {
      publish(event_to_json(e, crate));
      return;
    }
    std::string line = crate + " " + std::string(to_string(e.type));
    if (e.outcome && !e.outcome->ok()) line += " " + e.outcome->reason;
    if (e.type == T::paused) line += " (" + e.state.pause_reason + ")";
    publish(event_to_json(e, crate));
    log(line);

    actor::Node* node;
    {
      std::lock_guard lk(mu_);
      node = node_;
    }
    if (!node) return;
    const actor::Address source{node->name(), "orchestration/" + crate};
    if (e.type == T::paused && e.state.pause_reason != "operator") {
      node->report_error(actor::Severity::warning, source, e.state.pause_reason, line);
    } else if (e.type == T::stopped && e.outcome && e.outcome->status == script::RunStatus::fatal) {
      node->report_error(actor::Severity::error, source, e.outcome->reason, e.outcome->detail);
    }
  };
}

json Gateway::snapshot() const {
  std::lock_guard lk(mu_);
  json guardians = nullptr;
  json errors = json::array();
  if (node_) {
    guardians = actor::snapshot_to_json(node_->guardian_snapshot());
    for (const auto& r : node_->list_errors()) errors.push_back(actor::record_to_json(r));
  }
  json monkeys = json::array();
  for (const auto& [crate, m] : monkeys_) {
    monkeys.push_back({{"crate", crate}, {"state", state_to_json(m->state())}});
  }
  return {{"at", encode_timestamp_json(timestamp_now())},
          {"guardians", guardians},
          {"errors", errors},
          {"monkeys", monkeys},
          {"log", json(std::vector<std::string>(log_.begin(), log_.end()))}};
}

json Gateway::command(const json& cmd) {
  if (!cmd.is_object()) invalid("command", "expected an object");
  if (!cmd.contains("type") || !cmd["type"].is_string()) invalid("type", "missing");
  const auto type = cmd["type"].get<std::string>();

  if (type == "pause" || type == "resume" || type == "abort") {
    const auto c = type == "pause" ? Command::pause : type == "resume" ? Command::resume : Command::abort;
    std::vector<std::string> targets;
    {
      std::lock_guard lk(mu_);
      if (cmd.contains("crate")) {
        if (!cmd["crate"].is_string()) invalid("crate", "expected a string");
        const auto crate = cmd["crate"].get<std::string>();
        auto it = monkeys_.find(crate);
        if (it == monkeys_.end()) invalid("crate", "no monkey for " + crate);
        it->second->post(c);
        targets.push_back(crate);
      } else {
        for (const auto& [crate, m] : monkeys_) {
          m->post(c);
          targets.push_back(crate);
        }
      }
    }
    log("command " + type);
    return {{"ok", true}, {"type", type}, {"crates", targets}};
  }

  if (type == "acknowledge_error") {
    if (!cmd.contains("id")) invalid("id", "missing");
    std::uint64_t id = 0;
    const auto& jid = cmd["id"];
    try {
      id = jid.is_string() ? std::stoull(jid.get<std::string>()) : jid.get<std::uint64_t>();
    } catch (const std::exception&) {
      invalid("id", "expected an error id");
    }
    actor::Node* node;
    {
      std::lock_guard lk(mu_);
      node = node_;
    }
    if (!node) invalid("id", "no error manager attached");
    try {
      const auto rec = node->acknowledge_error(id);
      log("acknowledged error " + std::to_string(id));
      return {{"ok", true}, {"type", type}, {"error", actor::record_to_json(rec)}};
    } catch (const Error& e) {
      if (e.code() == Errc::unknown_id) invalid("id", e.message());
      throw;
    }
  }

  if (type == "submit_schedule") {
    if (!cmd.contains("schedule")) invalid("schedule", "missing");
    Schedule s;
    SubmitHandler handler;
    try {
      s = schedule_from_json(cmd["schedule"]);
      std::lock_guard lk(mu_);
      if (!library_.empty()) validate_schedule(s, library_);
      handler = submit_;
    } catch (const Error& e) {
      if (e.code() != Errc::schema_violation) throw;
      fail(Errc::invalid_command, "schedule." + e.message());
    }
    if (!handler) invalid("schedule", "no orchestrator accepts schedules");
    auto result = handler(s);
    log("schedule submitted with " + std::to_string(s.entries.size()) + " entries");
    return {{"ok", true}, {"type", type}, {"result", result}};
  }

  invalid("type", "unknown command " + type);
}

void Gateway::authorize(const std::string& authorization) const {
  if (!token_) return;
  if (authorization != "Bearer " + *token_) fail(Errc::unauthorized, "missing or wrong bearer token");
}

std::uint16_t Gateway::start() {
  if (server_) return port_;
  server_ = std::make_unique<httplib::Server>();
  auto guard = [this](const httplib::Request& req, httplib::Response& res) {
    try {
      authorize(req.get_header_value("Authorization"));
      return true;
    } catch (const Error& e) {
      res.status = 401;
      res.set_content(error_body(e).dump(), "application/json");
      return false;
    }
  };

  server_->Get("/v1/snapshot", [this, guard](const httplib::Request& req, httplib::Response& res) {
    if (!guard(req, res)) return;
    res.set_content(snapshot().dump(), "application/json");
  });

  server_->Post("/v1/command", [this, guard](const httplib::Request& req, httplib::Response& res) {
    if (!guard(req, res)) return;
    try {
      const auto body = json::parse(req.body, nullptr, false);
      if (body.is_discarded()) invalid("body", "not valid JSON");
      res.set_content(command(body).dump(), "application/json");
    } catch (const Error& e) {
      res.status = e.code() == Errc::invalid_command ? 400 : e.code() == Errc::unauthorized ? 401 : 500;
      res.set_content(error_body(e).dump(), "application/json");
    }
  });

  server_->Get("/v1/events", [this, guard](const httplib::Request& req, httplib::Response& res) {
    if (!guard(req, res)) return;
    auto sub = std::make_shared<Subscriber>();
    std::uint64_t id;
    {
      std::lock_guard lk(events_mu_);
      id = next_subscriber_++;
      subscribers_[id] = sub;
    }
    res.set_chunked_content_provider(
        "application/x-ndjson",
        [this, sub](std::size_t, httplib::DataSink& sink) {
          std::unique_lock lk(events_mu_);
          events_cv_.wait_for(lk, std::chrono::seconds(1), [&] { return closing_ || !sub->lines.empty(); });
          if (closing_) {
            sink.done();
            return false;
          }
          std::string out;
          if (sub->lines.empty()) {
            out = json{{"type", "heartbeat"}}.dump() + "\n";
          }
          while (!sub->lines.empty()) {
            out += sub->lines.front();
            out += '\n';
            sub->lines.pop_front();
          }
          lk.unlock();
          return sink.write(out.data(), out.size());
        },
        [this, id](bool) {
          std::lock_guard lk(events_mu_);
          subscribers_.erase(id);
        });
  });

  const int bound = options_.port == 0 ? server_->bind_to_any_port(options_.host)
                                       : (server_->bind_to_port(options_.host, options_.port) ? options_.port : -1);
  if (bound <= 0) {
    server_.reset();
    fail(Errc::io_error, "gateway cannot bind " + options_.host + ":" + std::to_string(options_.port));
  }
  port_ = static_cast<std::uint16_t>(bound);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void Gateway::stop() {
  {
    std::lock_guard lk(events_mu_);
    closing_ = true;
  }
  events_cv_.notify_all();
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
  server_.reset();
}

}  // namespace circus::orchestration
