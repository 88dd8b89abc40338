#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "circus/actor/node.hpp"
#include "circus/orchestration/monkey.hpp"
#include "circus/orchestration/schedule.hpp"

namespace httplib {
class Server;
}

namespace circus::orchestration {

inline constexpr std::size_t kSnapshotLogLines = 200;
inline constexpr const char* kTokenEnv = "CIRCUS_CONSOLE_TOKEN";

struct GatewayOptions {
  std::string host = "127.0.0.1";
  /// 0 picks an ephemeral port.
  std::uint16_t port = 0;
  /// Bearer token required on every request; defaults to $CIRCUS_CONSOLE_TOKEN.
  std::optional<std::string> token;
  bool token_from_env = true;
};

/// Console gateway: read-only snapshots of guardians, errors, monkey states
/// and the recent log; validated commands forwarded to their owners; and an
/// NDJSON event stream.
///
///   GET  /v1/snapshot  -> snapshot JSON
///   POST /v1/command   -> {"ok":true,...} | 400 InvalidCommand | 401 Unauthorized
///   GET  /v1/events    -> one JSON event per line
class Gateway {
 public:
  using SubmitHandler = std::function<nlohmann::json(const Schedule&)>;

  explicit Gateway(GatewayOptions options = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void attach_node(actor::Node* node);
  void add_monkey(const std::string& crate, Monkey* monkey);
  void remove_monkey(const std::string& crate);
  void set_library(ScriptLibrary library);
  void on_submit(SubmitHandler handler);

  /// Appends to the log ring and publishes a "log" event.
  void log(const std::string& line);
  /// Fans an event out to /v1/events subscribers.
  void publish(nlohmann::json event);
  /// A monkey sink that logs transitions and publishes them.
  Monkey::Sink monkey_sink(const std::string& crate);

  nlohmann::json snapshot() const;
  /// Throws InvalidCommand (message carries the field path).
  nlohmann::json command(const nlohmann::json& cmd);
  /// Throws Unauthorized unless `authorization` is "Bearer <token>" or no
  /// token is configured.
  void authorize(const std::string& authorization) const;

  /// Starts serving HTTP; returns the bound port.
  std::uint16_t start();
  void stop();
  std::uint16_t port() const { return port_; }

 private:
  struct Subscriber {
    std::deque<std::string> lines;
  };

  GatewayOptions options_;
  std::optional<std::string> token_;

  mutable std::mutex mu_;
  actor::Node* node_ = nullptr;
  std::map<std::string, Monkey*> monkeys_;
  ScriptLibrary library_;
  SubmitHandler submit_;
  std::deque<std::string> log_;

  std::mutex events_mu_;
  std::condition_variable events_cv_;
  std::map<std::uint64_t, std::shared_ptr<Subscriber>> subscribers_;
  std::uint64_t next_subscriber_ = 0;
  bool closing_ = false;

  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::uint16_t port_ = 0;
};

}  // namespace circus::orchestration
