#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "circus/clock.hpp"

namespace circus::actor {

using TimePoint = Clock::time_point;

enum class RestartMode { never, on_failure, always };

struct RestartPolicy {
  RestartMode mode = RestartMode::on_failure;
  std::uint32_t max_attempts = 3;

  static RestartPolicy never() { return {RestartMode::never, 0}; }
  static RestartPolicy on_failure(std::uint32_t n = 3) { return {RestartMode::on_failure, n}; }
  static RestartPolicy always() { return {RestartMode::always, 0}; }
};

struct ServiceDescriptor {
  std::string service_name;
  std::string node_name;  // filled in by the node when empty
  std::string kind;
  Duration heartbeat_interval = std::chrono::seconds(1);
  RestartPolicy restart_policy;

  /// Throws InvalidArgument (empty name, interval below 10 ms).
  void validate() const;
};

enum class Health { alive, late, dead };
std::string_view to_string(Health h) noexcept;

/// Missed-beat thresholds in heartbeat intervals.
inline constexpr double kLateAfterIntervals = 1.5;
inline constexpr int kDeadAfterIntervals = 3;

enum class VerdictKind {
  late,
  dead,
  restart,            // the node should respawn the service now
  restarts_exhausted,
  recovered,          // beat from a late or dead service
  peer_late,
  peer_dead,
  peer_alive,
};
std::string_view to_string(VerdictKind k) noexcept;

struct Verdict {
  VerdictKind kind;
  std::string subject;  // service or peer node name
  std::string detail;
};

struct ServiceHealth {
  std::string kind;
  Duration interval{};
  RestartPolicy policy;
  TimePoint last_heartbeat{};
  Health status = Health::alive;
  std::uint32_t restarts = 0;
  std::optional<TimePoint> restart_at;
  bool exhausted = false;
};

struct PeerHealth {
  TimePoint last_peer_beat{};
  Health status = Health::alive;
};

/// Watchdog bookkeeping with no threads or I/O: the node feeds beats and
/// calls tick(now); verdicts tell it what changed.
class GuardianCore {
 public:
  explicit GuardianCore(Duration peer_interval = std::chrono::seconds(1),
                        Duration restart_backoff = std::chrono::seconds(1));

  void add_service(const std::string& name, const std::string& kind, Duration interval, RestartPolicy policy,
                   TimePoint now);
  void remove_service(const std::string& name);
  std::optional<Verdict> beat(const std::string& name, TimePoint now);
  /// Called after a respawn so the grace period restarts.
  void restarted(const std::string& name, TimePoint now);

  void add_peer(const std::string& node, TimePoint now);
  std::optional<Verdict> peer_beat(const std::string& node, TimePoint now);

  std::vector<Verdict> tick(TimePoint now);
  /// Earliest instant at which tick could produce a verdict.
  std::optional<TimePoint> next_deadline() const;

  /// Backoff before restart attempt n (0-based): base, 2*base, 4*base, ...
  Duration backoff(std::uint32_t attempt) const;

  const std::map<std::string, ServiceHealth>& services() const { return services_; }
  const std::map<std::string, PeerHealth>& peers() const { return peers_; }

 private:
  Duration peer_interval_;
  Duration restart_backoff_;
  std::map<std::string, ServiceHealth> services_;
  std::map<std::string, PeerHealth> peers_;
};

}  // namespace circus::actor
