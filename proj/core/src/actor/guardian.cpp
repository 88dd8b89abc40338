#include "circus/actor/guardian.hpp"

#include <algorithm>

#include "circus/error.hpp"

namespace circus::actor {

using std::chrono::duration_cast;

void ServiceDescriptor::validate() const {
  if (service_name.empty()) fail(Errc::invalid_argument, "service name is empty");
  if (heartbeat_interval < std::chrono::milliseconds(10)) {
    fail(Errc::invalid_argument, service_name + ": heartbeat interval must be at least 10 ms");
  }
}

std::string_view to_string(Health h) noexcept {
  switch (h) {
    case Health::alive: return "alive";
    case Health::late: return "late";
    case Health::dead: return "dead";
  }
  return "";
}

std::string_view to_string(VerdictKind k) noexcept {
  switch (k) {
    case VerdictKind::late: return "late";
    case VerdictKind::dead: return "dead";
    case VerdictKind::restart: return "restart";
    case VerdictKind::restarts_exhausted: return "restarts_exhausted";
    case VerdictKind::recovered: return "recovered";
    case VerdictKind::peer_late: return "peer_late";
    case VerdictKind::peer_dead: return "peer_dead";
    case VerdictKind::peer_alive: return "peer_alive";
  }
  return "";
}

namespace {

Duration scaled(Duration d, double k) {
  return duration_cast<Duration>(std::chrono::duration<double, Duration::period>(static_cast<double>(d.count()) * k));
}

}  // namespace

GuardianCore::GuardianCore(Duration peer_interval, Duration restart_backoff)
    : peer_interval_(peer_interval), restart_backoff_(restart_backoff) {}

void GuardianCore::add_service(const std::string& name, const std::string& kind, Duration interval,
                               RestartPolicy policy, TimePoint now) {
  ServiceHealth h;
  h.kind = kind;
  h.interval = interval;
  h.policy = policy;
  h.last_heartbeat = now;
  services_[name] = h;
}

void GuardianCore::remove_service(const std::string& name) { services_.erase(name); }

std::optional<Verdict> GuardianCore::beat(const std::string& name, TimePoint now) {
  auto it = services_.find(name);
  if (it == services_.end()) return std::nullopt;
  auto& h = it->second;
  h.last_heartbeat = std::max(h.last_heartbeat, now);
  if (h.status == Health::alive) return std::nullopt;
  const auto was = h.status;
  h.status = Health::alive;
  h.restart_at.reset();
  return Verdict{VerdictKind::recovered, name, "was " + std::string(to_string(was))};
}

void GuardianCore::restarted(const std::string& name, TimePoint now) {
  auto it = services_.find(name);
  if (it == services_.end()) return;
  it->second.last_heartbeat = now;
  it->second.status = Health::alive;
  it->second.restart_at.reset();
}

void GuardianCore::add_peer(const std::string& node, TimePoint now) {
  auto [it, inserted] = peers_.try_emplace(node);
  it->second.last_peer_beat = std::max(it->second.last_peer_beat, now);
  if (inserted) it->second.status = Health::alive;
}

std::optional<Verdict> GuardianCore::peer_beat(const std::string& node, TimePoint now) {
  auto [it, inserted] = peers_.try_emplace(node);
  auto& p = it->second;
  p.last_peer_beat = std::max(p.last_peer_beat, now);
  if (inserted || p.status == Health::alive) {
    p.status = Health::alive;
    return std::nullopt;
  }
  p.status = Health::alive;
  return Verdict{VerdictKind::peer_alive, node, "peer guardian beating again"};
}

Duration GuardianCore::backoff(std::uint32_t attempt) const {
  return restart_backoff_ * (std::int64_t{1} << std::min<std::uint32_t>(attempt, 2));
}

std::vector<Verdict> GuardianCore::tick(TimePoint now) {
  std::vector<Verdict> out;
  for (auto& [name, h] : services_) {
    const auto silent = now - h.last_heartbeat;
    if (h.status == Health::alive && silent >= scaled(h.interval, kLateAfterIntervals)) {
      h.status = Health::late;
      out.push_back({VerdictKind::late, name, "missed heartbeat"});
    }
    if (h.status == Health::late && silent >= h.interval * kDeadAfterIntervals) {
      h.status = Health::dead;
      out.push_back({VerdictKind::dead, name,
                     "no heartbeat for " + std::to_string(kDeadAfterIntervals) + " intervals"});
      const bool eligible =
          h.policy.mode == RestartMode::always ||
          (h.policy.mode == RestartMode::on_failure && h.restarts < h.policy.max_attempts);
      if (eligible) {
        h.restart_at = now + backoff(h.restarts);
      } else if (h.policy.mode != RestartMode::never) {
        h.exhausted = true;
        out.push_back({VerdictKind::restarts_exhausted, name,
                       "restart attempts exhausted after " + std::to_string(h.restarts)});
      }
    }
    if (h.status == Health::dead && h.restart_at && now >= *h.restart_at) {
      h.restart_at.reset();
      ++h.restarts;
      h.status = Health::alive;
      h.last_heartbeat = now;
      out.push_back({VerdictKind::restart, name, "attempt " + std::to_string(h.restarts)});
    }
  }
  for (auto& [node, p] : peers_) {
    const auto silent = now - p.last_peer_beat;
    if (p.status == Health::alive && silent >= scaled(peer_interval_, kLateAfterIntervals)) {
      p.status = Health::late;
      out.push_back({VerdictKind::peer_late, node, "missed peer beat"});
    }
    if (p.status == Health::late && silent >= peer_interval_ * kDeadAfterIntervals) {
      p.status = Health::dead;
      out.push_back({VerdictKind::peer_dead, node, "peer guardian silent"});
    }
  }
  return out;
}

std::optional<TimePoint> GuardianCore::next_deadline() const {
  std::optional<TimePoint> next;
  auto consider = [&](TimePoint t) {
    if (!next || t < *next) next = t;
  };
  for (const auto& [name, h] : services_) {
    if (h.status == Health::alive) consider(h.last_heartbeat + scaled(h.interval, kLateAfterIntervals));
    if (h.status == Health::late) consider(h.last_heartbeat + h.interval * kDeadAfterIntervals);
    if (h.status == Health::dead && h.restart_at) consider(*h.restart_at);
  }
  for (const auto& [node, p] : peers_) {
    if (p.status == Health::alive) consider(p.last_peer_beat + scaled(peer_interval_, kLateAfterIntervals));
    if (p.status == Health::late) consider(p.last_peer_beat + peer_interval_ * kDeadAfterIntervals);
  }
  return next;
}

}  // namespace circus::actor
