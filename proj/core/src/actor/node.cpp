#include "circus/actor/node.hpp"

#include <algorithm>

#include "circus/error.hpp"

namespace circus::actor {

using nlohmann::json;
using SteadyClock = std::chrono::steady_clock;

namespace {

constexpr auto kHandshakeTimeout = std::chrono::milliseconds(2000);
constexpr auto kPollSlice = std::chrono::milliseconds(200);
constexpr std::size_t kDedupWindow = 4096;

AtomPayload empty_payload() { return AtomPayload(Cluster{}); }

/// Error text without the "Code: " prefix added by Error.
std::string bare_message(const Error& e) {
  std::string s = e.what();
  const auto prefix = std::string(to_string(e.code())) + ": ";
  if (s.rfind(prefix, 0) == 0) s.erase(0, prefix.size());
  return s;
}

AtomPayload error_payload(Errc code, const std::string& text) {
  return make_cluster({{"code", make_scalar(std::string(to_string(code)))}, {"text", make_scalar(text)}});
}

[[noreturn]] void rethrow_payload(const AtomPayload& p) {
  const auto* code = p.find("code");
  const auto* text = p.find("text");
  const auto errc = code ? errc_from_string(code->as_string()) : std::nullopt;
  fail(errc.value_or(Errc::invalid_argument), text ? text->as_string() : "remote error");
}

}  // namespace

struct Node::Service {
  ServiceDescriptor desc;
  Handler handler;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Envelope> inbox;
  bool running = false;
  bool stop = false;
  bool overflow_reported = false;
  std::uint64_t generation = 0;
  std::thread worker;
};

struct Node::Link {
  std::string peer;
  Socket sock;
  LineReader reader;
  std::mutex write_mu;
  std::atomic<bool> up{true};
};

struct Node::Peer {
  std::shared_ptr<Link> link;
  bool severed = false;
  std::optional<std::pair<std::string, std::uint16_t>> dial;
  std::map<std::string, std::string> directory;  // service -> kind
};

struct Node::PendingAck {
  bool done = false;
  std::optional<Errc> error;
  std::string text;
  AtomTimestamp delivered_at;
};

struct Node::Waiter {
  Address requester;
  std::optional<Envelope> reply;
  std::condition_variable cv;
};

DeliveryReceipt ServiceContext::send(const Address& dst, std::string kind, DataAtom payload) {
  Envelope env;
  env.src = self_;
  env.dst = dst;
  env.kind = std::move(kind);
  env.payload = std::move(payload);
  return node_.send(std::move(env));
}

void ServiceContext::reply(const Envelope& request, std::string kind, DataAtom payload) {
  Envelope env;
  env.src = self_;
  env.dst = request.src;
  env.kind = std::move(kind);
  env.payload = std::move(payload);
  env.in_reply_to = request.id;
  node_.send(std::move(env));
}

Envelope ServiceContext::request(const Address& dst, std::string kind, DataAtom payload, Duration timeout) {
  Envelope env;
  env.src = self_;
  env.dst = dst;
  env.kind = std::move(kind);
  env.payload = std::move(payload);
  return node_.request(std::move(env), timeout);
}

json snapshot_to_json(const GuardianSnapshot& s) {
  json services = json::array();
  for (const auto& r : s.services) {
    services.push_back({{"node", r.node},
                        {"service", r.service},
                        {"kind", r.kind},
                        {"status", to_string(r.status)},
                        {"restarts", r.restarts},
                        {"exhausted", r.exhausted},
                        {"seconds_since_beat", r.seconds_since_beat}});
  }
  json peers = json::array();
  for (const auto& p : s.peers) {
    peers.push_back({{"node", p.node},
                     {"status", to_string(p.status)},
                     {"connected", p.connected},
                     {"severed", p.severed},
                     {"seconds_since_beat", p.seconds_since_beat}});
  }
  return {{"node", s.node}, {"services", services}, {"peers", peers}};
}

Node::Node(Options options)
    : options_(std::move(options)),
      guardian_(options_.peer_interval, options_.restart_backoff),
      errors_(options_.name) {
  if (options_.name.empty() || options_.name.find('/') != std::string::npos) {
    fail(Errc::invalid_argument, "node name must be non-empty and contain no '/'");
  }
  if (options_.port) {
    listener_ = listen_tcp(options_.host, *options_.port);
    port_ = local_port(listener_);
    accept_thread_ = std::thread([this] { accept_loop(); });
  }
  connect_thread_ = std::thread([this] { connect_loop(); });
  guardian_thread_ = std::thread([this] { guardian_loop(); });

  if (options_.error_manager_service) {
    ServiceDescriptor desc;
    desc.service_name = "Error Manager";
    desc.kind = "error_manager";
    spawn_service(desc, [this](ServiceContext& ctx, const Envelope& env) {
      const auto& p = env.payload.data;
      if (env.kind == "report") {
        const auto* sev = p.find("severity");
        const auto* code = p.find("code");
        const auto* text = p.find("text");
        if (!sev || !code || !text) fail(Errc::schema_violation, "report needs severity, code and text");
        const auto rec = report_error(severity_from_string(sev->as_string()), env.src, code->as_string(),
                                      text->as_string());
        ctx.reply(env, "reported", make_payload("reported", make_cluster({{"id", make_scalar(std::to_string(rec.id))}})));
      } else if (env.kind == "list") {
        std::vector<std::string> rows;
        for (const auto& r : list_errors()) rows.push_back(record_to_json(r).dump());
        ctx.reply(env, "errors", make_payload("errors", make_cluster({{"records", make_array(rows)}})));
      } else if (env.kind == "acknowledge") {
        const auto* id = p.find("id");
        if (!id) fail(Errc::schema_violation, "acknowledge needs an id");
        const auto rec = acknowledge_error(std::stoull(id->as_string()));
        ctx.reply(env, "acknowledged", make_payload("acknowledged", record_to_payload(rec)));
      } else {
        fail(Errc::invalid_argument, "Error Manager does not understand " + env.kind);
      }
    });
  }
}

Node::~Node() { shutdown(); }

void Node::shutdown() {
  if (stopping_.exchange(true)) return;
  guardian_cv_.notify_all();
  peers_cv_.notify_all();
  if (accept_thread_.joinable()) accept_thread_.join();
  if (connect_thread_.joinable()) connect_thread_.join();

  std::vector<std::thread> links;
  {
    std::lock_guard lk(peers_mu_);
    for (auto& [name, p] : peers_) {
      if (p->link) {
        p->link->up = false;
        p->link->sock.shutdown();
      }
    }
    links.swap(link_threads_);
  }
  for (auto& t : links) {
    if (t.joinable()) t.join();
  }
  if (guardian_thread_.joinable()) guardian_thread_.join();

  std::vector<std::thread> workers;
  {
    std::lock_guard lk(services_mu_);
    for (auto& [name, svc] : services_) {
      std::lock_guard sl(svc->mu);
      svc->stop = true;
      svc->cv.notify_all();
      if (svc->worker.joinable()) workers.push_back(std::move(svc->worker));
    }
    for (auto& t : retired_workers_) workers.push_back(std::move(t));
    retired_workers_.clear();
  }
  for (auto& t : workers) {
    if (t.joinable()) t.join();
  }
  ack_cv_.notify_all();
  listener_.close();
}

// ---- services -------------------------------------------------------------

Address Node::spawn_service(ServiceDescriptor desc, Handler handler) {
  if (desc.node_name.empty()) desc.node_name = name();
  desc.validate();
  if (desc.node_name != name()) fail(Errc::invalid_argument, "descriptor names another node");
  if (!handler) fail(Errc::invalid_argument, "service needs a handler");
  auto svc = std::make_shared<Service>();
  svc->desc = desc;
  svc->handler = std::move(handler);
  {
    std::lock_guard lk(services_mu_);
    if (services_.count(desc.service_name)) {
      fail(Errc::duplicate_name, desc.service_name + " already runs on " + name());
    }
    services_[desc.service_name] = svc;
  }
  {
    std::lock_guard lk(guardian_mu_);
    guardian_.add_service(desc.service_name, desc.kind, desc.heartbeat_interval, desc.restart_policy,
                          SteadyClock::now());
  }
  guardian_cv_.notify_all();
  start_worker(svc);
  broadcast("sys/directory", directory_payload());
  return {name(), desc.service_name};
}

void Node::start_worker(const std::shared_ptr<Service>& svc) {
  std::thread old;
  {
    std::lock_guard lk(svc->mu);
    if (svc->stop) return;
    const auto gen = ++svc->generation;
    svc->running = true;
    svc->overflow_reported = false;
    old = std::move(svc->worker);
    svc->worker = std::thread([this, svc, gen] { worker_loop(svc, gen); });
  }
  svc->cv.notify_all();
  if (old.joinable()) {
    std::lock_guard lk(services_mu_);
    retired_workers_.push_back(std::move(old));
  }
}

void Node::stop_service(const std::string& service) {
  std::shared_ptr<Service> svc;
  {
    std::lock_guard lk(services_mu_);
    auto it = services_.find(service);
    if (it == services_.end()) fail(Errc::unknown_destination, service + " is not on " + name());
    svc = it->second;
    services_.erase(it);
  }
  std::thread worker;
  {
    std::lock_guard lk(svc->mu);
    svc->stop = true;
    svc->running = false;
    worker = std::move(svc->worker);
  }
  svc->cv.notify_all();
  if (worker.joinable() && worker.get_id() != std::this_thread::get_id()) worker.join();
  if (worker.joinable()) worker.detach();
  {
    std::lock_guard lk(guardian_mu_);
    guardian_.remove_service(service);
  }
  broadcast("sys/directory", directory_payload());
}

void Node::kill_service(const std::string& service) {
  std::shared_ptr<Service> svc;
  {
    std::lock_guard lk(services_mu_);
    auto it = services_.find(service);
    if (it == services_.end()) fail(Errc::unknown_destination, service + " is not on " + name());
    svc = it->second;
  }
  {
    std::lock_guard lk(svc->mu);
    ++svc->generation;
    svc->running = false;
  }
  svc->cv.notify_all();
}

std::vector<std::string> Node::services() const {
  std::lock_guard lk(services_mu_);
  std::vector<std::string> out;
  for (const auto& [n, s] : services_) out.push_back(n);
  return out;
}

void Node::worker_loop(std::shared_ptr<Service> svc, std::uint64_t generation) {
  const Address self{name(), svc->desc.service_name};
  auto beat = [&] {
    Envelope env;
    env.id = next_id_++;
    env.src = self;
    env.dst = {name(), "guardian"};
    env.kind = "sys/beat";
    env.payload = make_payload("sys/beat");
    env.sent_at = env.payload.timestamp;
    post_guardian(std::move(env));
  };

  beat();
  auto last_beat = SteadyClock::now();
  std::unique_lock lk(svc->mu);
  for (;;) {
    const auto due = last_beat + svc->desc.heartbeat_interval;
    svc->cv.wait_until(lk, due, [&] { return svc->stop || svc->generation != generation || !svc->inbox.empty(); });
    if (svc->stop || svc->generation != generation) return;
    if (SteadyClock::now() >= due) {
      lk.unlock();
      beat();
      last_beat = SteadyClock::now();
      lk.lock();
      continue;
    }
    Envelope env = std::move(svc->inbox.front());
    svc->inbox.pop_front();
    lk.unlock();

    ServiceContext ctx(*this, self);
    try {
      svc->handler(ctx, env);
    } catch (const Error& e) {
      if (!env.in_reply_to && !is_system_kind(env.kind)) {
        try {
          ctx.reply(env, std::string(kErrorReplyKind),
                    make_payload(std::string(kErrorReplyKind), error_payload(e.code(), bare_message(e))));
        } catch (const Error&) {
        }
      }
    } catch (const std::exception& e) {
      report_error(Severity::error, self, "HandlerCrashed", e.what());
      lk.lock();
      if (svc->generation == generation) svc->running = false;
      return;
    }
    lk.lock();
  }
}

// ---- guardian -------------------------------------------------------------

void Node::post_guardian(Envelope env) {
  {
    std::lock_guard lk(guardian_mu_);
    guardian_inbox_.push_back(std::move(env));
  }
  guardian_cv_.notify_all();
}

void Node::guardian_loop() {
  auto next_peer_beat = SteadyClock::now();
  std::unique_lock lk(guardian_mu_);
  while (!stopping_) {
    auto wake = next_peer_beat;
    if (auto d = guardian_.next_deadline(); d && *d < wake) wake = *d;
    guardian_cv_.wait_until(lk, wake, [&] { return stopping_.load() || !guardian_inbox_.empty(); });
    if (stopping_) break;

    const auto now = SteadyClock::now();
    std::vector<Verdict> verdicts;
    while (!guardian_inbox_.empty()) {
      auto env = std::move(guardian_inbox_.front());
      guardian_inbox_.pop_front();
      std::optional<Verdict> v;
      if (env.kind == "sys/beat") v = guardian_.beat(env.src.service, now);
      else if (env.kind == "sys/peer_beat" || env.kind == "sys/peer_up") v = guardian_.peer_beat(env.src.node, now);
      if (v) verdicts.push_back(*v);
    }
    auto ticked = guardian_.tick(now);
    verdicts.insert(verdicts.end(), ticked.begin(), ticked.end());
    const bool send_beats = now >= next_peer_beat;
    if (send_beats) next_peer_beat = now + options_.peer_interval;

    lk.unlock();
    handle_verdicts(verdicts);
    if (send_beats) broadcast("sys/peer_beat", empty_payload());
    lk.lock();
  }
}

void Node::handle_verdicts(const std::vector<Verdict>& verdicts) {
  for (const auto& v : verdicts) {
    Severity sev = Severity::info;
    std::string code;
    Address source{name(), v.subject};
    std::string text = v.subject + ": " + v.detail;
    switch (v.kind) {
      case VerdictKind::late: sev = Severity::warning; code = "ServiceLate"; break;
      case VerdictKind::dead: sev = Severity::error; code = "ServiceDead"; break;
      case VerdictKind::restart: {
        sev = Severity::info;
        code = "ServiceRestarted";
        std::shared_ptr<Service> svc;
        {
          std::lock_guard lk(services_mu_);
          auto it = services_.find(v.subject);
          if (it != services_.end()) svc = it->second;
        }
        if (svc) start_worker(svc);
        break;
      }
      case VerdictKind::restarts_exhausted: sev = Severity::error; code = "RestartsExhausted"; break;
      case VerdictKind::recovered: sev = Severity::info; code = "ServiceRecovered"; break;
      case VerdictKind::peer_late: sev = Severity::warning; code = "PeerLate"; source.service = "guardian"; break;
      case VerdictKind::peer_dead: sev = Severity::error; code = "PeerDead"; source.service = "guardian"; break;
      case VerdictKind::peer_alive: sev = Severity::info; code = "PeerAlive"; source.service = "guardian"; break;
    }
    emit("verdict", {{"node", name()}, {"kind", to_string(v.kind)}, {"subject", v.subject}, {"detail", v.detail}});
    report_error(sev, source, code, text);
  }
}

GuardianSnapshot Node::guardian_snapshot() const {
  GuardianSnapshot snap;
  snap.node = name();
  const auto now = SteadyClock::now();
  auto secs = [&](TimePoint t) { return std::chrono::duration<double>(now - t).count(); };
  {
    std::lock_guard lk(guardian_mu_);
    for (const auto& [svc, h] : guardian_.services()) {
      snap.services.push_back({name(), svc, h.kind, h.status, h.restarts, h.exhausted, secs(h.last_heartbeat)});
    }
    for (const auto& [peer, p] : guardian_.peers()) {
      snap.peers.push_back({peer, p.status, false, false, secs(p.last_peer_beat)});
    }
  }
  std::lock_guard lk(peers_mu_);
  for (auto& row : snap.peers) {
    auto it = peers_.find(row.node);
    if (it == peers_.end()) continue;
    row.connected = it->second->link && it->second->link->up;
    row.severed = it->second->severed;
  }
  return snap;
}

// ---- errors ---------------------------------------------------------------

ErrorRecord Node::report_error(Severity severity, const Address& source, std::string code, std::string text) {
  ErrorRecord rec;
  rec.source = source;
  rec.severity = severity;
  rec.code = std::move(code);
  rec.text = std::move(text);
  rec = errors_.report(std::move(rec));
  broadcast("sys/error", record_to_payload(rec));
  emit("error", record_to_json(rec));
  return rec;
}

std::vector<ErrorRecord> Node::list_errors(const ErrorFilter& filter) const { return errors_.list(filter); }

ErrorRecord Node::acknowledge_error(std::uint64_t id) {
  auto rec = errors_.acknowledge(id);
  broadcast("sys/error_ack", make_cluster({{"id", make_scalar(std::to_string(id))}}));
  emit("error_ack", record_to_json(rec));
  return rec;
}

void Node::add_listener(Listener fn) {
  std::lock_guard lk(listeners_mu_);
  listeners_.push_back(std::move(fn));
}

void Node::emit(const std::string& type, const json& body) {
  std::vector<Listener> copy;
  {
    std::lock_guard lk(listeners_mu_);
    copy = listeners_;
  }
  for (const auto& fn : copy) fn(type, body);
}

// ---- messaging ------------------------------------------------------------

DeliveryReceipt Node::send(Envelope env) {
  if (stopping_) fail(Errc::unknown_destination, name() + " is shutting down");
  if (env.kind.empty()) fail(Errc::invalid_argument, "envelope kind is empty");
  if (env.src.node.empty()) env.src.node = name();
  if (env.dst.node.empty()) env.dst.node = name();
  if (env.src == env.dst) fail(Errc::invalid_argument, "source and destination are the same");
  if (env.id == 0) env.id = next_id_++;
  env.sent_at = timestamp_now();
  if (env.payload.name.empty()) env.payload = make_payload(env.kind, env.payload.data);
  if (env.dst.node == name()) return deliver_local(std::move(env));
  return send_remote(std::move(env));
}

DeliveryReceipt Node::deliver_local(Envelope env) {
  const auto id = env.id;
  if (env.in_reply_to) {
    std::lock_guard lk(waiter_mu_);
    auto it = waiters_.find(*env.in_reply_to);
    if (it != waiters_.end() && it->second->requester == env.dst) {
      it->second->reply = std::move(env);
      it->second->cv.notify_all();
      return {id, timestamp_now()};
    }
  }
  std::shared_ptr<Service> svc;
  {
    std::lock_guard lk(services_mu_);
    auto it = services_.find(env.dst.service);
    if (it == services_.end()) fail(Errc::unknown_destination, env.dst.str() + " is not registered");
    svc = it->second;
  }
  bool full = false, report = false;
  {
    std::lock_guard lk(svc->mu);
    if (!svc->running && svc->inbox.size() >= options_.dead_queue_limit) {
      full = true;
      report = !svc->overflow_reported;
      svc->overflow_reported = true;
    } else {
      svc->inbox.push_back(std::move(env));
    }
  }
  if (full) {
    const auto text = "inbox of " + svc->desc.service_name + " is full while it is down (" +
                      std::to_string(options_.dead_queue_limit) + " envelopes)";
    if (report) report_error(Severity::error, {name(), svc->desc.service_name}, "ResourceExhausted", text);
    fail(Errc::resource_exhausted, text);
  }
  svc->cv.notify_all();
  return {id, timestamp_now()};
}

Envelope Node::request(Envelope env, Duration timeout) {
  if (env.src.node.empty()) env.src.node = name();
  if (env.id == 0) env.id = next_id_++;
  auto waiter = std::make_shared<Waiter>();
  waiter->requester = env.src;
  const auto id = env.id;
  {
    std::lock_guard lk(waiter_mu_);
    waiters_[id] = waiter;
  }
  auto drop = [&] {
    std::lock_guard lk(waiter_mu_);
    waiters_.erase(id);
  };
  const auto dst = env.dst;
  try {
    send(std::move(env));
  } catch (...) {
    drop();
    throw;
  }
  std::unique_lock lk(waiter_mu_);
  waiter->cv.wait_for(lk, timeout, [&] { return waiter->reply.has_value() || stopping_.load(); });
  auto reply = std::move(waiter->reply);
  waiters_.erase(id);
  lk.unlock();
  if (!reply) fail(Errc::timeout, "no reply from " + dst.str());
  if (reply->kind == kErrorReplyKind) rethrow_payload(reply->payload.data);
  return std::move(*reply);
}

std::optional<Address> Node::resolve_kind(const std::string& kind) const {
  {
    std::lock_guard lk(services_mu_);
    for (const auto& [n, svc] : services_) {
      if (svc->desc.kind == kind) return Address{name(), n};
    }
  }
  std::lock_guard lk(peers_mu_);
  for (const auto& [peer, p] : peers_) {
    if (!p->link || !p->link->up || p->severed) continue;
    for (const auto& [svc, k] : p->directory) {
      if (k == kind) return Address{peer, svc};
    }
  }
  return std::nullopt;
}

std::shared_ptr<Node::Link> Node::link_for(const std::string& peer) const {
  std::lock_guard lk(peers_mu_);
  auto it = peers_.find(peer);
  if (it == peers_.end() || it->second->severed) return nullptr;
  return it->second->link;
}

DeliveryReceipt Node::send_remote(Envelope env) {
  {
    std::lock_guard lk(peers_mu_);
    if (!peers_.count(env.dst.node)) fail(Errc::unknown_destination, "no route to node " + env.dst.node);
  }
  auto pending = std::make_shared<PendingAck>();
  const auto deadline = SteadyClock::now() + options_.ack_timeout;
  std::unique_lock ak(ack_mu_);
  pending_acks_[env.id] = pending;
  std::shared_ptr<Link> sent_on;
  while (!pending->done) {
    if (stopping_) break;
    ak.unlock();
    auto link = link_for(env.dst.node);
    if (link && link->up && link != sent_on) {
      write_frame(link, env);
      sent_on = link;
    }
    ak.lock();
    const auto now = SteadyClock::now();
    if (pending->done || now >= deadline) break;
    ack_cv_.wait_until(ak, std::min(deadline, now + std::chrono::milliseconds(50)), [&] { return pending->done; });
  }
  pending_acks_.erase(env.id);
  if (!pending->done) fail(Errc::timeout, "no acknowledgement from " + env.dst.node + " for envelope " + std::to_string(env.id));
  if (pending->error) fail(*pending->error, pending->text);
  return {env.id, pending->delivered_at};
}

void Node::write_frame(const std::shared_ptr<Link>& link, const Envelope& env) {
  const auto frame = encode_frame(env);
  std::lock_guard lk(link->write_mu);
  if (!link->up) return;
  if (!send_all(link->sock, frame)) {
    link->up = false;
    link->sock.shutdown();
  }
}

Envelope Node::system_envelope(const std::string& peer, const std::string& kind, AtomPayload payload) {
  Envelope env;
  env.id = next_id_++;
  env.src = {name(), "guardian"};
  env.dst = {peer, "guardian"};
  env.kind = kind;
  env.payload = DataAtom{kind, timestamp_now(), std::move(payload)};
  env.sent_at = env.payload.timestamp;
  return env;
}

void Node::broadcast(const std::string& kind, const AtomPayload& payload) {
  std::vector<std::shared_ptr<Link>> links;
  {
    std::lock_guard lk(peers_mu_);
    for (const auto& [peer, p] : peers_) {
      if (p->link && p->link->up && !p->severed) links.push_back(p->link);
    }
  }
  for (const auto& link : links) write_frame(link, system_envelope(link->peer, kind, payload));
}

AtomPayload Node::directory_payload() const {
  std::vector<std::string> rows;
  std::lock_guard lk(services_mu_);
  for (const auto& [n, svc] : services_) rows.push_back(n + "\t" + svc->desc.kind);
  return make_cluster({{"services", make_array(rows)}});
}

// ---- links ----------------------------------------------------------------

std::string Node::connect_peer(const std::string& host, std::uint16_t port) {
  auto sock = connect_tcp(host, port, std::chrono::duration_cast<std::chrono::milliseconds>(kHandshakeTimeout));
  auto link = handshake_outbound(std::move(sock));
  {
    std::lock_guard lk(peers_mu_);
    auto& p = peers_[link->peer];
    if (!p) p = std::make_shared<Peer>();
    p->dial = {host, port};
  }
  attach_link(link->peer, link);
  std::lock_guard lk(peers_mu_);
  link_threads_.emplace_back([this, link] { reader_loop(link); });
  return link->peer;
}

std::shared_ptr<Node::Link> Node::handshake_outbound(Socket sock) {
  auto link = std::make_shared<Link>();
  link->sock = std::move(sock);
  auto hello = system_envelope("*", "sys/hello",
                               make_cluster({{"node_name", make_scalar(name())},
                                             {"protocol", make_scalar(std::string(kProtocolVersion))}}));
  if (!send_all(link->sock, encode_frame(hello))) fail(Errc::io_error, "handshake write failed");
  std::string line;
  if (link->reader.next(link->sock, line, kHandshakeTimeout) != LineReader::Status::line) {
    fail(Errc::io_error, "peer closed the connection during the handshake");
  }
  const auto reply = decode_frame(line);
  const auto* peer = reply.payload.data.find("node_name");
  const auto* proto = reply.payload.data.find("protocol");
  if (reply.kind != "sys/hello" || !peer || !proto) fail(Errc::schema_violation, "expected sys/hello");
  if (proto->as_string() != kProtocolVersion) fail(Errc::schema_violation, "protocol " + proto->as_string());
  link->peer = peer->as_string();
  return link;
}

void Node::handshake_inbound(Socket sock) {
  auto link = std::make_shared<Link>();
  link->sock = std::move(sock);
  std::string line;
  try {
    if (link->reader.next(link->sock, line, kHandshakeTimeout) != LineReader::Status::line) return;
    const auto hello = decode_frame(line);
    const auto* peer = hello.payload.data.find("node_name");
    const auto* proto = hello.payload.data.find("protocol");
    if (hello.kind != "sys/hello" || !peer || !proto || proto->as_string() != kProtocolVersion) return;
    link->peer = peer->as_string();
    {
      std::lock_guard lk(peers_mu_);
      auto it = peers_.find(link->peer);
      if (it != peers_.end() && it->second->severed) return;
    }
    auto reply = system_envelope(link->peer, "sys/hello",
                                 make_cluster({{"node_name", make_scalar(name())},
                                               {"protocol", make_scalar(std::string(kProtocolVersion))}}));
    if (!send_all(link->sock, encode_frame(reply))) return;
  } catch (const Error&) {
    return;
  }
  attach_link(link->peer, link);
  reader_loop(link);
}

void Node::attach_link(const std::string& peer, std::shared_ptr<Link> link) {
  std::shared_ptr<Link> old;
  {
    std::lock_guard lk(peers_mu_);
    auto& p = peers_[peer];
    if (!p) p = std::make_shared<Peer>();
    if (p->severed || stopping_) {
      link->up = false;
      link->sock.shutdown();
      return;
    }
    old = p->link;
    p->link = link;
  }
  if (old && old != link) {
    old->up = false;
    old->sock.shutdown();
  }
  Envelope up;
  up.src = {peer, "guardian"};
  up.kind = "sys/peer_up";
  post_guardian(std::move(up));

  write_frame(link, system_envelope(peer, "sys/peer_beat", empty_payload()));
  write_frame(link, system_envelope(peer, "sys/directory", directory_payload()));
  for (const auto& rec : errors_.list()) write_frame(link, system_envelope(peer, "sys/error", record_to_payload(rec)));
  ack_cv_.notify_all();
}

void Node::reader_loop(std::shared_ptr<Link> link) {
  std::string line;
  while (!stopping_ && link->up) {
    const auto status = link->reader.next(link->sock, line, kPollSlice);
    if (status == LineReader::Status::timeout) continue;
    if (status == LineReader::Status::closed) break;
    try {
      on_frame(link, decode_frame(line));
    } catch (const Error& e) {
      report_error(Severity::warning, {name(), "guardian"}, "BadFrame", link->peer + ": " + e.what());
    }
  }
  link_down(link);
}

void Node::link_down(const std::shared_ptr<Link>& link) {
  link->up = false;
  {
    std::lock_guard lk(peers_mu_);
    auto it = peers_.find(link->peer);
    if (it != peers_.end() && it->second->link == link) it->second->link.reset();
  }
  ack_cv_.notify_all();
  peers_cv_.notify_all();
}

bool Node::is_duplicate(const Envelope& env) {
  std::lock_guard lk(dedup_mu_);
  auto& seen = seen_[env.src];
  if (!seen.insert(env.id).second) return true;
  if (seen.size() > kDedupWindow) seen.erase(seen.begin());
  return false;
}

void Node::on_frame(const std::shared_ptr<Link>& link, Envelope env) {
  const auto& kind = env.kind;
  if (kind == "sys/peer_beat") {
    post_guardian(std::move(env));
  } else if (kind == "sys/ack" || kind == "sys/nack") {
    if (!env.in_reply_to) return;
    std::lock_guard lk(ack_mu_);
    auto it = pending_acks_.find(*env.in_reply_to);
    if (it == pending_acks_.end()) return;
    auto& p = *it->second;
    p.done = true;
    p.delivered_at = env.sent_at;
    if (kind == "sys/nack") {
      const auto* code = env.payload.data.find("code");
      const auto* text = env.payload.data.find("text");
      p.error = code ? errc_from_string(code->as_string()).value_or(Errc::invalid_argument) : Errc::invalid_argument;
      p.text = text ? text->as_string() : "rejected";
    }
    ack_cv_.notify_all();
  } else if (kind == "sys/directory") {
    std::map<std::string, std::string> dir;
    if (const auto* rows = env.payload.data.find("services"); rows && rows->is_array()) {
      if (const auto* names = std::get_if<std::vector<std::string>>(&rows->array().values)) {
        for (const auto& row : *names) {
          const auto tab = row.find('\t');
          if (tab != std::string::npos) dir[row.substr(0, tab)] = row.substr(tab + 1);
        }
      }
    }
    std::lock_guard lk(peers_mu_);
    auto it = peers_.find(link->peer);
    if (it != peers_.end()) it->second->directory = std::move(dir);
  } else if (kind == "sys/error") {
    const auto rec = record_from_payload(env.payload.data);
    if (errors_.merge(rec)) emit("error", record_to_json(rec));
  } else if (kind == "sys/error_ack") {
    if (const auto* id = env.payload.data.find("id")) {
      const auto n = std::stoull(id->as_string());
      if (errors_.merge_acknowledge(n)) emit("error_ack", {{"id", n}});
    }
  } else if (kind == "sys/hello") {
    return;
  } else {
    const auto src = env.src;
    const auto id = env.id;
    auto answer = [&](const std::string& k, AtomPayload p) {
      auto ack = system_envelope(link->peer, k, std::move(p));
      ack.dst = src;
      ack.in_reply_to = id;
      write_frame(link, ack);
    };
    if (is_duplicate(env)) {
      answer("sys/ack", empty_payload());
      return;
    }
    try {
      deliver_local(std::move(env));
      answer("sys/ack", empty_payload());
    } catch (const Error& e) {
      answer("sys/nack", error_payload(e.code(), bare_message(e)));
    }
  }
}

void Node::accept_loop() {
  while (!stopping_) {
    auto sock = accept_tcp(listener_, kPollSlice);
    if (!sock) continue;
    auto shared = std::make_shared<Socket>(std::move(*sock));
    std::lock_guard lk(peers_mu_);
    link_threads_.emplace_back([this, shared] { handshake_inbound(std::move(*shared)); });
  }
}

void Node::connect_loop() {
  std::unique_lock lk(peers_mu_);
  while (!stopping_) {
    peers_cv_.wait_for(lk, options_.reconnect_interval, [&] { return stopping_.load(); });
    if (stopping_) break;
    std::vector<std::pair<std::string, std::pair<std::string, std::uint16_t>>> targets;
    for (const auto& [peer, p] : peers_) {
      if (p->dial && !p->severed && !p->link) targets.push_back({peer, *p->dial});
    }
    lk.unlock();
    for (const auto& [peer, dial] : targets) {
      try {
        auto sock = connect_tcp(dial.first, dial.second, std::chrono::milliseconds(500));
        auto link = handshake_outbound(std::move(sock));
        attach_link(link->peer, link);
        if (link->up) {
          std::lock_guard tl(peers_mu_);
          link_threads_.emplace_back([this, link] { reader_loop(link); });
        }
      } catch (const Error&) {
      }
    }
    lk.lock();
  }
}

void Node::sever(const std::string& peer) {
  std::shared_ptr<Link> link;
  {
    std::lock_guard lk(peers_mu_);
    auto& p = peers_[peer];
    if (!p) p = std::make_shared<Peer>();
    p->severed = true;
    link = std::move(p->link);
  }
  if (link) {
    link->up = false;
    link->sock.shutdown();
  }
  ack_cv_.notify_all();
}

void Node::heal(const std::string& peer) {
  {
    std::lock_guard lk(peers_mu_);
    auto it = peers_.find(peer);
    if (it != peers_.end()) it->second->severed = false;
  }
  peers_cv_.notify_all();
}

std::vector<std::string> Node::connected_peers() const {
  std::lock_guard lk(peers_mu_);
  std::vector<std::string> out;
  for (const auto& [peer, p] : peers_) {
    if (p->link && p->link->up) out.push_back(peer);
  }
  return out;
}

}  // namespace circus::actor
