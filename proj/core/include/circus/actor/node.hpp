#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "circus/actor/envelope.hpp"
#include "circus/actor/error_manager.hpp"
#include "circus/actor/guardian.hpp"
#include "circus/actor/socket.hpp"

namespace circus::actor {

class Node;

struct DeliveryReceipt {
  std::uint64_t id = 0;
  AtomTimestamp delivered_at;
};

/// Handed to service handlers; everything sent through it carries the
/// service's own address as source.
class ServiceContext {
 public:
  ServiceContext(Node& node, Address self) : node_(node), self_(std::move(self)) {}

  Node& node() { return node_; }
  const Address& self() const { return self_; }

  DeliveryReceipt send(const Address& dst, std::string kind, DataAtom payload);
  void reply(const Envelope& request, std::string kind, DataAtom payload);
  Envelope request(const Address& dst, std::string kind, DataAtom payload,
                   Duration timeout = std::chrono::seconds(2));

 private:
  Node& node_;
  Address self_;
};

using Handler = std::function<void(ServiceContext&, const Envelope&)>;

struct GuardianRow {
  std::string node;
  std::string service;
  std::string kind;
  Health status = Health::alive;
  std::uint32_t restarts = 0;
  bool exhausted = false;
  double seconds_since_beat = 0.0;
};

struct PeerRow {
  std::string node;
  Health status = Health::alive;
  bool connected = false;
  bool severed = false;
  double seconds_since_beat = 0.0;
};

struct GuardianSnapshot {
  std::string node;
  std::vector<GuardianRow> services;
  std::vector<PeerRow> peers;
};

nlohmann::json snapshot_to_json(const GuardianSnapshot& s);

/// Reply payload used when a handler rejects a request with an Error.
inline constexpr std::string_view kErrorReplyKind = "error";

/// One bus node: hosts services (one thread and inbox each), the local
/// Guardian, a replica of the Error Manager, and TCP links to peer nodes.
class Node {
 public:
  struct Options {
    std::string name;
    std::string host = "127.0.0.1";
    /// Listen for peers when set; 0 picks an ephemeral port.
    std::optional<std::uint16_t> port;
    Duration peer_interval = std::chrono::seconds(1);
    Duration restart_backoff = std::chrono::seconds(1);
    Duration ack_timeout = std::chrono::seconds(2);
    Duration reconnect_interval = std::chrono::milliseconds(100);
    /// Inbox bound for a service that is down (killed, crashed, restarting).
    std::size_t dead_queue_limit = 1000;
    /// Host the "Error Manager" service.
    bool error_manager_service = true;
  };

  using Listener = std::function<void(const std::string& type, const nlohmann::json& body)>;

  explicit Node(Options options);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  const std::string& name() const { return options_.name; }
  /// Listening port, 0 when not listening.
  std::uint16_t port() const { return port_; }
  void shutdown();

  /// Throws DuplicateName.
  Address spawn_service(ServiceDescriptor desc, Handler handler);
  void stop_service(const std::string& service);
  /// Fault injection: the service's thread exits without a word.
  void kill_service(const std::string& service);
  std::vector<std::string> services() const;

  /// Dials a peer node and completes the handshake; returns its name. The link
  /// is re-dialled automatically while it is down and not severed.
  std::string connect_peer(const std::string& host, std::uint16_t port);
  /// Fault injection: drop the link to `peer` and refuse it until heal().
  void sever(const std::string& peer);
  void heal(const std::string& peer);
  std::vector<std::string> connected_peers() const;

  /// Stamps id and sent_at, then delivers. Local: enqueued on return.
  /// Remote: returns once the peer acknowledged. Throws UnknownDestination,
  /// Timeout (no ack within the ack timeout), ResourceExhausted.
  DeliveryReceipt send(Envelope env);
  /// Sends and waits for the envelope answering it. A reply of kind "error"
  /// is rethrown as Error.
  Envelope request(Envelope env, Duration timeout = std::chrono::seconds(2));
  /// First service of `kind`: local ones first, then live peers.
  std::optional<Address> resolve_kind(const std::string& kind) const;

  ErrorRecord report_error(Severity severity, const Address& source, std::string code, std::string text);
  std::vector<ErrorRecord> list_errors(const ErrorFilter& filter = {}) const;
  /// Throws UnknownId.
  ErrorRecord acknowledge_error(std::uint64_t id);

  GuardianSnapshot guardian_snapshot() const;
  void add_listener(Listener fn);

 private:
  struct Service;
  struct Link;
  struct Peer;
  struct PendingAck;
  struct Waiter;

  void worker_loop(std::shared_ptr<Service> svc, std::uint64_t generation);
  void start_worker(const std::shared_ptr<Service>& svc);
  void post_guardian(Envelope env);
  void guardian_loop();
  void handle_verdicts(const std::vector<Verdict>& verdicts);

  DeliveryReceipt deliver_local(Envelope env);
  DeliveryReceipt send_remote(Envelope env);
  std::shared_ptr<Link> link_for(const std::string& peer) const;
  void write_frame(const std::shared_ptr<Link>& link, const Envelope& env);
  void broadcast(const std::string& kind, const AtomPayload& payload);
  Envelope system_envelope(const std::string& peer, const std::string& kind, AtomPayload payload);

  void accept_loop();
  void connect_loop();
  std::shared_ptr<Link> handshake_outbound(Socket sock);
  void handshake_inbound(Socket sock);
  void attach_link(const std::string& peer, std::shared_ptr<Link> link);
  void reader_loop(std::shared_ptr<Link> link);
  void on_frame(const std::shared_ptr<Link>& link, Envelope env);
  void link_down(const std::shared_ptr<Link>& link);
  bool is_duplicate(const Envelope& env);
  AtomPayload directory_payload() const;
  void emit(const std::string& type, const nlohmann::json& body);

  Options options_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> next_id_{1};

  mutable std::mutex services_mu_;
  std::map<std::string, std::shared_ptr<Service>> services_;
  std::vector<std::thread> retired_workers_;

  mutable std::mutex guardian_mu_;
  std::condition_variable guardian_cv_;
  std::deque<Envelope> guardian_inbox_;
  GuardianCore guardian_;
  std::thread guardian_thread_;

  ErrorStore errors_;

  mutable std::mutex peers_mu_;
  std::condition_variable peers_cv_;
  std::map<std::string, std::shared_ptr<Peer>> peers_;
  std::vector<std::thread> link_threads_;

  std::mutex ack_mu_;
  std::condition_variable ack_cv_;
  std::map<std::uint64_t, std::shared_ptr<PendingAck>> pending_acks_;

  std::mutex waiter_mu_;
  std::map<std::uint64_t, std::shared_ptr<Waiter>> waiters_;

  std::mutex dedup_mu_;
  std::map<Address, std::set<std::uint64_t>> seen_;

  std::mutex listeners_mu_;
  std::vector<Listener> listeners_;

  Socket listener_;
  std::thread accept_thread_;
  std::thread connect_thread_;
};

}  // namespace circus::actor
