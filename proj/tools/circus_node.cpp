// circus-node: one bus node, optionally hosting the DAQ service and the
// console gateway. Runs until SIGINT/SIGTERM.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "circus/actor/node.hpp"
#include "circus/daq/daq_service.hpp"
#include "circus/error.hpp"
#include "circus/orchestration/gateway.hpp"

using namespace circus;

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

std::uint16_t default_port() {
  if (const char* p = std::getenv("CIRCUS_PORT"); p && *p) return static_cast<std::uint16_t>(std::stoi(p));
  return 4462;
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Run a bus node"};
  std::string name = "node0";
  std::uint16_t port = default_port();
  std::vector<std::string> peers;
  std::string data_root;
  int gateway_port = -1;
  app.add_option("--name", name, "Node name");
  app.add_option("--port", port, "Peer listening port (default $CIRCUS_PORT or 4462; 0 = ephemeral)");
  app.add_option("--peer", peers, "Peer to dial, host:port (repeatable)");
  app.add_option("--daq", data_root, "Host the DAQ service writing under this data root");
  app.add_option("--gateway-port", gateway_port, "Serve the console gateway on this port (0 = ephemeral)");
  CLI11_PARSE(app, argc, argv);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  try {
    actor::Node::Options opts;
    opts.name = name;
    opts.port = port;
    actor::Node node(opts);
    std::cout << "node " << name << " listening on " << node.port() << std::endl;

    if (!data_root.empty()) {
      const auto addr = daq::spawn_daq_service(node, std::make_shared<daq::DaqManager>(data_root));
      std::cout << "daq service " << addr.service << " at " << data_root << std::endl;
    }
    for (const auto& p : peers) {
      const auto colon = p.rfind(':');
      if (colon == std::string::npos) fail(Errc::invalid_argument, "peer must be host:port, got " + p);
      const auto peer = node.connect_peer(p.substr(0, colon), static_cast<std::uint16_t>(std::stoi(p.substr(colon + 1))));
      std::cout << "connected to " << peer << std::endl;
    }

    std::unique_ptr<orchestration::Gateway> gateway;
    if (gateway_port >= 0) {
      orchestration::GatewayOptions g;
      g.port = static_cast<std::uint16_t>(gateway_port);
      gateway = std::make_unique<orchestration::Gateway>(g);
      gateway->attach_node(&node);
      std::cout << "gateway on " << gateway->start() << std::endl;
    }
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    if (gateway) gateway->stop();
    node.shutdown();
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
