#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace circus::actor {

/// Owning TCP socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    const int f = fd_;
    fd_ = -1;
    return f;
  }
  void close();
  /// Wakes up readers blocked on this socket without releasing the fd.
  void shutdown();

 private:
  int fd_ = -1;
};

/// Listens on host:port (port 0 picks an ephemeral port). Throws IoError.
Socket listen_tcp(const std::string& host, std::uint16_t port);
std::uint16_t local_port(const Socket& s);
/// Waits up to `timeout` for a connection; nullopt on timeout.
std::optional<Socket> accept_tcp(const Socket& listener, std::chrono::milliseconds timeout);
/// Throws IoError when the peer is unreachable.
Socket connect_tcp(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout);
/// Writes every byte; false when the connection is gone.
bool send_all(const Socket& s, std::string_view bytes);

/// Splits an inbound byte stream into newline-terminated lines.
class LineReader {
 public:
  enum class Status { line, timeout, closed };
  /// Blocks up to `timeout` for the next complete line (without '\n').
  Status next(const Socket& s, std::string& line, std::chrono::milliseconds timeout);

 private:
  std::string buf_;
  std::size_t scan_ = 0;
};

}  // namespace circus::actor
