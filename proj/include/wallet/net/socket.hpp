#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

namespace wallet::net {

/// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset();

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// Bound, listening, non-blocking TCP socket. Port 0 picks a free port.
Fd listen_tcp(const std::string& host, std::uint16_t port, int backlog = 64);
std::uint16_t local_port(const Fd& fd);

/// Blocking connect with a timeout. Throws Error(source_unavailable).
Fd connect_tcp(const std::string& host, std::uint16_t port,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(3000));

void set_nonblocking(const Fd& fd, bool on = true);

/// Writes everything, retrying on EINTR/EAGAIN. Throws Error(io_failure).
void write_all(const Fd& fd, std::string_view bytes);

/// Waits until fd is readable. False on timeout.
bool wait_readable(const Fd& fd, std::chrono::milliseconds timeout);

/// `scheme://host:port`; the scheme is optional and the port defaults.
Endpoint parse_endpoint(std::string_view url, std::uint16_t default_port);

}  // namespace wallet::net
