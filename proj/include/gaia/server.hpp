#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include "gaia/platform.hpp"

namespace gaia::service {

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;  // 0 picks a free port
  int threads = 2;
  std::chrono::milliseconds drain_timeout{3000};
};

// HTTP + WebSocket front end. REST under /api/v1, live notifications on
// /ws/notifications?scope=&categories=.
class Server {
 public:
  Server(Platform& platform, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts serving. Throws Error{bind_error}.
  void start();
  std::uint16_t port() const;

  // Stops accepting, sends a close frame on every WebSocket, waits for
  // in-flight requests up to the drain timeout. Idempotent.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gaia::service
