#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace alearn::service {

enum class SessionState { Initializing, Training, AwaitingLabels, Complete, Failed };

std::string_view to_string(SessionState state) noexcept;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir = "alearn-data";
  std::size_t workers = 8;  // HTTP handler threads
};

// REST annotation service under /v1. Datasets and sessions live in
// data_dir; sessions that were running or waiting for labels resume when a
// new Service opens the same directory.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the listening socket and returns the port.
  int bind();
  // Serves until stop(); binds first if needed.
  void run();
  // run() on a background thread; returns the port once bound.
  int start();
  // Stops HTTP handling and session workers. Idempotent.
  void stop();

  int port() const noexcept;
  const ServiceConfig& config() const noexcept;

  // Blocks until the session leaves initializing/training or the timeout
  // (milliseconds) expires; returns the state reached.
  SessionState wait_settled(std::string_view session_id, int timeout_ms) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace alearn::service
