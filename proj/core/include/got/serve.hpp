#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>

#include "got/checkpoint.hpp"

namespace got {

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> caption_checkpoint;
  std::optional<std::filesystem::path> retrieval_checkpoint;
};

/// GOT_PORT, GOT_CHECKPOINT_CAPTION and GOT_CHECKPOINT_RETRIEVAL override the
/// matching fields. Throws std::invalid_argument for a malformed GOT_PORT.
ServeOptions apply_env_overrides(ServeOptions options);

/// What a handler produced. Timing travels beside the body so that bodies
/// stay byte-identical for identical requests.
struct ApiResponse {
  int status = 200;
  std::string body;  // JSON
  double latency_ms = 0;
};

struct ServiceCounters {
  std::uint64_t requests = 0;
  std::uint64_t caption = 0;
  std::uint64_t retrieve = 0;
  std::uint64_t errors = 0;
};

/// Inference over immutable loaded checkpoints. Handlers may run
/// concurrently; load() is exclusive and the service reports not-ready while
/// it runs.
class Service {
 public:
  Service() = default;
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Replaces both slots. Throws CheckpointError (the previous state is kept
  /// on failure) or std::invalid_argument when neither path is given.
  void load(const std::optional<std::filesystem::path>& caption,
            const std::optional<std::filesystem::path>& retrieval);
  /// Installs already loaded checkpoints (tests and the CLI after training).
  void install(std::optional<Checkpoint> caption, std::optional<Checkpoint> retrieval);

  bool ready() const { return ready_.load(); }
  ServiceCounters counters() const;
  /// FNV digest over every loaded parameter tensor.
  std::uint64_t state_digest() const;

  ApiResponse health() const;
  ApiResponse model_info() const;
  /// `image` holds the encoded PNG/JPEG bytes.
  ApiResponse caption(const std::string& image);
  ApiResponse retrieve(const std::string& image, const std::optional<std::string>& query);

 private:
  ApiResponse error(int status, const std::string& message);
  ApiResponse internal_error(const std::exception& e);

  mutable std::shared_mutex mutex_;
  std::optional<Checkpoint> caption_;
  std::optional<Checkpoint> retrieval_;
  std::atomic<bool> ready_{false};
  std::atomic<std::uint64_t> requests_{0}, caption_count_{0}, retrieve_count_{0}, errors_{0};
};

/// HTTP front end: GET /v1/health, GET /v1/model, POST /v1/caption,
/// POST /v1/retrieve. The image is the raw request body, or the `image` part
/// of a multipart form; the query is a `query` form field or ?query=.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  /// Binds (port 0 picks a free port) and serves on a background thread.
  /// Returns the bound port; throws std::runtime_error when binding fails.
  int start(const std::string& host, int port);
  /// Blocks serving on the calling thread until stop() from elsewhere.
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace got
