#include "got/serve.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "got/image.hpp"
#include "got/inference.hpp"
#include "httplib.h"
#include "json.hpp"

namespace got {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string json_error(int status, const std::string& message) {
  return json{{"error", message}, {"code", status}}.dump();
}

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

json model_json(const Checkpoint& ck) {
  const Manifest& m = ck.manifest;
  return json{{"task", to_string(m.task)},
              {"mode", to_string(m.mode)},
              {"format_version", m.format_version},
              {"digest", m.digest},
              {"iteration", m.iteration},
              {"vocabulary_size", ck.model.vocab.size()},
              {"superclasses", m.superclasses}};
}

std::string superclass_name(const Model& m, int id) {
  if (id >= 0 && static_cast<std::size_t>(id) < m.superclasses.size()) return m.superclasses[static_cast<std::size_t>(id)];
  return std::to_string(id);
}

Image decode_body(const std::string& bytes) {
  return decode_image(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

ServeOptions apply_env_overrides(ServeOptions options) {
  if (const char* p = std::getenv("GOT_PORT"); p && *p) {
    char* end = nullptr;
    const long port = std::strtol(p, &end, 10);
    if (*end != '\0' || port < 0 || port > 65535) throw std::invalid_argument(std::string("GOT_PORT is not a port: ") + p);
    options.port = static_cast<int>(port);
  }
  if (const char* p = std::getenv("GOT_CHECKPOINT_CAPTION"); p && *p) options.caption_checkpoint = p;
  if (const char* p = std::getenv("GOT_CHECKPOINT_RETRIEVAL"); p && *p) options.retrieval_checkpoint = p;
  return options;
}

// ---------------------------------------------------------------------------

void Service::load(const std::optional<std::filesystem::path>& caption,
                   const std::optional<std::filesystem::path>& retrieval) {
  if (!caption && !retrieval) throw std::invalid_argument("serve: no checkpoint given");
  // Loading happens outside the lock; only the swap is exclusive.
  std::optional<Checkpoint> c, r;
  if (caption) c = load_checkpoint(*caption, Task::Caption);
  if (retrieval) r = load_checkpoint(*retrieval, Task::Retrieval);
  install(std::move(c), std::move(r));
}

void Service::install(std::optional<Checkpoint> caption, std::optional<Checkpoint> retrieval) {
  if (caption && caption->model.config.task != Task::Caption) throw TaskMismatchError("serve: caption slot given a retrieval model");
  if (retrieval && retrieval->model.config.task != Task::Retrieval)
    throw TaskMismatchError("serve: retrieval slot given a caption model");
  std::unique_lock lock(mutex_);
  ready_ = false;
  caption_ = std::move(caption);
  retrieval_ = std::move(retrieval);
  ready_ = caption_.has_value() || retrieval_.has_value();
}

ServiceCounters Service::counters() const {
  return {requests_.load(), caption_count_.load(), retrieve_count_.load(), errors_.load()};
}

std::uint64_t Service::state_digest() const {
  std::shared_lock lock(mutex_);
  std::uint64_t h = 1469598103934665603ull;
  for (const auto* ck : {&caption_, &retrieval_}) {
    const std::uint64_t d = *ck ? (*ck)->model.params.digest() : 0;
    for (int i = 0; i < 8; ++i) {
      h ^= (d >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

ApiResponse Service::error(int status, const std::string& message) {
  ++errors_;
  return {status, json_error(status, message), 0};
}

ApiResponse Service::internal_error(const std::exception& e) {
  ++errors_;
  static std::atomic<std::uint64_t> sequence{0};
  std::mt19937_64 mix(static_cast<std::uint64_t>(Clock::now().time_since_epoch().count()) ^ ++sequence);
  const std::string id = digest_hex(mix());
  std::cerr << "serve: internal error " << id << ": " << e.what() << "\n";
  json j{{"error", "internal error"}, {"code", 500}, {"id", id}};
  return {500, j.dump(), 0};
}

ApiResponse Service::health() const {
  std::shared_lock lock(mutex_);
  json tasks = json::array();
  if (caption_) tasks.push_back("caption");
  if (retrieval_) tasks.push_back("retrieval");
  const auto c = counters();
  json j{{"ready", ready_.load()},
         {"tasks", tasks},
         {"counters", {{"requests", c.requests}, {"caption", c.caption}, {"retrieve", c.retrieve}, {"errors", c.errors}}}};
  return {200, j.dump(), 0};
}

ApiResponse Service::model_info() const {
  std::shared_lock lock(mutex_);
  json j{{"ready", ready_.load()}, {"caption", nullptr}, {"retrieval", nullptr}};
  if (caption_) j["caption"] = model_json(*caption_);
  if (retrieval_) j["retrieval"] = model_json(*retrieval_);
  return {200, j.dump(), 0};
}

ApiResponse Service::caption(const std::string& image) {
  const auto t0 = Clock::now();
  ++requests_;
  ++caption_count_;
  std::shared_lock lock(mutex_);
  if (!ready_ || !caption_) return error(409, "no caption model is loaded");
  if (image.empty()) return error(400, "empty image");
  try {
    Image pixels;
    try {
      pixels = decode_body(image);
    } catch (const ImageDecodeError& e) {
      return error(400, std::string("cannot decode image: ") + e.what());
    }
    const Model& model = caption_->model;
    const auto result = detect_and_caption(model, pixels);
    json dets = json::array();
    for (const auto& d : result.objects) {
      dets.push_back({{"box", box_json(d.box)},
                      {"superclass", superclass_name(model, d.superclass)},
                      {"score", d.score},
                      {"caption", join_words(decode_caption(d.caption, model.vocab))}});
    }
    json j{{"model", model_json(*caption_)}, {"fallback", result.fallback}, {"detections", dets}};
    return {200, j.dump(), elapsed_ms(t0)};
  } catch (const std::exception& e) {
    return internal_error(e);
  }
}

ApiResponse Service::retrieve(const std::string& image, const std::optional<std::string>& query) {
  const auto t0 = Clock::now();
  ++requests_;
  ++retrieve_count_;
  std::shared_lock lock(mutex_);
  if (!ready_ || !retrieval_) return error(409, "no retrieval model is loaded");
  if (image.empty()) return error(400, "empty image");
  const Words words = query ? tokenize(*query) : Words{};
  if (words.empty()) return error(400, "missing query");
  try {
    Image pixels;
    try {
      pixels = decode_body(image);
    } catch (const ImageDecodeError& e) {
      return error(400, std::string("cannot decode image: ") + e.what());
    }
    const Model& model = retrieval_->model;
    const auto result = got::retrieve(model, pixels, words);
    // chosen first, the rest by descending retrieval score (index breaks ties)
    std::vector<std::size_t> order(result.candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto chosen = static_cast<std::size_t>(result.chosen);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if ((a == chosen) != (b == chosen)) return a == chosen;
      return result.candidates[a].raw > result.candidates[b].raw;
    });
    json dets = json::array();
    for (std::size_t i : order) {
      const auto& c = result.candidates[i];
      dets.push_back({{"box", box_json(c.box)},
                      {"superclass", superclass_name(model, c.superclass)},
                      {"score", c.detection},
                      {"retrieval_score", c.score}});
    }
    json j{{"model", model_json(*retrieval_)},
           {"query", join_words(words)},
           {"all_unknown", result.all_unknown},
           {"detections", dets}};
    return {200, j.dump(), elapsed_ms(t0)};
  } catch (const std::exception& e) {
    return internal_error(e);
  }
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Service& s) : service(s) {
    auto send = [](httplib::Response& res, const ApiResponse& r) {
      res.status = r.status;
      res.set_header("X-Latency-Ms", std::to_string(r.latency_ms));
      res.set_content(r.body, "application/json");
    };
    server.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
    server.Get("/v1/model", [this, send](const httplib::Request&, httplib::Response& res) { send(res, service.model_info()); });
    server.Post("/v1/caption", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.caption(image_of(req)));
    });
    server.Post("/v1/retrieve", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.retrieve(image_of(req), query_of(req)));
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      res.status = 500;
      res.set_content(json_error(500, "internal error"), "application/json");
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) res.set_content(json_error(res.status, httplib::status_message(res.status)), "application/json");
    });
  }

  static std::string image_of(const httplib::Request& req) {
    if (req.is_multipart_form_data()) return req.has_file("image") ? req.get_file_value("image").content : std::string();
    return req.body;
  }

  static std::optional<std::string> query_of(const httplib::Request& req) {
    if (req.is_multipart_form_data() && req.has_file("query")) return req.get_file_value("query").content;
    if (req.has_param("query")) return req.get_param_value("query");
    return std::nullopt;
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw std::runtime_error("serve: cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw std::runtime_error("serve: cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace got
