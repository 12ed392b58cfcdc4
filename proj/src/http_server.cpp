#include <thread>

#include <httplib.h>

#include "atlas/error.hpp"
#include "atlas/service.hpp"

namespace atlas::service {

struct HttpServer::Impl {
  AtlasService* service = nullptr;
  httplib::Server server;
  std::thread thread;
};

namespace {

void forward(AtlasService& service, const httplib::Request& req, httplib::Response& res) {
  HttpRequest in;
  in.method = req.method;
  in.path = req.path;
  for (const auto& [key, value] : req.params) in.query.emplace(key, value);
  in.body = req.body;
  const auto out = service.handle(in);
  res.status = out.status;
  for (const auto& [key, value] : out.headers) res.set_header(key, value);
  res.set_content(out.body, out.content_type);
}

}  // namespace

HttpServer::HttpServer(AtlasService& service) : impl_(std::make_unique<Impl>()) {
  impl_->service = &service;
  const std::size_t workers = std::max<std::size_t>(1, service.config().worker_threads);
  impl_->server.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  // Base64 inflates uploads by 4/3; leave room for the JSON envelope.
  impl_->server.set_payload_max_length(service.config().max_upload_bytes / 3 * 4 + (1u << 16));
  // Tiles are written in several segments; without this, Nagle and delayed ACKs
  // add ~40 ms to large responses.
  impl_->server.set_tcp_nodelay(true);
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    forward(*impl_->service, req, res);
  };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  require(bound > 0, ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  require(impl_->server.listen(host, port), ErrorCode::kIo,
          "cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace atlas::service
