#include "atlas/embedder.hpp"

#include <cmath>
#include <random>
#include <thread>

#include <httplib.h>

#include "atlas/base64.hpp"
#include "atlas/error.hpp"
#include "atlas/hash.hpp"

namespace atlas::service {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTextSalt = 0x7465787400000000ULL;
constexpr std::uint64_t kAudioSalt = 0x617564696f000000ULL;

std::string_view modality_name(Modality m) { return m == Modality::kText ? "text" : "audio"; }

// Checks dimension and finiteness, then scales to unit norm.
std::vector<float> validated_unit(std::vector<float> v, std::size_t expected_dim) {
  require(v.size() == expected_dim, ErrorCode::kDimensionMismatch,
          "dimension mismatch: embedder returned dim " + std::to_string(v.size()) +
              ", dataset dim " + std::to_string(expected_dim));
  double sq = 0.0;
  for (float x : v) {
    require(std::isfinite(x), ErrorCode::kEmbedderBadResponse,
            "embedder returned a non-finite component");
    sq += static_cast<double>(x) * x;
  }
  require(sq > 0.0, ErrorCode::kEmbedderBadResponse, "embedder returned a zero vector");
  const double norm = std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x / norm);
  return v;
}

}  // namespace

json encode_embed_request(Modality modality, const std::vector<EmbedInput>& inputs) {
  json items = json::array();
  for (const auto& in : inputs) {
    if (modality == Modality::kText) {
      items.push_back(in.data);
    } else {
      items.push_back({{"data", base64_encode(in.data)}, {"format", in.format}});
    }
  }
  return {{"modality", modality_name(modality)}, {"inputs", std::move(items)}};
}

EmbedResponse decode_embed_response(const json& body) {
  EmbedResponse out;
  try {
    out.dim = body.at("dim").get<std::size_t>();
    for (const auto& row : body.at("embeddings")) out.embeddings.push_back(row.get<std::vector<float>>());
  } catch (const json::exception& e) {
    fail(ErrorCode::kEmbedderBadResponse, std::string("malformed embedder response: ") + e.what());
  }
  for (const auto& row : out.embeddings) {
    require(row.size() == out.dim, ErrorCode::kEmbedderBadResponse,
            "embedder response rows disagree with declared dim");
  }
  return out;
}

json handle_embed_request(Embedder& embedder, const json& request) {
  Modality modality;
  std::vector<EmbedInput> inputs;
  try {
    const auto name = request.at("modality").get<std::string>();
    require(name == "text" || name == "audio", ErrorCode::kInvalidArgument,
            "modality must be 'text' or 'audio'");
    modality = name == "text" ? Modality::kText : Modality::kAudio;
    for (const auto& item : request.at("inputs")) {
      if (modality == Modality::kText) {
        inputs.push_back({item.get<std::string>(), ""});
      } else {
        inputs.push_back({base64_decode(item.at("data").get<std::string>()),
                          item.value("format", std::string{})});
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed embed request: ") + e.what());
  }
  const auto response = embedder.embed(modality, inputs);
  return {{"dim", response.dim}, {"embeddings", response.embeddings}};
}

HttpEmbedder::HttpEmbedder(std::string base_url, std::chrono::milliseconds timeout,
                           std::ptrdiff_t max_concurrency)
    : base_url_(std::move(base_url)), timeout_(timeout), slots_(std::clamp<std::ptrdiff_t>(max_concurrency, 1, 64)) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  // httplib wants scheme://host:port only; keep any path prefix for the request.
  const auto scheme = base_url_.find("://");
  const auto slash = base_url_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  origin_ = base_url_.substr(0, slash);
  if (slash != std::string::npos) path_prefix_ = base_url_.substr(slash);
}

EmbedResponse HttpEmbedder::embed(Modality modality, const std::vector<EmbedInput>& inputs) {
  const auto body = encode_embed_request(modality, inputs).dump();
  if (!slots_.try_acquire_for(timeout_)) {
    fail(ErrorCode::kEmbedderUnavailable, "embedder concurrency limit reached");
  }
  struct Release {
    std::counting_semaphore<64>& s;
    ~Release() { s.release(); }
  } release{slots_};

  httplib::Client client(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  auto res = client.Post(path_prefix_ + "/embed", body, "application/json");
  if (!res) {
    fail(ErrorCode::kEmbedderUnavailable,
         "embedder unreachable at " + base_url_ + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    fail(ErrorCode::kEmbedderBadResponse, "embedder answered HTTP " + std::to_string(res->status));
  }
  json parsed;
  try {
    parsed = json::parse(res->body);
  } catch (const json::exception& e) {
    fail(ErrorCode::kEmbedderBadResponse, std::string("embedder returned invalid JSON: ") + e.what());
  }
  auto out = decode_embed_response(parsed);
  require(out.embeddings.size() == inputs.size(), ErrorCode::kEmbedderBadResponse,
          "embedder returned " + std::to_string(out.embeddings.size()) + " vectors for " +
              std::to_string(inputs.size()) + " inputs");
  return out;
}

MockEmbedder::MockEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim) {
  require(dim >= 1, ErrorCode::kInvalidArgument, "mock embedder dim must be >= 1");
  std::mt19937_64 rng(derive_seed(seed, 0x6d6f636b));
  std::normal_distribution<double> gauss(0.0, 1.0);
  projection_.resize(kFeatureBuckets * dim_);
  for (double& v : projection_) v = gauss(rng);
}

void MockEmbedder::pin(std::string text, std::vector<float> vector) {
  require(vector.size() == dim_, ErrorCode::kDimensionMismatch, "pinned vector has the wrong dim");
  pins_.insert_or_assign(std::move(text), std::move(vector));
}

std::vector<float> MockEmbedder::project(std::string_view bytes, std::uint64_t salt) const {
  std::vector<double> features(kFeatureBuckets, 0.0);
  const std::string padded = "\x02" + std::string(bytes) + "\x03";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::uint64_t h = mix64(fnv1a64(std::string_view(padded).substr(i, 3)) ^ salt);
    features[h % kFeatureBuckets] += (h >> 63) ? -1.0 : 1.0;
  }
  std::vector<float> out(dim_, 0.0f);
  double sq = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) {
    double acc = 0.0;
    for (std::size_t f = 0; f < kFeatureBuckets; ++f) acc += features[f] * projection_[f * dim_ + j];
    out[j] = static_cast<float>(acc);
    sq += acc * acc;
  }
  if (sq == 0.0) {
    // Trigram signs cancelled out; fall back to a vector seeded by the whole input.
    std::mt19937_64 rng(mix64(fnv1a64(bytes) ^ salt));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (float& v : out) v = static_cast<float>(gauss(rng));
  }
  return out;
}

EmbedResponse MockEmbedder::embed(Modality modality, const std::vector<EmbedInput>& inputs) {
  EmbedResponse out;
  out.dim = dim_;
  for (const auto& in : inputs) {
    if (modality == Modality::kText) {
      if (auto it = pins_.find(in.data); it != pins_.end()) {
        out.embeddings.push_back(it->second);
        continue;
      }
      out.embeddings.push_back(project(in.data, kTextSalt));
    } else {
      out.embeddings.push_back(project(in.format + '\0' + in.data, kAudioSalt));
    }
  }
  return out;
}

std::vector<std::vector<float>> embed_text(Embedder& embedder, std::span<const std::string> queries,
                                           std::size_t expected_dim) {
  require(!queries.empty(), ErrorCode::kInvalidArgument, "no text queries given");
  std::vector<EmbedInput> inputs;
  for (const auto& q : queries) {
    require(!q.empty(), ErrorCode::kInvalidArgument, "text queries must be non-empty");
    inputs.push_back({q, ""});
  }
  auto response = embedder.embed(Modality::kText, inputs);
  require(response.embeddings.size() == queries.size(), ErrorCode::kEmbedderBadResponse,
          "embedder returned the wrong number of vectors");
  std::vector<std::vector<float>> out;
  out.reserve(queries.size());
  for (auto& v : response.embeddings) out.push_back(validated_unit(std::move(v), expected_dim));
  return out;
}

std::vector<float> embed_audio(Embedder& embedder, std::string_view bytes, std::string_view format,
                               std::size_t expected_dim, std::size_t max_bytes) {
  require(!bytes.empty(), ErrorCode::kInvalidArgument, "empty audio payload");
  require(bytes.size() <= max_bytes, ErrorCode::kPayloadTooLarge,
          "audio payload of " + std::to_string(bytes.size()) + " bytes exceeds the " +
              std::to_string(max_bytes) + "-byte limit");
  auto response = embedder.embed(Modality::kAudio, {{std::string(bytes), std::string(format)}});
  require(response.embeddings.size() == 1, ErrorCode::kEmbedderBadResponse,
          "embedder returned the wrong number of vectors");
  return validated_unit(std::move(response.embeddings.front()), expected_dim);
}

struct EmbedderServer::Impl {
  std::shared_ptr<Embedder> embedder;
  httplib::Server server;
  std::thread thread;
};

EmbedderServer::EmbedderServer(std::shared_ptr<Embedder> embedder) : impl_(std::make_unique<Impl>()) {
  impl_->embedder = std::move(embedder);
  impl_->server.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto reply = handle_embed_request(*impl_->embedder, json::parse(req.body));
      res.set_content(reply.dump(), "application/json");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const AtlasError& e) {
      res.status = e.code() == ErrorCode::kInvalidArgument ? 400 : 500;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
}

EmbedderServer::~EmbedderServer() { stop(); }

int EmbedderServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : port;
  if (port != 0) {
    require(impl_->server.bind_to_port(host, port), ErrorCode::kIo,
            "cannot bind embedder server to " + host + ":" + std::to_string(port));
  }
  require(bound > 0, ErrorCode::kIo, "cannot bind embedder server");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void EmbedderServer::run(const std::string& host, int port) {
  require(impl_->server.listen(host, port), ErrorCode::kIo,
          "cannot listen on " + host + ":" + std::to_string(port));
}

void EmbedderServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace atlas::service
