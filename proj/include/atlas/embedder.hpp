#pragma once

// Contract with the external text/audio embedding model.
//
// Wire format: POST <url>/embed with
//   {"modality": "text", "inputs": ["a dog barking", ...]}
//   {"modality": "audio", "inputs": [{"data": "<base64>", "format": "wav"}]}
// answered by {"dim": 512, "embeddings": [[...], ...]}.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace atlas::service {

enum class Modality { kText, kAudio };

struct EmbedInput {
  std::string data;    // text, or raw audio bytes
  std::string format;  // audio container tag; empty for text
};

struct EmbedResponse {
  std::size_t dim = 0;
  std::vector<std::vector<float>> embeddings;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  // Raw model output; validation and normalization happen in embed_text/embed_audio.
  virtual EmbedResponse embed(Modality modality, const std::vector<EmbedInput>& inputs) = 0;
};

// Talks to a remote model over HTTP. Connection failures and timeouts raise
// kEmbedderUnavailable; malformed answers raise kEmbedderBadResponse.
class HttpEmbedder final : public Embedder {
 public:
  HttpEmbedder(std::string base_url, std::chrono::milliseconds timeout,
               std::ptrdiff_t max_concurrency = 4);
  EmbedResponse embed(Modality modality, const std::vector<EmbedInput>& inputs) override;

 private:
  std::string base_url_;
  std::string origin_;
  std::string path_prefix_;
  std::chrono::milliseconds timeout_;
  std::counting_semaphore<64> slots_;
};

// Deterministic stand-in for the model. Inputs are hashed into a signed
// bag-of-trigrams feature vector and multiplied by a fixed seeded Gaussian
// projection, so equal inputs give equal vectors and similar strings land
// close together. Pinned texts return a caller-chosen vector verbatim.
class MockEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kFeatureBuckets = 256;

  MockEmbedder(std::size_t dim, std::uint64_t seed = 0);

  void pin(std::string text, std::vector<float> vector);
  std::size_t dim() const noexcept { return dim_; }

  EmbedResponse embed(Modality modality, const std::vector<EmbedInput>& inputs) override;

 private:
  std::vector<float> project(std::string_view bytes, std::uint64_t salt) const;

  std::size_t dim_;
  std::vector<double> projection_;  // kFeatureBuckets x dim
  std::unordered_map<std::string, std::vector<float>> pins_;
};

// Validated, unit-normalized text embeddings; one per query.
std::vector<std::vector<float>> embed_text(Embedder& embedder, std::span<const std::string> queries,
                                           std::size_t expected_dim);

// Empty payloads are rejected with kInvalidArgument and payloads above
// max_bytes with kPayloadTooLarge, both before the embedder is called.
std::vector<float> embed_audio(Embedder& embedder, std::string_view bytes, std::string_view format,
                               std::size_t expected_dim, std::size_t max_bytes);

nlohmann::json encode_embed_request(Modality modality, const std::vector<EmbedInput>& inputs);
EmbedResponse decode_embed_response(const nlohmann::json& body);
// Server side of the wire contract, for serving an Embedder over HTTP.
nlohmann::json handle_embed_request(Embedder& embedder, const nlohmann::json& request);

// Serves an Embedder on POST /embed in a background thread.
class EmbedderServer {
 public:
  explicit EmbedderServer(std::shared_ptr<Embedder> embedder);
  ~EmbedderServer();
  EmbedderServer(const EmbedderServer&) = delete;
  EmbedderServer& operator=(const EmbedderServer&) = delete;

  // port 0 picks a free port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  // Blocks serving on the calling thread.
  void run(const std::string& host, int port);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace atlas::service
