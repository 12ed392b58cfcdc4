#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "atlas/ann_forest.hpp"
#include "atlas/embedder.hpp"
#include "atlas/embedding_store.hpp"
#include "atlas/pipeline.hpp"
#include "atlas/tile_pyramid.hpp"
#include "atlas/tsne.hpp"
#include "atlas/zeroshot.hpp"

namespace atlas::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::filesystem::path> dataset_roots;
  std::string embedder_url;  // empty: use the in-process mock embedder
  std::chrono::milliseconds embedder_timeout{10000};
  std::size_t embedder_concurrency = 4;
  std::size_t max_upload_bytes = 16u << 20;
  std::size_t max_k = 100;
  std::size_t default_k = 9;
  double temperature = zeroshot::kDefaultTemperature;
  std::string prompt_template = "{class}";
  std::size_t worker_threads = 64;
};

// JSON config file (keys as the field names, timeouts in ms) overlaid with
// ATLAS_HOST, ATLAS_PORT, ATLAS_DATASET_ROOTS (':'-separated), ATLAS_EMBEDDER_URL,
// ATLAS_EMBEDDER_TIMEOUT_MS, ATLAS_MAX_UPLOAD_BYTES.
ServiceConfig load_config(const std::optional<std::filesystem::path>& path);
void apply_env_overrides(ServiceConfig& config);

// One immutable, internally consistent view of a dataset. Reclassification
// builds a new snapshot and swaps it in whole.
struct DatasetSnapshot {
  std::string name;
  DatasetManifest manifest;
  std::shared_ptr<const EmbeddingMatrix> matrix;
  std::shared_ptr<const ann::AnnForest> forest;
  std::shared_ptr<const tsne::Projection2D> projection;
  std::shared_ptr<const MetadataTable> metadata;

  std::vector<std::string> class_names;
  zeroshot::ClassAssignment assignment;
  std::vector<zeroshot::LabelPlacement> labels;
  std::shared_ptr<const tiles::TilePyramid> pyramid;
  std::unordered_map<std::uint64_t, std::string> tile_bytes;  // by TileKey::packed()

  std::uint64_t version() const noexcept { return assignment.class_set_version; }
};

// Builds a snapshot with every point unassigned (version 0) and the tiles pre-encoded.
std::shared_ptr<const DatasetSnapshot> make_snapshot(pipeline::LoadedDataset data);

// Returns the list of inconsistencies; empty when matrix, projection, pyramid
// and assignment agree on N and ids.
std::vector<std::string> verify_snapshot(const DatasetSnapshot& snapshot);

struct SearchResult {
  PointId id = 0;
  double similarity = 0.0;
  PointMetadata metadata;
  float x = 0.0f;
  float y = 0.0f;
  std::uint16_t class_index = zeroshot::kUnassigned;
};

void to_json(nlohmann::json& j, const SearchResult& r);

enum class DatasetStatus { kLoading, kReady, kFailed };

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

class AtlasService {
 public:
  AtlasService(ServiceConfig config, std::shared_ptr<Embedder> embedder);
  ~AtlasService();
  AtlasService(const AtlasService&) = delete;
  AtlasService& operator=(const AtlasService&) = delete;

  const ServiceConfig& config() const noexcept { return config_; }

  // Publishes a ready dataset. When the manifest lists default classes, they
  // are classified right away; an embedder failure leaves points unassigned.
  void add_dataset(std::shared_ptr<const DatasetSnapshot> snapshot, bool apply_default_classes = true);
  // Loads finished pipeline artifacts synchronously.
  std::string load_dataset(const std::filesystem::path& root);
  // Registers the dataset as loading (requests get 503) and loads it on a
  // background thread. Returns the dataset name.
  std::string load_dataset_async(const std::filesystem::path& root);
  void wait_for_loads();

  std::vector<std::string> dataset_names() const;
  DatasetStatus status(const std::string& name) const;
  // Current snapshot. kNotFound for unknown names, kMissingPrerequisite while
  // the dataset is still loading or failed to load.
  std::shared_ptr<const DatasetSnapshot> snapshot(const std::string& name) const;

  std::vector<SearchResult> semantic_search(const std::string& name, std::span<const float> query,
                                            std::size_t k) const;
  std::vector<SearchResult> semantic_search(const DatasetSnapshot& snap, std::span<const float> query,
                                            std::size_t k) const;
  std::vector<SearchResult> neighbors_of(const std::string& name, PointId id, std::size_t k) const;
  std::vector<SearchResult> neighbors_of(const DatasetSnapshot& snap, PointId id, std::size_t k) const;

  std::vector<float> embed_text_query(const DatasetSnapshot& snap, const std::string& text) const;
  std::vector<float> embed_audio_query(const DatasetSnapshot& snap, std::string_view bytes,
                                       std::string_view format) const;

  // Embeds the prompts, classifies, rebuilds tile class columns and labels, then
  // swaps the snapshot. On failure the previous snapshot stays served.
  std::uint64_t reclassify(const std::string& name, const std::vector<std::string>& class_names,
                           const std::string& prompt_template);

  HttpResponse handle(const HttpRequest& request);

 private:
  struct Entry {
    DatasetStatus status = DatasetStatus::kLoading;
    std::string error;
    mutable std::mutex snapshot_mutex;  // guards `current` pointer swaps only
    std::shared_ptr<const DatasetSnapshot> current;
    std::mutex writer_mutex;            // serializes reclassification
  };

  std::shared_ptr<Entry> entry(const std::string& name) const;
  std::shared_ptr<const DatasetSnapshot> reclassified(const DatasetSnapshot& base,
                                                      const std::vector<std::string>& class_names,
                                                      const std::string& prompt_template) const;

  ServiceConfig config_;
  std::shared_ptr<Embedder> embedder_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> datasets_;
  std::mutex loaders_mutex_;
  std::vector<std::jthread> loaders_;
};

// Serves an AtlasService over HTTP in a background thread.
class HttpServer {
 public:
  explicit HttpServer(AtlasService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  void stop();
  // Blocks serving on the calling thread.
  void run(const std::string& host, int port);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace atlas::service
