#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace atlas {

using PointId = std::uint64_t;

struct DatasetManifest {
  std::string name;
  std::uint64_t point_count = 0;
  std::uint32_t dim = 0;
  // Paths are resolved against the manifest's directory on parse.
  std::filesystem::path embeddings_path;
  std::optional<std::filesystem::path> metadata_path;
  std::optional<std::string> media_url_template;
  std::vector<std::string> default_classes;

  // Directory holding the manifest; pipeline artifacts live below it.
  std::filesystem::path root;

  std::optional<std::string> media_url(PointId id) const;
};

// Reads and validates a JSON manifest. The embeddings header is opened and
// cross-checked against point_count and dim.
DatasetManifest parse_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Immutable N x d row-major float matrix with ascending unique ids.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  // Validates every invariant; throws AtlasError naming the offending row.
  EmbeddingMatrix(std::vector<PointId> ids, std::vector<float> values, std::size_t dim,
                  bool normalized = false);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return ids_.empty(); }
  bool normalized() const noexcept { return normalized_; }

  std::span<const PointId> ids() const noexcept { return ids_; }
  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> row(std::size_t i) const noexcept {
    return {values_.data() + i * dim_, dim_};
  }
  PointId id(std::size_t i) const noexcept { return ids_[i]; }

  std::optional<std::size_t> index_of(PointId id) const noexcept;

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::vector<PointId> ids_;
  std::vector<float> values_;
  std::size_t dim_ = 0;
  bool normalized_ = false;
};

struct EmbeddingsHeader {
  std::uint64_t count = 0;
  std::uint32_t dim = 0;
};

// AAEM container: "AAEM", u32 version=1, u64 count, u32 dim, u8 dtype=0,
// 3 zero bytes, count u64 ids, count*dim float32.
inline constexpr std::size_t kEmbeddingsHeaderBytes = 24;

std::string encode_embeddings(const EmbeddingMatrix& m);
EmbeddingMatrix decode_embeddings(std::string_view bytes);
EmbeddingsHeader read_embeddings_header(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
// Loads the manifest's embeddings file and checks it against the manifest.
EmbeddingMatrix load_embeddings(const DatasetManifest& manifest);

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m);

// dot(a,b)/(|a||b|) accumulated in double, clamped to [-1, 1].
double cosine(std::span<const float> a, std::span<const float> b);

struct PointMetadata {
  PointId id = 0;
  std::optional<std::string> title;
  std::optional<std::string> description;
  std::vector<std::string> labels;
  std::optional<std::string> media_url;

  friend bool operator==(const PointMetadata&, const PointMetadata&) = default;
};

// Per-point metadata keyed by id. Points without a record get an empty entry.
class MetadataTable {
 public:
  void insert(PointMetadata record);
  // Returns the stored record, or a record holding only the id.
  PointMetadata lookup(PointId id, const DatasetManifest* manifest = nullptr) const;
  std::size_t size() const noexcept { return records_.size(); }

 private:
  std::unordered_map<PointId, PointMetadata> records_;
};

// JSON Lines, one object per point: {"id": 7, "title": ..., "description": ...,
// "labels": [...]}. Every id must exist in `m`.
MetadataTable load_metadata(const std::filesystem::path& path, const EmbeddingMatrix& m);
void write_metadata(const std::filesystem::path& path, std::span<const PointMetadata> records);

struct SynthDataset {
  EmbeddingMatrix matrix;              // normalized, ids 0..k*n-1, cluster-major
  std::vector<std::uint32_t> labels;   // ground-truth cluster per row
  EmbeddingMatrix centroids;           // k unit centroids, ids 0..k-1
};

// k random unit centroids; n points each as centroid + N(0, spread^2) noise,
// renormalized. Deterministic for a fixed seed.
SynthDataset synth_dataset(std::size_t k, std::size_t n, std::size_t d, double spread,
                           std::uint64_t seed);

}  // namespace atlas
