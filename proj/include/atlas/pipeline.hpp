#pragma once

// Offline stages. Every stage reads the previous stage's artifact from the
// dataset directory and writes its own next to it:
//
//   <root>/manifest.json                     dataset manifest (input)
//   <root>/artifacts/embeddings.norm.aaem    ingest
//   <root>/artifacts/forest.aafo             index
//   <root>/artifacts/projection.aapj         project
//   <root>/artifacts/pyramid/                tile

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string_view>

#include "atlas/ann_forest.hpp"
#include "atlas/embedding_store.hpp"
#include "atlas/tile_pyramid.hpp"
#include "atlas/tsne.hpp"

namespace atlas::pipeline {

class DatasetLayout {
 public:
  // Accepts the dataset directory or the path of its manifest.json.
  explicit DatasetLayout(std::filesystem::path root_or_manifest);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path manifest() const { return root_ / "manifest.json"; }
  std::filesystem::path artifacts() const { return root_ / "artifacts"; }
  std::filesystem::path normalized() const { return artifacts() / "embeddings.norm.aaem"; }
  std::filesystem::path forest() const { return artifacts() / "forest.aafo"; }
  std::filesystem::path projection() const { return artifacts() / "projection.aapj"; }
  std::filesystem::path pyramid() const { return artifacts() / "pyramid"; }

 private:
  std::filesystem::path root_;
};

// Throws kMissingPrerequisite ("... run `atlas <stage>` first") if absent.
void require_artifact(const std::filesystem::path& path, std::string_view stage);

// Validates manifest, embeddings and metadata; persists normalized rows.
EmbeddingMatrix ingest(const DatasetLayout& layout);
ann::AnnForest index(const DatasetLayout& layout, const ann::ForestParams& params);
tsne::Projection2D project(const DatasetLayout& layout, const tsne::TsneConfig& config,
                           const tsne::ProgressFn& progress = {});
// Tiles are written with every point unassigned; the service bakes classes in.
tiles::TilePyramid tile(const DatasetLayout& layout, std::uint32_t tile_budget, std::uint64_t seed);

struct SynthOptions {
  std::string name = "synth";
  std::size_t clusters = 5;
  std::size_t per_cluster = 200;
  std::size_t dim = 32;
  double spread = 0.05;
  std::uint64_t seed = 1;
  std::string media_url_template = "https://example.org/audio/{id}.ogg";
};

// Writes manifest.json, embeddings.aaem, metadata.jsonl (labels carry the
// ground-truth cluster as "cluster-<c>") and centroids.aaem.
SynthDataset synth(const std::filesystem::path& out_dir, const SynthOptions& options);

// Everything the service needs for one dataset, loaded from finished artifacts
// and cross-checked (same N and ids everywhere).
struct LoadedDataset {
  DatasetManifest manifest;
  std::shared_ptr<const EmbeddingMatrix> matrix;
  std::shared_ptr<const ann::AnnForest> forest;
  std::shared_ptr<const tsne::Projection2D> projection;
  std::shared_ptr<const tiles::TilePyramid> pyramid;
  std::shared_ptr<const MetadataTable> metadata;
};

LoadedDataset load_dataset(const DatasetLayout& layout);

}  // namespace atlas::pipeline
