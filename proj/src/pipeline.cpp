#include "atlas/pipeline.hpp"

#include <string>

#include "atlas/error.hpp"
#include "atlas/zeroshot.hpp"

namespace atlas::pipeline {

namespace fs = std::filesystem;

DatasetLayout::DatasetLayout(fs::path root_or_manifest) {
  if (fs::is_regular_file(root_or_manifest) || root_or_manifest.extension() == ".json") {
    root_ = root_or_manifest.has_parent_path() ? root_or_manifest.parent_path() : fs::path(".");
    require(root_or_manifest.filename() == "manifest.json", ErrorCode::kInvalidArgument,
            "dataset manifest must be named manifest.json");
  } else {
    root_ = std::move(root_or_manifest);
  }
}

void require_artifact(const fs::path& path, std::string_view stage) {
  require(fs::exists(path), ErrorCode::kMissingPrerequisite,
          "missing " + path.string() + ": run `atlas " + std::string(stage) + "` first");
}

EmbeddingMatrix ingest(const DatasetLayout& layout) {
  const auto manifest = parse_manifest(layout.manifest());
  const auto normalized = normalize_rows(load_embeddings(manifest));
  if (manifest.metadata_path) load_metadata(*manifest.metadata_path, normalized);
  write_embeddings(layout.normalized(), normalized);
  return normalized;
}

namespace {

EmbeddingMatrix load_normalized(const DatasetLayout& layout) {
  require_artifact(layout.normalized(), "ingest");
  return normalize_rows(load_embeddings(layout.normalized()));
}

}  // namespace

ann::AnnForest index(const DatasetLayout& layout, const ann::ForestParams& params) {
  const auto m = load_normalized(layout);
  auto forest = ann::build_forest(m, params);
  ann::save_forest(layout.forest(), forest);
  return forest;
}

tsne::Projection2D project(const DatasetLayout& layout, const tsne::TsneConfig& config,
                           const tsne::ProgressFn& progress) {
  const auto m = load_normalized(layout);
  require_artifact(layout.forest(), "index");
  const auto forest = ann::load_forest(layout.forest(), m);
  auto projection = tsne::run_tsne(m, forest, config, progress);
  tsne::save_projection(layout.projection(), projection);
  return projection;
}

tiles::TilePyramid tile(const DatasetLayout& layout, std::uint32_t tile_budget, std::uint64_t seed) {
  require_artifact(layout.projection(), "project");
  const auto projection = tsne::load_projection(layout.projection());
  auto pyramid = tiles::build_pyramid(projection, zeroshot::unassigned(projection.ids), tile_budget, seed);
  tiles::save_pyramid(layout.pyramid(), pyramid);
  return pyramid;
}

SynthDataset synth(const fs::path& out_dir, const SynthOptions& o) {
  auto data = synth_dataset(o.clusters, o.per_cluster, o.dim, o.spread, o.seed);
  fs::create_directories(out_dir);
  write_embeddings(out_dir / "embeddings.aaem", data.matrix);
  write_embeddings(out_dir / "centroids.aaem", data.centroids);

  std::vector<PointMetadata> records;
  records.reserve(data.matrix.size());
  for (std::size_t i = 0; i < data.matrix.size(); ++i) {
    PointMetadata r;
    r.id = data.matrix.id(i);
    r.title = "point " + std::to_string(r.id);
    r.description = "synthetic point drawn around centroid " + std::to_string(data.labels[i]);
    r.labels = {"cluster-" + std::to_string(data.labels[i])};
    records.push_back(std::move(r));
  }
  write_metadata(out_dir / "metadata.jsonl", records);

  DatasetManifest manifest;
  manifest.name = o.name;
  manifest.point_count = data.matrix.size();
  manifest.dim = static_cast<std::uint32_t>(o.dim);
  manifest.embeddings_path = out_dir / "embeddings.aaem";
  manifest.metadata_path = out_dir / "metadata.jsonl";
  if (!o.media_url_template.empty()) manifest.media_url_template = o.media_url_template;
  for (std::size_t c = 0; c < o.clusters; ++c) manifest.default_classes.push_back("cluster-" + std::to_string(c));
  write_manifest(out_dir / "manifest.json", manifest);
  return data;
}

LoadedDataset load_dataset(const DatasetLayout& layout) {
  LoadedDataset out;
  out.manifest = parse_manifest(layout.manifest());
  auto matrix = std::make_shared<EmbeddingMatrix>(load_normalized(layout));
  require(matrix->size() == out.manifest.point_count, ErrorCode::kInvalidArgument,
          "count mismatch between manifest and ingested embeddings");
  require_artifact(layout.forest(), "index");
  out.forest = std::make_shared<ann::AnnForest>(ann::load_forest(layout.forest(), *matrix));
  require_artifact(layout.projection(), "project");
  auto projection = std::make_shared<tsne::Projection2D>(tsne::load_projection(layout.projection()));
  require(std::equal(projection->ids.begin(), projection->ids.end(), matrix->ids().begin(),
                     matrix->ids().end()),
          ErrorCode::kInvalidArgument, "projection ids do not match the embeddings");
  require_artifact(layout.pyramid() / "manifest.json", "tile");
  out.pyramid = std::make_shared<tiles::TilePyramid>(tiles::load_pyramid(layout.pyramid()));
  require(out.pyramid->manifest.total_points == matrix->size(), ErrorCode::kInvalidArgument,
          "pyramid point count does not match the embeddings");
  out.metadata = std::make_shared<MetadataTable>(
      out.manifest.metadata_path ? load_metadata(*out.manifest.metadata_path, *matrix) : MetadataTable{});
  out.matrix = std::move(matrix);
  out.projection = std::move(projection);
  return out;
}

}  // namespace atlas::pipeline
