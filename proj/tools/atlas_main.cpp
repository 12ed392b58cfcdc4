#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atlas/binary_io.hpp"
#include "atlas/embedder.hpp"
#include "atlas/error.hpp"
#include "atlas/parallel.hpp"
#include "atlas/pipeline.hpp"
#include "atlas/service.hpp"
#include "json_config.hpp"

namespace fs = std::filesystem;
using namespace atlas;

namespace {

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kNotFound:
    case ErrorCode::kCorruptData:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kPayloadTooLarge:
      return 1;
    case ErrorCode::kMissingPrerequisite:
      return 2;
    default:
      return 3;
  }
}

struct EmbedderOptions {
  std::string url;
  long long timeout_ms = 10000;
  std::size_t concurrency = 4;
  std::uint64_t mock_seed = 0;
  std::size_t mock_dim = 0;
  std::string mock_pins;
};

void add_embedder_options(CLI::App* cmd, EmbedderOptions& o) {
  cmd->add_option("--embedder-url", o.url, "Embedding model base URL; empty uses the built-in mock")
      ->envname("ATLAS_EMBEDDER_URL");
  cmd->add_option("--embedder-timeout-ms", o.timeout_ms)->envname("ATLAS_EMBEDDER_TIMEOUT_MS");
  cmd->add_option("--embedder-concurrency", o.concurrency);
  cmd->add_option("--mock-seed", o.mock_seed, "Seed of the mock embedder");
  cmd->add_option("--mock-dim", o.mock_dim, "Mock embedder dimension (default: dataset dim)");
  cmd->add_option("--mock-pins", o.mock_pins,
                  "AAEM file; row with id c answers the text \"cluster-<c>\" in the mock");
}

std::shared_ptr<service::Embedder> make_embedder(const EmbedderOptions& o, std::size_t dataset_dim) {
  if (!o.url.empty()) {
    return std::make_shared<service::HttpEmbedder>(o.url, std::chrono::milliseconds(o.timeout_ms),
                                                   static_cast<std::ptrdiff_t>(o.concurrency));
  }
  const std::size_t dim = o.mock_dim != 0 ? o.mock_dim : dataset_dim;
  require(dim > 0, ErrorCode::kInvalidArgument, "mock embedder needs a dimension (--mock-dim)");
  auto mock = std::make_shared<service::MockEmbedder>(dim, o.mock_seed);
  if (!o.mock_pins.empty()) {
    const auto pins = load_embeddings(o.mock_pins);
    for (std::size_t i = 0; i < pins.size(); ++i) {
      const auto row = pins.row(i);
      mock->pin("cluster-" + std::to_string(pins.id(i)), std::vector<float>(row.begin(), row.end()));
    }
  }
  return mock;
}

void print_results(const std::vector<service::SearchResult>& results) {
  std::cout << std::left << std::setw(6) << "rank" << std::setw(12) << "id" << std::setw(12) << "similarity"
            << std::setw(12) << "x" << std::setw(12) << "y"
            << "title\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    std::cout << std::left << std::setw(6) << i + 1 << std::setw(12) << r.id << std::fixed << std::setprecision(6)
              << std::setw(12) << r.similarity << std::setprecision(3) << std::setw(12) << r.x << std::setw(12)
              << r.y << r.metadata.title.value_or("") << "\n";
    std::cout.unsetf(std::ios::floatfield);
  }
}

std::string format_from_extension(const fs::path& p) {
  auto ext = p.extension().string();
  if (!ext.empty() && ext.front() == '.') ext.erase(0, 1);
  return ext;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio atlas: embedding index, t-SNE projection, tiles and query service", "atlas"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<cli::JsonConfig>());
  app.set_config("--config", "", "JSON file whose keys mirror the flags");
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: all cores)")->envname("ATLAS_THREADS");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic clustered dataset");
  pipeline::SynthOptions synth_opts;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "Output dataset directory")->required();
  synth_cmd->add_option("--name", synth_opts.name);
  synth_cmd->add_option("-k,--clusters", synth_opts.clusters);
  synth_cmd->add_option("-n,--per-cluster", synth_opts.per_cluster);
  synth_cmd->add_option("-d,--dim", synth_opts.dim);
  synth_cmd->add_option("--spread", synth_opts.spread);
  synth_cmd->add_option("--seed", synth_opts.seed);
  synth_cmd->add_option("--media-url-template", synth_opts.media_url_template);

  // ingest / index / project / tile
  std::string dataset;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate and normalize a dataset's embeddings");
  ingest_cmd->add_option("dataset", dataset, "Dataset directory or manifest.json")->required();

  auto* index_cmd = app.add_subcommand("index", "Build the nearest-neighbor forest");
  ann::ForestParams forest_params;
  index_cmd->add_option("dataset", dataset)->required();
  index_cmd->add_option("--n-trees", forest_params.n_trees);
  index_cmd->add_option("--leaf-size", forest_params.leaf_size);
  index_cmd->add_option("--seed", forest_params.seed);

  auto* project_cmd = app.add_subcommand("project", "Compute the 2D t-SNE projection");
  tsne::TsneConfig tsne_cfg;
  project_cmd->add_option("dataset", dataset)->required();
  project_cmd->add_option("--perplexity", tsne_cfg.perplexity);
  project_cmd->add_option("--theta", tsne_cfg.theta);
  project_cmd->add_option("--iterations", tsne_cfg.iterations);
  project_cmd->add_option("--learning-rate", tsne_cfg.learning_rate);
  project_cmd->add_option("--early-exaggeration-factor", tsne_cfg.early_exaggeration_factor);
  project_cmd->add_option("--early-exaggeration-iters", tsne_cfg.early_exaggeration_iters);
  project_cmd->add_option("--momentum-initial", tsne_cfg.momentum_initial);
  project_cmd->add_option("--momentum-final", tsne_cfg.momentum_final);
  project_cmd->add_option("--momentum-switch-iter", tsne_cfg.momentum_switch_iter);
  project_cmd->add_option("--knn-multiplier", tsne_cfg.knn_multiplier);
  project_cmd->add_option("--seed", tsne_cfg.seed);

  auto* tile_cmd = app.add_subcommand("tile", "Build the tile pyramid");
  std::uint32_t tile_budget = tiles::kDefaultTileBudget;
  std::uint64_t tile_seed = 42;
  tile_cmd->add_option("dataset", dataset)->required();
  tile_cmd->add_option("--tile-budget", tile_budget);
  tile_cmd->add_option("--seed", tile_seed);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP query service");
  service::ServiceConfig svc;
  std::vector<std::string> roots;
  EmbedderOptions embed_opts;
  serve_cmd->add_option("--host", svc.host)->envname("ATLAS_HOST");
  serve_cmd->add_option("--port", svc.port)->envname("ATLAS_PORT");
  serve_cmd->add_option("--dataset-roots", roots, "Dataset directories (':'-separated in the environment)")
      ->envname("ATLAS_DATASET_ROOTS")
      ->delimiter(':');
  serve_cmd->add_option("--max-upload-bytes", svc.max_upload_bytes)->envname("ATLAS_MAX_UPLOAD_BYTES");
  serve_cmd->add_option("--max-k", svc.max_k);
  serve_cmd->add_option("--default-k", svc.default_k);
  serve_cmd->add_option("--temperature", svc.temperature);
  serve_cmd->add_option("--prompt-template", svc.prompt_template);
  serve_cmd->add_option("--worker-threads", svc.worker_threads);
  add_embedder_options(serve_cmd, embed_opts);

  // search
  auto* search_cmd = app.add_subcommand("search", "Query a dataset from the command line");
  std::string text;
  std::string audio_file;
  std::optional<PointId> query_id;
  std::size_t k = 9;
  search_cmd->add_option("dataset", dataset)->required();
  auto* text_opt = search_cmd->add_option("--text", text, "Text query (embedded by the embedder)");
  auto* audio_opt = search_cmd->add_option("--audio-file", audio_file, "Audio query file");
  auto* id_opt = search_cmd->add_option("--id", query_id, "Use a stored point's embedding as the query");
  text_opt->excludes(audio_opt)->excludes(id_opt);
  audio_opt->excludes(id_opt);
  search_cmd->add_option("-k,--k", k);
  add_embedder_options(search_cmd, embed_opts);

  // mock-embedder
  auto* mock_cmd = app.add_subcommand("mock-embedder", "Serve the deterministic mock embedder over HTTP");
  std::string mock_host = "127.0.0.1";
  int mock_port = 8090;
  mock_cmd->add_option("--host", mock_host);
  mock_cmd->add_option("--port", mock_port);
  add_embedder_options(mock_cmd, embed_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (threads > 0) set_thread_count(threads);

    if (*synth_cmd) {
      const auto data = pipeline::synth(synth_out, synth_opts);
      std::cout << "wrote " << data.matrix.size() << " points (" << synth_opts.clusters << " clusters, dim "
                << synth_opts.dim << ") to " << synth_out << "\n";
    } else if (*ingest_cmd) {
      const auto m = pipeline::ingest(pipeline::DatasetLayout(dataset));
      std::cout << "ingested " << m.size() << " points of dim " << m.dim() << "\n";
    } else if (*index_cmd) {
      const auto forest = pipeline::index(pipeline::DatasetLayout(dataset), forest_params);
      std::cout << "built " << forest.trees().size() << " trees\n";
    } else if (*project_cmd) {
      const auto proj = pipeline::project(pipeline::DatasetLayout(dataset), tsne_cfg,
                                          [](std::size_t iter, double kl) {
                                            std::cout << "iter " << iter << " kl " << kl << std::endl;
                                          });
      std::cout << "projected " << proj.size() << " points\n";
    } else if (*tile_cmd) {
      const auto pyramid = pipeline::tile(pipeline::DatasetLayout(dataset), tile_budget, tile_seed);
      std::cout << "wrote " << pyramid.tiles.size() << " tiles, max zoom " << int(pyramid.manifest.max_zoom)
                << "\n";
    } else if (*serve_cmd) {
      for (const auto& r : roots) svc.dataset_roots.emplace_back(r);
      require(!svc.dataset_roots.empty(), ErrorCode::kInvalidArgument, "no dataset roots given");
      svc.embedder_url = embed_opts.url;
      svc.embedder_timeout = std::chrono::milliseconds(embed_opts.timeout_ms);
      svc.embedder_concurrency = embed_opts.concurrency;
      const auto first = parse_manifest(pipeline::DatasetLayout(svc.dataset_roots.front()).manifest());
      service::AtlasService atlas_service(svc, make_embedder(embed_opts, first.dim));
      for (const auto& root : svc.dataset_roots) {
        const auto name = atlas_service.load_dataset(root);
        std::cout << "loaded dataset '" << name << "' from " << root.string() << "\n";
      }
      service::HttpServer server(atlas_service);
      std::cout << "listening on " << svc.host << ":" << svc.port << std::endl;
      server.run(svc.host, svc.port);
    } else if (*search_cmd) {
      const pipeline::DatasetLayout layout(dataset);
      const auto manifest = parse_manifest(layout.manifest());
      pipeline::require_artifact(layout.normalized(), "ingest");
      pipeline::require_artifact(layout.forest(), "index");
      pipeline::require_artifact(layout.projection(), "project");
      pipeline::require_artifact(layout.pyramid(), "tile");
      service::ServiceConfig cfg;
      cfg.max_k = std::max<std::size_t>(cfg.max_k, k);
      service::AtlasService atlas_service(cfg, make_embedder(embed_opts, manifest.dim));
      const auto snap = service::make_snapshot(pipeline::load_dataset(layout));
      std::vector<float> q;
      if (!text.empty()) {
        q = atlas_service.embed_text_query(*snap, text);
      } else if (!audio_file.empty()) {
        q = atlas_service.embed_audio_query(*snap, io::read_file(audio_file), format_from_extension(audio_file));
      } else if (query_id) {
        const auto idx = snap->matrix->index_of(*query_id);
        require(idx.has_value(), ErrorCode::kNotFound, "unknown point id " + std::to_string(*query_id));
        const auto row = snap->matrix->row(*idx);
        q.assign(row.begin(), row.end());
      } else {
        fail(ErrorCode::kInvalidArgument, "give one of --text, --audio-file or --id");
      }
      print_results(atlas_service.semantic_search(*snap, q, k));
    } else if (*mock_cmd) {
      require(embed_opts.mock_dim > 0, ErrorCode::kInvalidArgument, "--mock-dim is required");
      auto embedder = make_embedder(EmbedderOptions{.mock_seed = embed_opts.mock_seed,
                                                    .mock_dim = embed_opts.mock_dim,
                                                    .mock_pins = embed_opts.mock_pins},
                                    embed_opts.mock_dim);
      service::EmbedderServer server(embedder);
      std::cout << "mock embedder (dim " << embed_opts.mock_dim << ") on " << mock_host << ":" << mock_port
                << std::endl;
      server.run(mock_host, mock_port);
    }
  } catch (const AtlasError& e) {
    std::cerr << "atlas " << stage << ": " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "atlas " << stage << ": " << e.what() << "\n";
    return 3;
  }
  return 0;
}
