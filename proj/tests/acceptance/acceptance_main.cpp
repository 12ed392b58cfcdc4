// Acceptance suite: one PASS/FAIL line per criterion; exits nonzero on any failure.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "atlas/ann_forest.hpp"
#include "atlas/embedder.hpp"
#include "atlas/embedding_store.hpp"
#include "atlas/error.hpp"
#include "atlas/pipeline.hpp"
#include "atlas/service.hpp"
#include "atlas/tile_pyramid.hpp"
#include "atlas/tsne.hpp"
#include "atlas/zeroshot.hpp"

namespace fs = std::filesystem;
using namespace atlas;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o.precision(precision);
  o << v;
  return o.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "atlas-accept-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::vector<std::vector<float>> held_out_queries(const EmbeddingMatrix& centroids, std::size_t count, double spread,
                                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, centroids.size() - 1);
  std::normal_distribution<double> noise(0.0, spread);
  std::vector<std::vector<float>> out;
  for (std::size_t q = 0; q < count; ++q) {
    const auto c = centroids.row(pick(rng));
    std::vector<double> v(c.begin(), c.end());
    double norm = 0.0;
    for (auto& x : v) norm += (x += noise(rng)) * x;
    std::vector<float> f(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i] / std::sqrt(norm));
    out.push_back(std::move(f));
  }
  return out;
}

Outcome ann_recall() {
  const auto start = Clock::now();
  const auto data = synth_dataset(20, 500, 64, 0.1, 1);
  const auto forest = ann::build_forest(data.matrix);
  const auto queries = held_out_queries(data.centroids, 100, 0.1, 2);
  const std::vector<std::size_t> budgets{200, 500, 1000, 2000, data.matrix.size()};
  std::vector<double> recall(budgets.size(), 0.0);
  for (const auto& q : queries) {
    std::vector<std::size_t> exact;
    for (const auto& n : ann::exact_knn(data.matrix, q, 10)) exact.push_back(n.index);
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      std::vector<std::size_t> approx;
      for (const auto& n : ann::query(forest, data.matrix, q, 10, budgets[b])) approx.push_back(n.index);
      recall[b] += ann::recall_at_k(approx, exact) / queries.size();
    }
  }
  bool monotone = true;
  for (std::size_t b = 1; b < budgets.size(); ++b) monotone &= recall[b] >= recall[b - 1];
  const double secs = seconds_since(start);
  std::string detail = "recall@10 by search_k {200,500,1000,2000,N}:";
  for (double r : recall) detail += " " + fmt(r, 3);
  detail += "; " + fmt(secs, 3) + " s";
  return {recall[3] >= 0.90 && monotone && secs < 60.0, detail};
}

EmbeddingMatrix random_unit(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0, 1);
  std::vector<PointId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<float> v(n * d);
  for (auto& x : v) x = g(rng);
  return normalize_rows(EmbeddingMatrix(ids, v, d));
}

tsne::Coords random_coords(std::size_t n, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, scale);
  tsne::Coords y(2 * n);
  for (auto& v : y) v = g(rng);
  return y;
}

tsne::SparseAffinities affinities_for(const EmbeddingMatrix& m, double perplexity) {
  tsne::TsneConfig cfg;
  cfg.perplexity = perplexity;
  return tsne::build_affinities(m, ann::build_forest(m, {5, 8, 1}), cfg);
}

Outcome tsne_gradients() {
  // Central finite differences of the objective on 20 small instances.
  double worst_fd = 0.0;
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    const std::size_t n = 30;
    const auto m = random_unit(n, 6, 1000 + inst);
    const auto p = affinities_for(m, 5.0);
    auto y = random_coords(n, 1.0, 2000 + inst);
    const auto g = tsne::exact_gradient(y, p);
    double gmax = 0.0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    const double h = 1e-5;
    for (std::size_t k = 0; k < y.size(); ++k) {
      const double keep = y[k];
      y[k] = keep + h;
      const double up = tsne::kl_divergence(p, y);
      y[k] = keep - h;
      const double down = tsne::kl_divergence(p, y);
      y[k] = keep;
      const double fd = (up - down) / (2 * h);
      // Components that are numerically zero are compared against the gradient scale.
      const double denom = std::max(std::abs(g[k]), 1e-3 * gmax);
      worst_fd = std::max(worst_fd, std::abs(fd - g[k]) / denom);
    }
  }

  const auto m0 = random_unit(300, 8, 3);
  const auto p0 = affinities_for(m0, 10.0);
  const auto y0 = random_coords(300, 5.0, 4);
  const auto e0 = tsne::exact_gradient(y0, p0);
  const auto b0 = tsne::bh_gradient(y0, p0, 0.0);
  double worst_theta0 = 0.0;
  for (std::size_t k = 0; k < e0.size(); ++k) worst_theta0 = std::max(worst_theta0, std::abs(e0[k] - b0[k]));

  const auto m1 = random_unit(500, 16, 5);
  const auto p1 = affinities_for(m1, 30.0);
  const auto y1 = random_coords(500, 10.0, 6);
  const auto e1 = tsne::exact_gradient(y1, p1);
  const auto b1 = tsne::bh_gradient(y1, p1, 0.5);
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < e1.size(); ++k) ab += e1[k] * b1[k], aa += e1[k] * e1[k], bb += b1[k] * b1[k];
  const double cosine = ab / std::sqrt(aa * bb);

  return {worst_fd <= 1e-4 && worst_theta0 <= 1e-9 && cosine >= 0.99,
          "finite-difference rel err " + fmt(worst_fd, 3) + ", theta=0 max abs diff " + fmt(worst_theta0, 3) +
              ", theta=0.5 cosine " + fmt(cosine, 6)};
}

double one_nn_purity(const tsne::Projection2D& p, const std::vector<std::uint32_t>& labels) {
  std::size_t agree = 0;
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    double best = INFINITY;
    std::size_t at = i;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = p.coords[2 * i] - p.coords[2 * j], dy = p.coords[2 * i + 1] - p.coords[2 * j + 1];
      if (dx * dx + dy * dy < best) best = dx * dx + dy * dy, at = j;
    }
    agree += labels[at] == labels[i];
  }
  return double(agree) / n;
}

Outcome projection_quality() {
  const auto start = Clock::now();
  const auto data = synth_dataset(3, 50, 16, 0.01, 4);
  const auto forest = ann::build_forest(data.matrix);
  tsne::TsneConfig config;
  config.perplexity = 30;
  const auto p = tsne::run_tsne(data.matrix, forest, config);
  const double purity = one_nn_purity(p, data.labels);
  // Entry 4 is recorded at iteration 250, the last exaggerated step; entry 5
  // is the first one after exaggeration ends.
  const std::size_t first_post = config.early_exaggeration_iters / tsne::kKlInterval;
  const bool has = p.kl_history.size() > first_post;
  const double first = has ? p.kl_history[first_post] : NAN;
  const double last = p.kl_history.empty() ? NAN : p.kl_history.back();
  const double secs = seconds_since(start);
  return {purity >= 0.95 && has && last < first && secs < 120.0,
          "purity " + fmt(purity) + ", KL first post-exaggeration " + fmt(first) + " -> final " + fmt(last) + "; " +
              fmt(secs, 3) + " s"};
}

Outcome zero_shot() {
  const auto data = synth_dataset(50, 40, 64, 0.01, 7);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < 50; ++c) names.push_back("class-" + std::to_string(c));
  const auto classes = zeroshot::make_class_set(
      names, std::vector<float>(data.centroids.values().begin(), data.centroids.values().end()), 64);
  const auto a = zeroshot::classify(data.matrix, classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.matrix.size(); ++i) correct += a.class_index[i] == data.labels[i];
  const double accuracy = double(correct) / data.matrix.size();
  return {accuracy == 1.0, "accuracy " + fmt(accuracy, 6) + " over " + std::to_string(data.matrix.size()) + " points"};
}

tsne::Projection2D uniform_projection(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-100.0f, 100.0f);
  tsne::Projection2D p;
  p.ids.resize(n);
  std::iota(p.ids.begin(), p.ids.end(), PointId{0});
  p.coords.resize(2 * n);
  for (auto& c : p.coords) c = u(rng);
  return p;
}

Outcome tile_partition() {
  const std::uint32_t budget = 1000;
  const auto proj = uniform_projection(100000, 8);
  const auto assignment = zeroshot::unassigned(proj.ids);
  const auto a = tiles::build_pyramid(proj, assignment, budget, 9);
  const auto b = tiles::build_pyramid(proj, assignment, budget, 9);

  std::vector<std::uint32_t> seen(proj.size(), 0);
  bool budget_ok = true;
  for (const auto& t : a.tiles) {
    for (auto id : t.ids) ++seen[id];
    if (t.key.z < tiles::kMaxZoomCap && t.size() > budget) budget_ok = false;
  }
  const bool partition = std::all_of(seen.begin(), seen.end(), [](auto c) { return c == 1; });

  bool identical = a.tiles.size() == b.tiles.size() && a.manifest == b.manifest;
  for (std::size_t i = 0; identical && i < a.tiles.size(); ++i) {
    identical = tiles::serialize_tile(a.tiles[i]) == tiles::serialize_tile(b.tiles[i]);
  }

  std::mt19937_64 rng(10);
  bool roundtrip = true;
  for (int trial = 0; trial < 1000; ++trial) {
    tiles::Tile t;
    t.key = {static_cast<std::uint8_t>(rng() % 25), static_cast<std::uint32_t>(rng() % (1u << 20)),
             static_cast<std::uint32_t>(rng() % (1u << 20))};
    const std::size_t n = rng() % 600;
    for (std::size_t i = 0; i < n; ++i) {
      t.ids.push_back(rng());
      t.xs.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(rng() % 0x7f000000u)));
      t.ys.push_back(static_cast<float>(rng() % 100000) * -0.37f);
      t.classes.push_back(static_cast<std::uint16_t>(rng()));
      t.ranks.push_back(static_cast<float>(rng() >> 40) * 0x1p-24f);
    }
    const auto bytes = tiles::serialize_tile(t);
    const auto back = tiles::deserialize_tile(bytes);
    roundtrip &= back == t && tiles::serialize_tile(back) == bytes;
  }
  return {partition && budget_ok && identical && roundtrip,
          std::to_string(a.tiles.size()) + " tiles, max zoom " + std::to_string(a.manifest.max_zoom) +
              "; partition " + (partition ? "ok" : "BROKEN") + ", budget " + (budget_ok ? "ok" : "EXCEEDED") +
              ", repeat run " + (identical ? "byte-identical" : "DIFFERENT") + ", 1000 tile round trips " +
              (roundtrip ? "exact" : "MISMATCH")};
}

// Service end to end: offline pipeline on disk, then the HTTP server with an HTTP mock embedder.
Outcome service_end_to_end() {
  const auto start = Clock::now();
  TempDir dir;
  const fs::path root = dir.path / "ds";
  pipeline::SynthOptions opts;
  opts.name = "synth10k";
  opts.clusters = 10;
  opts.per_cluster = 1000;
  opts.dim = 32;
  opts.spread = 0.05;
  opts.seed = 21;
  const auto data = pipeline::synth(root, opts);
  const pipeline::DatasetLayout layout(root);
  pipeline::ingest(layout);
  pipeline::index(layout, {});
  pipeline::project(layout, {});
  pipeline::tile(layout, 1000, 0);
  const double offline_secs = seconds_since(start);

  auto mock = std::make_shared<service::MockEmbedder>(32, 0);
  for (std::size_t c = 0; c < opts.clusters; ++c) {
    const auto row = data.centroids.row(c);
    mock->pin("cluster-" + std::to_string(c), {row.begin(), row.end()});
  }
  service::EmbedderServer embedder_server(mock);
  const int embedder_port = embedder_server.start("127.0.0.1", 0);

  service::ServiceConfig config;
  config.embedder_url = "http://127.0.0.1:" + std::to_string(embedder_port);
  auto remote = std::make_shared<service::HttpEmbedder>(config.embedder_url, config.embedder_timeout, 4);
  service::AtlasService atlas_service(config, remote);
  atlas_service.load_dataset(root);
  service::HttpServer server(atlas_service);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(60, 0);

  auto label_of = [&](PointId id) { return data.labels[*data.matrix.index_of(id)]; };
  std::vector<std::string> notes;

  // Text search for a centroid-derived query.
  std::size_t worst_same = 10;
  std::string per_cluster;
  for (std::size_t c = 0; c < opts.clusters; ++c) {
    const auto r = client.Post("/api/datasets/synth10k/search",
                               json{{"text", "cluster-" + std::to_string(c)}, {"k", 10}}.dump(), "application/json");
    if (!r || r->status != 200) return {false, "search request failed"};
    std::size_t same = 0;
    const auto body = json::parse(r->body);
    for (const auto& res : body["results"]) same += label_of(res["id"].get<PointId>()) == c;
    worst_same = std::min(worst_same, same);
    per_cluster += (c ? "," : "") + std::to_string(same);
  }
  const bool search_ok = worst_same >= 9;
  notes.push_back("search same-cluster per class [" + per_cluster + "]/10");

  // Point detail with the default 9 neighbors.
  bool points_ok = true;
  for (PointId id : {PointId{0}, PointId{4321}, PointId{9999}}) {
    const auto r = client.Get("/api/datasets/synth10k/points/" + std::to_string(id));
    if (!r || r->status != 200) return {false, "points request failed"};
    const auto body = json::parse(r->body);
    points_ok &= body["neighbors"].size() == 9;
    for (const auto& n : body["neighbors"]) points_ok &= n["id"].get<PointId>() != id;
  }
  notes.push_back(std::string("points neighbors ") + (points_ok ? "9 excluding self" : "WRONG"));

  // Reclassification under 32 concurrent tile readers. Odd versions use the
  // forward class list, even versions the reversed one, so every tile's class
  // column identifies the version it came from.
  std::vector<std::string> forward, backward;
  for (std::size_t c = 0; c < opts.clusters; ++c) forward.push_back("cluster-" + std::to_string(c));
  backward.assign(forward.rbegin(), forward.rend());
  const auto first = client.Post("/api/datasets/synth10k/classify", json{{"class_names", forward}}.dump(),
                                 "application/json");
  if (!first || first->status != 200) return {false, "classify request failed"};
  const auto base_version = json::parse(first->body)["class_set_version"].get<std::uint64_t>();
  const auto manifest = json::parse(client.Get("/api/datasets/synth10k/manifest")->body);
  const int max_zoom = manifest["max_zoom"].get<int>();

  std::atomic<bool> stop{false};
  std::atomic<std::size_t> mixed{0}, responses{0}, failures{0};
  std::set<std::uint64_t> versions_seen;
  std::mutex versions_mutex;
  std::vector<std::thread> readers;
  for (int t = 0; t < 32; ++t) {
    readers.emplace_back([&, t] {
      httplib::Client c("127.0.0.1", port);
      c.set_read_timeout(60, 0);
      std::mt19937_64 rng(t);
      while (!stop) {
        const int z = static_cast<int>(rng() % (max_zoom + 1));
        const auto x = rng() % (1u << z), y = rng() % (1u << z);
        const auto r = c.Get("/api/datasets/synth10k/tiles/" + std::to_string(z) + "/" + std::to_string(x) + "/" +
                             std::to_string(y));
        if (!r || r->status != 200) {
          ++failures;
          continue;
        }
        const auto v = std::stoull(r->get_header_value("X-Class-Set-Version"));
        const auto tile = tiles::deserialize_tile(r->body);
        const bool odd = (v - base_version) % 2 == 0;
        for (std::size_t k = 0; k < tile.size(); ++k) {
          const auto c_true = label_of(tile.ids[k]);
          const auto want = odd ? c_true : opts.clusters - 1 - c_true;
          if (tile.classes[k] != want) {
            ++mixed;
            break;
          }
        }
        ++responses;
        std::lock_guard lock(versions_mutex);
        versions_seen.insert(v);
      }
    });
  }
  for (int round = 0; round < 10; ++round) {
    const auto r = client.Post("/api/datasets/synth10k/classify",
                               json{{"class_names", round % 2 == 0 ? backward : forward}}.dump(), "application/json");
    if (!r || r->status != 200) ++failures;
  }
  while (responses < 500) std::this_thread::yield();
  stop = true;
  for (auto& r : readers) r.join();
  const bool atomic_ok = mixed == 0 && failures == 0 && versions_seen.size() > 1;
  notes.push_back(std::to_string(responses.load()) + " tile reads across " + std::to_string(versions_seen.size()) +
                  " versions, " + std::to_string(mixed.load()) + " mixed, " + std::to_string(failures.load()) +
                  " failed");
  server.stop();
  embedder_server.stop();

  std::string detail;
  for (const auto& n : notes) detail += n + "; ";
  detail += "pipeline " + fmt(offline_secs, 3) + " s";
  return {search_ok && points_ok && atomic_ok, detail};
}

Outcome scalability() {
  const std::uint32_t budget = tiles::kDefaultTileBudget;
  const std::size_t n = 1000000;
  auto proj = std::make_shared<tsne::Projection2D>();
  {
    // Clustered layout so that some regions go deep.
    std::mt19937_64 rng(12);
    std::normal_distribution<float> g(0.0f, 1.0f);
    std::uniform_real_distribution<float> centre(-50.0f, 50.0f);
    std::vector<std::pair<float, float>> centres(40);
    for (auto& c : centres) c = {centre(rng), centre(rng)};
    proj->ids.resize(n);
    std::iota(proj->ids.begin(), proj->ids.end(), PointId{0});
    proj->coords.resize(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = centres[rng() % centres.size()];
      proj->coords[2 * i] = c.first + 2.0f * g(rng);
      proj->coords[2 * i + 1] = c.second + 2.0f * g(rng);
    }
  }
  auto snap = std::make_shared<service::DatasetSnapshot>();
  snap->name = "million";
  snap->manifest.name = "million";
  snap->manifest.point_count = n;
  snap->manifest.dim = 1;
  snap->matrix = std::make_shared<EmbeddingMatrix>(proj->ids, std::vector<float>(n, 1.0f), 1, true);
  snap->projection = proj;
  snap->metadata = std::make_shared<MetadataTable>();
  snap->assignment = zeroshot::unassigned(proj->ids);
  snap->pyramid = std::make_shared<tiles::TilePyramid>(tiles::build_pyramid(*proj, snap->assignment, budget, 13));
  for (const auto& t : snap->pyramid->tiles) snap->tile_bytes.emplace(t.key.packed(), tiles::serialize_tile(t));
  const int max_zoom = snap->pyramid->manifest.max_zoom;

  service::ServiceConfig config;
  service::AtlasService atlas_service(config, std::make_shared<service::MockEmbedder>(1));
  atlas_service.add_dataset(snap, false);
  service::HttpServer server(atlas_service);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);
  client.set_keep_alive(true);
  client.set_tcp_nodelay(true);

  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> latencies_ms;
  bool payload_ok = true, requests_ok = true;
  std::size_t worst_points = 0;
  for (int v = 0; v < 1000; ++v) {
    const auto z = static_cast<std::uint8_t>(rng() % (max_zoom + 1));
    // A screen-sized window: one to three cells wide at zoom z.
    const double cell = std::ldexp(1.0, -z);
    const double w = std::min(1.0, cell * (1.0 + 2.0 * unit(rng)));
    const double h = std::min(1.0, cell * (1.0 + 2.0 * unit(rng)));
    const double u0 = unit(rng) * (1.0 - w), v0 = unit(rng) * (1.0 - h);
    const auto keys = tiles::tiles_for_viewport({u0, v0, u0 + w, v0 + h}, z);
    std::size_t points = 0;
    for (const auto& k : keys) {
      const auto t0 = Clock::now();
      const auto r = client.Get("/api/datasets/million/tiles/" + std::to_string(k.z) + "/" + std::to_string(k.x) +
                                "/" + std::to_string(k.y));
      latencies_ms.push_back(seconds_since(t0) * 1000.0);
      if (!r || r->status != 200) {
        requests_ok = false;
        continue;
      }
      points += (r->body.size() - tiles::kTileHeaderBytes) / tiles::kTilePointBytes;
    }
    payload_ok &= points <= keys.size() * budget;
    worst_points = std::max(worst_points, points);
  }
  server.stop();
  std::sort(latencies_ms.begin(), latencies_ms.end());
  const double p99 = latencies_ms[static_cast<std::size_t>(0.99 * (latencies_ms.size() - 1))];
  return {requests_ok && payload_ok && p99 < 50.0,
          std::to_string(latencies_ms.size()) + " tile requests over 1000 viewports (max zoom " +
              std::to_string(max_zoom) + "): p50 " + fmt(latencies_ms[latencies_ms.size() / 2], 3) + " ms, p99 " +
              fmt(p99, 3) + " ms; largest viewport payload " + std::to_string(worst_points) + " points; bound " +
              (payload_ok ? "held" : "VIOLATED")};
}

Outcome format_round_trips() {
  std::mt19937_64 rng(15);
  std::size_t trials = 0;
  std::vector<std::string> broken;
  for (int t = 0; t < 40; ++t, ++trials) {
    const std::size_t n = 1 + rng() % 300, d = 1 + rng() % 40;
    std::vector<PointId> ids(n);
    PointId next = rng() % 1000;
    for (auto& id : ids) id = next += 1 + rng() % 50;
    std::vector<float> values(n * d);
    std::normal_distribution<float> g(0, 3);
    for (auto& v : values) v = g(rng);
    const EmbeddingMatrix m(ids, values, d);
    const auto bytes = encode_embeddings(m);
    if (!(decode_embeddings(bytes) == m) || encode_embeddings(decode_embeddings(bytes)) != bytes) {
      broken.push_back("AAEM");
    }

    const auto unit = normalize_rows(m);
    const auto forest = ann::build_forest(unit, {static_cast<std::uint32_t>(1 + rng() % 8),
                                                 static_cast<std::uint32_t>(2 + rng() % 20), rng()});
    const auto fbytes = ann::encode_forest(forest);
    if (!(ann::decode_forest(fbytes) == forest) || ann::encode_forest(ann::decode_forest(fbytes)) != fbytes) {
      broken.push_back("AAFO");
    }

    tsne::Projection2D p;
    p.ids = ids;
    p.coords.resize(2 * n);
    for (auto& c : p.coords) c = g(rng) * 40.0f;
    if (rng() % 2) p.kl_history = {3.5f, 2.25f, 1.125f};
    const auto pbytes = tsne::encode_projection(p);
    if (!(tsne::decode_projection(pbytes) == p) || tsne::encode_projection(tsne::decode_projection(pbytes)) != pbytes) {
      broken.push_back("AAPJ");
    }

    const auto pyramid = tiles::build_pyramid(p, zeroshot::unassigned(p.ids), 1 + rng() % 50, rng());
    for (const auto& tile : pyramid.tiles) {
      const auto tbytes = tiles::serialize_tile(tile);
      if (!(tiles::deserialize_tile(tbytes) == tile) || tiles::serialize_tile(tiles::deserialize_tile(tbytes)) != tbytes) {
        broken.push_back("AATL");
        break;
      }
    }
  }
  return {broken.empty(), std::to_string(trials) + " random instances per format" +
                              (broken.empty() ? std::string(", all bit-exact") : ", broken: " + broken.front())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"ann-recall", ann_recall},
      {"tsne-gradient", tsne_gradients},
      {"projection-quality", projection_quality},
      {"zero-shot", zero_shot},
      {"tile-partition", tile_partition},
      {"service-end-to-end", service_end_to_end},
      {"scalability", scalability},
      {"format-round-trips", format_round_trips},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    failed += !o.pass;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
