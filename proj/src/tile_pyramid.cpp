#include "atlas/tile_pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "atlas/binary_io.hpp"
#include "atlas/error.hpp"
#include "atlas/hash.hpp"

namespace atlas::tiles {
namespace {

constexpr std::string_view kTileMagic = "AATL";
constexpr std::uint8_t kTileVersion = 1;

std::uint32_t cell_index(double t, std::uint8_t z) noexcept {
  const double cells = std::ldexp(1.0, z);
  const double scaled = std::floor(t * cells);
  if (scaled <= 0.0) return 0;
  if (scaled >= cells) return static_cast<std::uint32_t>(cells) - 1;
  return static_cast<std::uint32_t>(scaled);
}

double normalize_x(const Extent& e, double x) noexcept { return (x - e.min_x) / e.width(); }
double normalize_y(const Extent& e, double y) noexcept { return (y - e.min_y) / e.height(); }

}  // namespace

void to_json(nlohmann::json& j, const PyramidManifest& m) {
  j = nlohmann::json{
      {"extent", {m.extent.min_x, m.extent.min_y, m.extent.max_x, m.extent.max_y}},
      {"tile_budget", m.tile_budget},
      {"max_zoom", m.max_zoom},
      {"total_points", m.total_points},
      {"tiles_per_zoom", m.tiles_per_zoom},
      {"seed", m.seed},
  };
}

void from_json(const nlohmann::json& j, PyramidManifest& m) {
  const auto e = j.at("extent").get<std::vector<double>>();
  require(e.size() == 4, ErrorCode::kCorruptData, "pyramid extent must have 4 values");
  m.extent = {e[0], e[1], e[2], e[3]};
  m.tile_budget = j.at("tile_budget").get<std::uint32_t>();
  m.max_zoom = j.at("max_zoom").get<std::uint8_t>();
  m.total_points = j.at("total_points").get<std::uint64_t>();
  m.tiles_per_zoom = j.at("tiles_per_zoom").get<std::vector<std::uint64_t>>();
  m.seed = j.value("seed", std::uint64_t{0});
}

const Tile* TilePyramid::find(const TileKey& key) const noexcept {
  auto it = std::lower_bound(tiles.begin(), tiles.end(), key,
                             [](const Tile& t, const TileKey& k) { return t.key < k; });
  return it != tiles.end() && it->key == key ? &*it : nullptr;
}

Extent compute_extent(std::span<const float> coords) {
  require(coords.size() >= 2 && coords.size() % 2 == 0, ErrorCode::kInvalidArgument,
          "cannot compute the extent of an empty projection");
  Extent e{coords[0], coords[1], coords[0], coords[1]};
  for (std::size_t i = 0; i < coords.size(); i += 2) {
    e.min_x = std::min<double>(e.min_x, coords[i]);
    e.max_x = std::max<double>(e.max_x, coords[i]);
    e.min_y = std::min<double>(e.min_y, coords[i + 1]);
    e.max_y = std::max<double>(e.max_y, coords[i + 1]);
  }
  auto pad = [](double& lo, double& hi) {
    const double w = hi - lo;
    if (w > 0.0) {
      lo -= 0.01 * w;
      hi += 0.01 * w;
    } else {
      lo -= 0.5;
      hi += 0.5;
    }
  };
  pad(e.min_x, e.max_x);
  pad(e.min_y, e.max_y);
  return e;
}

float rank_of(std::uint64_t seed, PointId id) noexcept {
  const std::uint64_t h = mix64(id ^ mix64(seed));
  return static_cast<float>(std::ldexp(static_cast<double>(h >> 40), -24));
}

std::vector<float> assign_ranks(std::span<const PointId> ids, std::uint64_t seed) {
  std::vector<float> ranks(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ranks[i] = rank_of(seed, ids[i]);
  return ranks;
}

TileKey cell_of(const Extent& extent, double x, double y, std::uint8_t z) noexcept {
  return {z, cell_index(normalize_x(extent, x), z), cell_index(normalize_y(extent, y), z)};
}

TilePyramid build_pyramid(const tsne::Projection2D& projection,
                          const zeroshot::ClassAssignment& assignment, std::uint32_t tile_budget,
                          std::uint64_t seed) {
  require(tile_budget >= 1, ErrorCode::kInvalidArgument, "tile_budget must be >= 1");
  require(projection.coords.size() == 2 * projection.size(), ErrorCode::kInvalidArgument,
          "projection coords must be N x 2");
  require(assignment.ids == projection.ids, ErrorCode::kInvalidArgument,
          "id mismatch between projection and class assignment");
  const std::size_t n = projection.size();

  TilePyramid pyramid;
  auto& manifest = pyramid.manifest;
  manifest.tile_budget = tile_budget;
  manifest.total_points = n;
  manifest.seed = seed;
  if (n == 0) {
    manifest.extent = {-0.5, -0.5, 0.5, 0.5};
    manifest.tiles_per_zoom = {0};
    return pyramid;
  }
  manifest.extent = compute_extent(projection.coords);

  const auto ranks = assign_ranks(projection.ids, seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ranks[a] != ranks[b] ? ranks[a] < ranks[b] : projection.ids[a] < projection.ids[b];
  });

  std::unordered_map<std::uint64_t, std::size_t> slot;
  std::vector<Tile> tiles;
  for (std::size_t i : order) {
    const double u = normalize_x(manifest.extent, projection.coords[2 * i]);
    const double v = normalize_y(manifest.extent, projection.coords[2 * i + 1]);
    for (std::uint8_t z = 0;; ++z) {
      const TileKey key{z, cell_index(u, z), cell_index(v, z)};
      auto [it, inserted] = slot.try_emplace(key.packed(), tiles.size());
      if (inserted) {
        tiles.emplace_back();
        tiles.back().key = key;
      }
      Tile& tile = tiles[it->second];
      if (tile.size() < tile_budget || z == kMaxZoomCap) {
        tile.ids.push_back(projection.ids[i]);
        tile.xs.push_back(projection.coords[2 * i]);
        tile.ys.push_back(projection.coords[2 * i + 1]);
        tile.classes.push_back(assignment.class_index[i]);
        tile.ranks.push_back(ranks[i]);
        manifest.max_zoom = std::max(manifest.max_zoom, z);
        break;
      }
    }
  }

  std::sort(tiles.begin(), tiles.end(), [](const Tile& a, const Tile& b) { return a.key < b.key; });
  manifest.tiles_per_zoom.assign(std::size_t{manifest.max_zoom} + 1, 0);
  for (const auto& t : tiles) ++manifest.tiles_per_zoom[t.key.z];
  pyramid.tiles = std::move(tiles);
  return pyramid;
}

TilePyramid with_classes(const TilePyramid& pyramid, const zeroshot::ClassAssignment& assignment) {
  require(std::is_sorted(assignment.ids.begin(), assignment.ids.end()), ErrorCode::kInvalidArgument,
          "assignment ids must be ascending");
  TilePyramid out = pyramid;
  for (auto& tile : out.tiles) {
    for (std::size_t k = 0; k < tile.size(); ++k) {
      auto it = std::lower_bound(assignment.ids.begin(), assignment.ids.end(), tile.ids[k]);
      require(it != assignment.ids.end() && *it == tile.ids[k], ErrorCode::kInvalidArgument,
              "pyramid id " + std::to_string(tile.ids[k]) + " missing from class assignment");
      tile.classes[k] = assignment.class_index[static_cast<std::size_t>(it - assignment.ids.begin())];
    }
  }
  return out;
}

std::vector<TileKey> tiles_for_viewport(const Viewport& vp, std::uint8_t z) {
  const double u0 = std::max(0.0, std::min(vp.u0, vp.u1));
  const double u1 = std::min(1.0, std::max(vp.u0, vp.u1));
  const double v0 = std::max(0.0, std::min(vp.v0, vp.v1));
  const double v1 = std::min(1.0, std::max(vp.v0, vp.v1));
  std::vector<TileKey> keys;
  if (u0 >= u1 || v0 >= v1) return keys;
  for (std::uint8_t level = 0; level <= z; ++level) {
    const double cells = std::ldexp(1.0, level);
    // Cell c spans [c / cells, (c + 1) / cells); it overlaps when c/cells < u1
    // and (c+1)/cells > u0.
    auto first = [&](double lo) {
      return static_cast<std::uint32_t>(std::max(0.0, std::floor(lo * cells)));
    };
    auto last = [&](double hi) {
      return static_cast<std::uint32_t>(std::min(cells - 1.0, std::ceil(hi * cells) - 1.0));
    };
    for (std::uint32_t y = first(v0); y <= last(v1); ++y) {
      for (std::uint32_t x = first(u0); x <= last(u1); ++x) keys.push_back({level, x, y});
    }
  }
  return keys;
}

std::string serialize_tile(const Tile& t) {
  const std::size_t n = t.size();
  require(t.xs.size() == n && t.ys.size() == n && t.classes.size() == n && t.ranks.size() == n,
          ErrorCode::kInvalidArgument, "tile columns must have equal length");
  io::Writer out;
  out.put_bytes(kTileMagic);
  out.put<std::uint8_t>(kTileVersion);
  out.put<std::uint8_t>(t.key.z);
  out.put<std::uint32_t>(t.key.x);
  out.put<std::uint32_t>(t.key.y);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(n));
  out.put_array(std::span(t.ids));
  out.put_array(std::span(t.xs));
  out.put_array(std::span(t.ys));
  out.put_array(std::span(t.classes));
  out.put_array(std::span(t.ranks));
  return std::move(out).bytes();
}

Tile deserialize_tile(std::string_view bytes) {
  io::Reader in(bytes);
  in.expect_magic(kTileMagic);
  const auto version = in.get<std::uint8_t>();
  require(version == kTileVersion, ErrorCode::kCorruptData,
          "unsupported tile version " + std::to_string(version));
  Tile t;
  t.key.z = in.get<std::uint8_t>();
  t.key.x = in.get<std::uint32_t>();
  t.key.y = in.get<std::uint32_t>();
  const auto n = in.get<std::uint32_t>();
  require(in.remaining() >= std::size_t{n} * kTilePointBytes, ErrorCode::kCorruptData,
          "truncated payload");
  t.ids.resize(n);
  t.xs.resize(n);
  t.ys.resize(n);
  t.classes.resize(n);
  t.ranks.resize(n);
  in.get_array(std::span(t.ids));
  in.get_array(std::span(t.xs));
  in.get_array(std::span(t.ys));
  in.get_array(std::span(t.classes));
  in.get_array(std::span(t.ranks));
  require(in.remaining() == 0, ErrorCode::kCorruptData, "trailing bytes after tile");
  return t;
}

void save_pyramid(const std::filesystem::path& dir, const TilePyramid& pyramid) {
  std::filesystem::remove_all(dir / "tiles");
  for (const auto& tile : pyramid.tiles) {
    const auto path = dir / "tiles" / std::to_string(tile.key.z) / std::to_string(tile.key.x) /
                      (std::to_string(tile.key.y) + ".aatl");
    io::write_file(path, serialize_tile(tile));
  }
  io::write_file(dir / "manifest.json", nlohmann::json(pyramid.manifest).dump(2) + "\n");
}

TilePyramid load_pyramid(const std::filesystem::path& dir) {
  TilePyramid pyramid;
  try {
    pyramid.manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json")).get<PyramidManifest>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptData, std::string("malformed pyramid manifest: ") + e.what());
  }
  const auto tiles_dir = dir / "tiles";
  if (std::filesystem::exists(tiles_dir)) {
    for (const auto& entry : std::filesystem::recursive_directory_iterator(tiles_dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".aatl") continue;
      pyramid.tiles.push_back(deserialize_tile(io::read_file(entry.path())));
    }
  }
  std::sort(pyramid.tiles.begin(), pyramid.tiles.end(),
            [](const Tile& a, const Tile& b) { return a.key < b.key; });
  std::uint64_t total = 0;
  for (const auto& t : pyramid.tiles) total += t.size();
  require(total == pyramid.manifest.total_points, ErrorCode::kCorruptData,
          "pyramid tiles hold " + std::to_string(total) + " points, manifest declares " +
              std::to_string(pyramid.manifest.total_points));
  return pyramid;
}

}  // namespace atlas::tiles
