#pragma once

// Cumulative-detail quadtree tiling of the 2D projection. Points are visited in
// rank order and each lands in the shallowest tile of its cell that still has
// room, so a viewport's data is the union of intersecting tiles at zooms <= z.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "atlas/embedding_store.hpp"
#include "atlas/tsne.hpp"
#include "atlas/zeroshot.hpp"

namespace atlas::tiles {

inline constexpr std::uint32_t kDefaultTileBudget = 20000;
inline constexpr std::uint8_t kMaxZoomCap = 24;
inline constexpr std::size_t kTileHeaderBytes = 18;
inline constexpr std::size_t kTilePointBytes = 22;  // u64 id + 2 x f32 + u16 class + f32 rank

struct Extent {
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;

  double width() const noexcept { return max_x - min_x; }
  double height() const noexcept { return max_y - min_y; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

struct TileKey {
  std::uint8_t z = 0;
  std::uint32_t x = 0;
  std::uint32_t y = 0;

  std::uint64_t packed() const noexcept {
    return (std::uint64_t{z} << 56) | (std::uint64_t{x} << 28) | std::uint64_t{y};
  }
  friend auto operator<=>(const TileKey&, const TileKey&) = default;
};

// Columnar point storage, in placement (rank) order.
struct Tile {
  TileKey key;
  std::vector<PointId> ids;
  std::vector<float> xs;
  std::vector<float> ys;
  std::vector<std::uint16_t> classes;
  std::vector<float> ranks;

  std::size_t size() const noexcept { return ids.size(); }
  friend bool operator==(const Tile&, const Tile&) = default;
};

struct PyramidManifest {
  Extent extent;
  std::uint32_t tile_budget = kDefaultTileBudget;
  std::uint8_t max_zoom = 0;
  std::uint64_t total_points = 0;
  std::vector<std::uint64_t> tiles_per_zoom;
  std::uint64_t seed = 0;

  friend bool operator==(const PyramidManifest&, const PyramidManifest&) = default;
};

void to_json(nlohmann::json& j, const PyramidManifest& m);
void from_json(const nlohmann::json& j, PyramidManifest& m);

struct TilePyramid {
  PyramidManifest manifest;
  std::vector<Tile> tiles;  // sorted by key

  const Tile* find(const TileKey& key) const noexcept;
  friend bool operator==(const TilePyramid&, const TilePyramid&) = default;
};

// Tight bounding box grown by 1% per side; a zero-width dimension is padded to
// unit width centered on the data.
Extent compute_extent(std::span<const float> coords);
inline Extent compute_extent(const tsne::Projection2D& p) { return compute_extent(p.coords); }

// rank = (mix64(id ^ mix64(seed)) >> 40) * 2^-24: a float32-exact value in [0, 1).
float rank_of(std::uint64_t seed, PointId id) noexcept;
std::vector<float> assign_ranks(std::span<const PointId> ids, std::uint64_t seed);

// Half-open cells in extent-normalized space; row 0 is the min_y edge. Points on
// the max edge fall in the last cell.
TileKey cell_of(const Extent& extent, double x, double y, std::uint8_t z) noexcept;

TilePyramid build_pyramid(const tsne::Projection2D& projection,
                          const zeroshot::ClassAssignment& assignment,
                          std::uint32_t tile_budget = kDefaultTileBudget, std::uint64_t seed = 0);

// Same placement with the class column replaced from `assignment`.
TilePyramid with_classes(const TilePyramid& pyramid, const zeroshot::ClassAssignment& assignment);

// Rectangle in extent-normalized coordinates, [0,1] on both axes.
struct Viewport {
  double u0 = 0.0, v0 = 0.0, u1 = 1.0, v1 = 1.0;
};

// Keys at zooms 0..z whose cells overlap the viewport, coarse to fine.
std::vector<TileKey> tiles_for_viewport(const Viewport& viewport, std::uint8_t z);

std::string serialize_tile(const Tile& tile);
Tile deserialize_tile(std::string_view bytes);

// <dir>/manifest.json and <dir>/tiles/<z>/<x>/<y>.aatl
void save_pyramid(const std::filesystem::path& dir, const TilePyramid& pyramid);
TilePyramid load_pyramid(const std::filesystem::path& dir);

}  // namespace atlas::tiles
