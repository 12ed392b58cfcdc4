#pragma once

// Random-hyperplane forest for approximate cosine k-NN over unit vectors, with
// an exact brute-force scan alongside as the reference answer.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atlas/embedding_store.hpp"

namespace atlas::ann {

struct ForestParams {
  std::uint32_t n_trees = 20;
  std::uint32_t leaf_size = 32;
  std::uint64_t seed = 42;
};

inline constexpr std::size_t kMinDefaultSearchK = 2000;

// max(k * n_trees, 2000)
std::size_t default_search_k(std::size_t k, std::size_t n_trees);

struct Neighbor {
  std::size_t index = 0;   // row in the EmbeddingMatrix
  double similarity = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Similarity descending, row index ascending on ties.
inline bool ranks_before(const Neighbor& a, const Neighbor& b) noexcept {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.index < b.index;
}

struct Node {
  bool is_leaf = true;
  // Split nodes: children are node indices within the same tree; the normal
  // lives at Tree::normals[normal_slot * dim].
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t normal_slot = 0;
  float offset = 0.0f;
  // Leaf nodes: Tree::items[first, first + count).
  std::uint32_t first = 0;
  std::uint32_t count = 0;

  friend bool operator==(const Node&, const Node&) = default;
};

// Nodes are stored in preorder; the root is node 0.
struct Tree {
  std::vector<Node> nodes;
  std::vector<float> normals;
  std::vector<std::uint32_t> items;

  friend bool operator==(const Tree&, const Tree&) = default;
};

class AnnForest {
 public:
  AnnForest() = default;
  AnnForest(std::vector<Tree> trees, std::uint32_t dim, std::uint32_t leaf_size, std::uint64_t seed);

  std::size_t n_trees() const noexcept { return trees_.size(); }
  std::uint32_t leaf_size() const noexcept { return leaf_size_; }
  std::uint32_t dim() const noexcept { return dim_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<Tree>& trees() const noexcept { return trees_; }

  std::span<const float> normal(const Tree& tree, const Node& node) const noexcept {
    return {tree.normals.data() + std::size_t{node.normal_slot} * dim_, dim_};
  }

  // Leaf item sets of one tree, in preorder.
  std::vector<std::vector<std::uint32_t>> leaf_sets(std::size_t tree) const;

  friend bool operator==(const AnnForest&, const AnnForest&) = default;

 private:
  std::vector<Tree> trees_;
  std::uint32_t dim_ = 0;
  std::uint32_t leaf_size_ = 0;
  std::uint64_t seed_ = 0;
};

struct Split {
  std::vector<float> normal;
  float offset = 0.0f;
  std::vector<std::uint32_t> left;
  std::vector<std::uint32_t> right;
  // True when hyperplane attempts left a side empty and items were dealt out
  // at random; the stored hyperplane is then only a traversal hint.
  bool balanced_fallback = false;
};

// Signed distance of v from the hyperplane (normal, offset); left side is < 0.
double margin(std::span<const float> normal, float offset, std::span<const float> v);

// Two-point hyperplane split. Returns nullopt when the items hold fewer than two
// distinct vectors, in which case the caller keeps them in one leaf.
std::optional<Split> split_items(std::span<const std::uint32_t> items, const EmbeddingMatrix& m,
                                 std::mt19937_64& rng);

AnnForest build_forest(const EmbeddingMatrix& m, const ForestParams& params = {});

// Approximate top-k by cosine. search_k == 0 selects default_search_k. k > N
// returns all N rows.
std::vector<Neighbor> query(const AnnForest& forest, const EmbeddingMatrix& m,
                            std::span<const float> q, std::size_t k, std::size_t search_k = 0);

std::vector<Neighbor> exact_knn(const EmbeddingMatrix& m, std::span<const float> q, std::size_t k);

double recall_at_k(std::span<const std::size_t> approx, std::span<const std::size_t> exact);

// AAFO: "AAFO", u32 version=1, u32 dim, u32 n_trees, u32 leaf_size, u64 seed,
// then per tree a preorder node stream (u8 tag 0 = split: dim float32 normal +
// float32 offset; tag 1 = leaf: u32 count + count u32 indices).
std::string encode_forest(const AnnForest& forest);
AnnForest decode_forest(std::string_view bytes);
void save_forest(const std::filesystem::path& path, const AnnForest& forest);
AnnForest load_forest(const std::filesystem::path& path);
// Also checks the forest against the matrix it will serve: dimension and a
// complete leaf partition of {0..N-1} in every tree.
AnnForest load_forest(const std::filesystem::path& path, const EmbeddingMatrix& m);

void validate_against(const AnnForest& forest, const EmbeddingMatrix& m);

}  // namespace atlas::ann
