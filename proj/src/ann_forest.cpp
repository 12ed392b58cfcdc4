#include "atlas/ann_forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <queue>
#include <tuple>

#include "atlas/binary_io.hpp"
#include "atlas/error.hpp"
#include "atlas/hash.hpp"
#include "atlas/parallel.hpp"
#include "atlas/simd/kernels.hpp"

namespace atlas::ann {
namespace {

constexpr std::string_view kForestMagic = "AAFO";
constexpr std::uint32_t kForestVersion = 1;
constexpr int kSplitAttempts = 3;
constexpr int kPairSamples = 8;
constexpr std::uint8_t kTagSplit = 0;
constexpr std::uint8_t kTagLeaf = 1;

bool same_row(const EmbeddingMatrix& m, std::uint32_t a, std::uint32_t b) {
  const auto ra = m.row(a);
  const auto rb = m.row(b);
  return std::memcmp(ra.data(), rb.data(), ra.size_bytes()) == 0;
}

// Picks two items whose vectors differ, or nullopt if every vector is identical.
std::optional<std::pair<std::uint32_t, std::uint32_t>> sample_distinct_pair(
    std::span<const std::uint32_t> items, const EmbeddingMatrix& m, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
  for (int s = 0; s < kPairSamples; ++s) {
    const std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    if (a == b) continue;
    if (!same_row(m, items[a], items[b])) return std::pair{items[a], items[b]};
  }
  const std::uint32_t anchor = items[pick(rng)];
  for (std::uint32_t it : items) {
    if (!same_row(m, anchor, it)) return std::pair{anchor, it};
  }
  return std::nullopt;
}

double score(const EmbeddingMatrix& m, std::span<const float> q, std::size_t i) {
  return std::clamp(simd::active().dot(q.data(), m.row(i).data(), q.size()), -1.0, 1.0);
}

void check_query(const EmbeddingMatrix& m, std::span<const float> q, std::size_t k) {
  require(q.size() == m.dim(), ErrorCode::kDimensionMismatch,
          "dimension mismatch: query dim " + std::to_string(q.size()) + ", index dim " +
              std::to_string(m.dim()));
  require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  const double norm = std::sqrt(simd::squared_norm(q));
  require(std::abs(norm - 1.0) <= 1e-5, ErrorCode::kInvalidArgument, "query must be unit-norm");
}

std::vector<Neighbor> top_k(std::vector<Neighbor> scored, std::size_t k) {
  k = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    ranks_before);
  scored.resize(k);
  return scored;
}

Tree build_tree(const EmbeddingMatrix& m, std::uint32_t leaf_size, std::uint64_t tree_seed) {
  std::mt19937_64 rng(tree_seed);
  Tree tree;
  tree.items.resize(m.size());
  for (std::uint32_t i = 0; i < tree.items.size(); ++i) tree.items[i] = i;

  struct Pending {
    std::uint32_t first;
    std::uint32_t count;
    std::uint32_t parent;
    bool is_right;
  };
  constexpr auto kNoParent = std::numeric_limits<std::uint32_t>::max();
  std::vector<Pending> stack{{0, static_cast<std::uint32_t>(m.size()), kNoParent, false}};

  while (!stack.empty()) {
    const Pending p = stack.back();
    stack.pop_back();
    const auto idx = static_cast<std::uint32_t>(tree.nodes.size());
    if (p.parent != kNoParent) {
      (p.is_right ? tree.nodes[p.parent].right : tree.nodes[p.parent].left) = idx;
    }

    std::optional<Split> split;
    if (p.count > leaf_size) {
      split = split_items(std::span(tree.items).subspan(p.first, p.count), m, rng);
    }
    Node node;
    if (!split) {
      node.is_leaf = true;
      node.first = p.first;
      node.count = p.count;
      tree.nodes.push_back(node);
      continue;
    }

    std::copy(split->left.begin(), split->left.end(), tree.items.begin() + p.first);
    std::copy(split->right.begin(), split->right.end(),
              tree.items.begin() + p.first + split->left.size());
    node.is_leaf = false;
    node.offset = split->offset;
    node.normal_slot = static_cast<std::uint32_t>(tree.normals.size() / m.dim());
    tree.normals.insert(tree.normals.end(), split->normal.begin(), split->normal.end());
    tree.nodes.push_back(node);

    const auto n_left = static_cast<std::uint32_t>(split->left.size());
    stack.push_back({p.first + n_left, p.count - n_left, idx, true});
    stack.push_back({p.first, n_left, idx, false});
  }
  return tree;
}

void encode_tree(io::Writer& out, const AnnForest& forest, const Tree& tree) {
  for (const Node& node : tree.nodes) {
    if (node.is_leaf) {
      out.put<std::uint8_t>(kTagLeaf);
      out.put<std::uint32_t>(node.count);
      out.put_array(std::span(tree.items).subspan(node.first, node.count));
    } else {
      out.put<std::uint8_t>(kTagSplit);
      out.put_array(forest.normal(tree, node));
      out.put<float>(node.offset);
    }
  }
}

Tree decode_tree(io::Reader& in, std::uint32_t dim) {
  Tree tree;
  // Stack of split nodes still waiting for their right child.
  std::vector<std::uint32_t> open;
  bool done = false;
  while (!done) {
    const auto idx = static_cast<std::uint32_t>(tree.nodes.size());
    if (!tree.nodes.empty()) {
      Node& prev = tree.nodes.back();
      if (!prev.is_leaf) {
        prev.left = idx;
      } else {
        require(!open.empty(), ErrorCode::kCorruptData, "malformed forest node stream");
        tree.nodes[open.back()].right = idx;
        open.pop_back();
      }
    }
    const auto tag = in.get<std::uint8_t>();
    Node node;
    if (tag == kTagSplit) {
      node.is_leaf = false;
      node.normal_slot = static_cast<std::uint32_t>(tree.normals.size() / dim);
      const std::size_t base = tree.normals.size();
      tree.normals.resize(base + dim);
      in.get_array(std::span(tree.normals).subspan(base, dim));
      node.offset = in.get<float>();
      open.push_back(idx);
    } else if (tag == kTagLeaf) {
      node.is_leaf = true;
      node.count = in.get<std::uint32_t>();
      require(node.count >= 1, ErrorCode::kCorruptData, "empty forest leaf");
      require(in.remaining() >= std::size_t{node.count} * 4, ErrorCode::kCorruptData,
              "truncated payload");
      node.first = static_cast<std::uint32_t>(tree.items.size());
      tree.items.resize(tree.items.size() + node.count);
      in.get_array(std::span(tree.items).subspan(node.first, node.count));
      done = open.empty();
    } else {
      fail(ErrorCode::kCorruptData, "unknown forest node tag " + std::to_string(tag));
    }
    tree.nodes.push_back(node);
  }
  return tree;
}

}  // namespace

std::size_t default_search_k(std::size_t k, std::size_t n_trees) {
  return std::max(k * n_trees, kMinDefaultSearchK);
}

AnnForest::AnnForest(std::vector<Tree> trees, std::uint32_t dim, std::uint32_t leaf_size,
                     std::uint64_t seed)
    : trees_(std::move(trees)), dim_(dim), leaf_size_(leaf_size), seed_(seed) {}

std::vector<std::vector<std::uint32_t>> AnnForest::leaf_sets(std::size_t tree) const {
  std::vector<std::vector<std::uint32_t>> out;
  const Tree& t = trees_.at(tree);
  for (const Node& node : t.nodes) {
    if (!node.is_leaf) continue;
    out.emplace_back(t.items.begin() + node.first, t.items.begin() + node.first + node.count);
  }
  return out;
}

double margin(std::span<const float> normal, float offset, std::span<const float> v) {
  return simd::active().dot(normal.data(), v.data(), normal.size()) - static_cast<double>(offset);
}

std::optional<Split> split_items(std::span<const std::uint32_t> items, const EmbeddingMatrix& m,
                                 std::mt19937_64& rng) {
  require(items.size() >= 2, ErrorCode::kInvalidArgument, "split needs at least two items");
  const std::size_t d = m.dim();
  Split split;
  split.normal.resize(d);
  std::vector<double> diff(d);

  for (int attempt = 0; attempt < kSplitAttempts; ++attempt) {
    const auto pair = sample_distinct_pair(items, m, rng);
    if (!pair) return std::nullopt;
    const auto p = m.row(pair->first);
    const auto q = m.row(pair->second);
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      diff[j] = static_cast<double>(p[j]) - static_cast<double>(q[j]);
      sq += diff[j] * diff[j];
    }
    const double norm = std::sqrt(sq);
    double offset = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      split.normal[j] = static_cast<float>(diff[j] / norm);
      offset += static_cast<double>(split.normal[j]) *
                (0.5 * (static_cast<double>(p[j]) + static_cast<double>(q[j])));
    }
    split.offset = static_cast<float>(offset);

    split.left.clear();
    split.right.clear();
    for (std::uint32_t it : items) {
      (margin(split.normal, split.offset, m.row(it)) < 0.0 ? split.left : split.right).push_back(it);
    }
    if (!split.left.empty() && !split.right.empty()) return split;
  }

  std::vector<std::uint32_t> shuffled(items.begin(), items.end());
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const std::size_t half = shuffled.size() / 2;
  split.left.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(half));
  split.right.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(half), shuffled.end());
  split.balanced_fallback = true;
  return split;
}

AnnForest build_forest(const EmbeddingMatrix& m, const ForestParams& params) {
  require(!m.empty(), ErrorCode::kInvalidArgument, "cannot index an empty matrix");
  require(m.normalized(), ErrorCode::kInvalidArgument, "forest requires a normalized matrix");
  require(params.n_trees >= 1 && params.leaf_size >= 1, ErrorCode::kInvalidArgument,
          "n_trees and leaf_size must be >= 1");
  require(m.size() < std::numeric_limits<std::uint32_t>::max(), ErrorCode::kInvalidArgument,
          "too many points for a forest");

  std::vector<Tree> trees(params.n_trees);
  parallel_for(params.n_trees, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      trees[t] = build_tree(m, params.leaf_size, derive_seed(params.seed, t));
    }
  });
  return AnnForest(std::move(trees), static_cast<std::uint32_t>(m.dim()), params.leaf_size,
                   params.seed);
}

std::vector<Neighbor> query(const AnnForest& forest, const EmbeddingMatrix& m,
                            std::span<const float> q, std::size_t k, std::size_t search_k) {
  check_query(m, q, k);
  require(forest.dim() == m.dim(), ErrorCode::kDimensionMismatch, "dimension mismatch");
  if (search_k == 0) search_k = default_search_k(k, forest.n_trees());
  require(search_k >= k, ErrorCode::kInvalidArgument, "search_k must be >= k");

  using Entry = std::tuple<double, std::uint32_t, std::uint32_t>;  // priority, tree, node
  std::priority_queue<Entry> frontier;
  for (std::uint32_t t = 0; t < forest.n_trees(); ++t) {
    frontier.emplace(std::numeric_limits<double>::infinity(), t, 0);
  }

  std::vector<bool> seen(m.size(), false);
  std::vector<std::uint32_t> candidates;
  candidates.reserve(std::min(search_k, m.size()));
  while (!frontier.empty() && candidates.size() < search_k) {
    const auto [priority, t, n] = frontier.top();
    frontier.pop();
    const Tree& tree = forest.trees()[t];
    const Node& node = tree.nodes[n];
    if (node.is_leaf) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const std::uint32_t item = tree.items[i];
        if (!seen[item]) {
          seen[item] = true;
          candidates.push_back(item);
        }
      }
      continue;
    }
    const double mg = margin(forest.normal(tree, node), node.offset, q);
    frontier.emplace(std::min(priority, mg), t, node.right);
    frontier.emplace(std::min(priority, -mg), t, node.left);
  }

  std::vector<Neighbor> scored;
  scored.reserve(candidates.size());
  for (std::uint32_t c : candidates) scored.push_back({c, score(m, q, c)});
  return top_k(std::move(scored), k);
}

std::vector<Neighbor> exact_knn(const EmbeddingMatrix& m, std::span<const float> q, std::size_t k) {
  check_query(m, q, k);
  std::vector<double> sims(m.size());
  simd::active().dot_rows(q.data(), m.values().data(), m.size(), m.dim(), sims.data());
  std::vector<Neighbor> scored(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) scored[i] = {i, std::clamp(sims[i], -1.0, 1.0)};
  return top_k(std::move(scored), k);
}

double recall_at_k(std::span<const std::size_t> approx, std::span<const std::size_t> exact) {
  require(approx.size() == exact.size(), ErrorCode::kInvalidArgument,
          "recall_at_k requires equal-length lists");
  if (exact.empty()) return 1.0;
  std::vector<std::size_t> a(approx.begin(), approx.end());
  std::vector<std::size_t> e(exact.begin(), exact.end());
  std::sort(a.begin(), a.end());
  std::sort(e.begin(), e.end());
  std::vector<std::size_t> common;
  std::set_intersection(a.begin(), a.end(), e.begin(), e.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(exact.size());
}

std::string encode_forest(const AnnForest& forest) {
  io::Writer out;
  out.put_bytes(kForestMagic);
  out.put<std::uint32_t>(kForestVersion);
  out.put<std::uint32_t>(forest.dim());
  out.put<std::uint32_t>(static_cast<std::uint32_t>(forest.n_trees()));
  out.put<std::uint32_t>(forest.leaf_size());
  out.put<std::uint64_t>(forest.seed());
  for (const Tree& tree : forest.trees()) encode_tree(out, forest, tree);
  return std::move(out).bytes();
}

AnnForest decode_forest(std::string_view bytes) {
  io::Reader in(bytes);
  in.expect_magic(kForestMagic);
  const auto version = in.get<std::uint32_t>();
  require(version == kForestVersion, ErrorCode::kCorruptData,
          "version mismatch: forest version " + std::to_string(version));
  const auto dim = in.get<std::uint32_t>();
  const auto n_trees = in.get<std::uint32_t>();
  const auto leaf_size = in.get<std::uint32_t>();
  const auto seed = in.get<std::uint64_t>();
  require(dim > 0 && n_trees > 0 && leaf_size > 0, ErrorCode::kCorruptData, "invalid forest header");
  std::vector<Tree> trees;
  trees.reserve(std::min<std::uint32_t>(n_trees, 4096));
  for (std::uint32_t t = 0; t < n_trees; ++t) trees.push_back(decode_tree(in, dim));
  require(in.remaining() == 0, ErrorCode::kCorruptData, "trailing bytes after forest");
  return AnnForest(std::move(trees), dim, leaf_size, seed);
}

void save_forest(const std::filesystem::path& path, const AnnForest& forest) {
  io::write_file(path, encode_forest(forest));
}

AnnForest load_forest(const std::filesystem::path& path) {
  return decode_forest(io::read_file(path));
}

AnnForest load_forest(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  auto forest = load_forest(path);
  validate_against(forest, m);
  return forest;
}

void validate_against(const AnnForest& forest, const EmbeddingMatrix& m) {
  require(forest.dim() == m.dim(), ErrorCode::kDimensionMismatch,
          "dimension mismatch: forest dim " + std::to_string(forest.dim()) + ", matrix dim " +
              std::to_string(m.dim()));
  std::vector<std::uint32_t> owner(m.size());
  for (std::uint32_t t = 0; t < forest.n_trees(); ++t) {
    const Tree& tree = forest.trees()[t];
    require(tree.items.size() == m.size(), ErrorCode::kCorruptData,
            "forest tree " + std::to_string(t) + " does not cover the matrix");
    std::fill(owner.begin(), owner.end(), 0);
    for (std::uint32_t item : tree.items) {
      require(item < m.size() && owner[item] == 0, ErrorCode::kCorruptData,
              "forest tree " + std::to_string(t) + " leaves do not partition the matrix");
      owner[item] = 1;
    }
  }
}

}  // namespace atlas::ann
