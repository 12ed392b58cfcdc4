#pragma once

// Barnes-Hut t-SNE to two dimensions: kNN-sparse input affinities calibrated to
// a target perplexity, KL(P||Q) gradient descent with early exaggeration,
// momentum and adaptive gains. exact_gradient is the O(N^2) reference for
// bh_gradient.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atlas/ann_forest.hpp"
#include "atlas/embedding_store.hpp"

namespace atlas::tsne {

struct TsneConfig {
  double perplexity = 30.0;
  double theta = 0.5;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration_factor = 12.0;
  std::size_t early_exaggeration_iters = 250;
  double momentum_initial = 0.5;
  double momentum_final = 0.8;
  std::size_t momentum_switch_iter = 250;
  std::uint64_t seed = 42;
  std::size_t knn_multiplier = 3;
};

inline constexpr std::size_t kMinPoints = 8;
inline constexpr std::size_t kKlInterval = 50;

// Checks field ranges and, for n > 0, the size-dependent constraints.
void validate(const TsneConfig& config, std::size_t n = 0);

struct CalibratedRow {
  std::vector<double> p;  // sums to 1
  double sigma = 0.0;
  double entropy_bits = 0.0;
};

// Bisection on the Gaussian precision until the row entropy (in bits) is within
// 1e-5 of log2(perplexity), or 200 steps.
CalibratedRow calibrate_row(std::span<const double> squared_distances, double perplexity);

// Symmetric joint affinities in CSR form. Rows are sorted by column.
class SparseAffinities {
 public:
  struct Entry {
    std::uint32_t row;
    std::uint32_t col;
    double value;
  };

  SparseAffinities() = default;
  // Sums duplicate (row, col) entries. Validates symmetry, non-negativity and a
  // zero diagonal; does not renormalize.
  static SparseAffinities from_entries(std::size_t n, std::vector<Entry> entries);

  std::size_t size() const noexcept { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::size_t nnz() const noexcept { return cols_.size(); }
  std::span<const std::uint32_t> cols(std::size_t i) const noexcept {
    return std::span(cols_).subspan(row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]);
  }
  std::span<const double> values(std::size_t i) const noexcept {
    return std::span(vals_).subspan(row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]);
  }
  double at(std::size_t i, std::size_t j) const noexcept;
  double total() const noexcept;

 private:
  std::vector<std::size_t> row_ptr_;
  std::vector<std::uint32_t> cols_;
  std::vector<double> vals_;
};

// Conditional rows from kNN (self excluded), symmetrized as
// (p_j|i + p_i|j) / 2N and renormalized to total 1.
SparseAffinities build_affinities(const EmbeddingMatrix& m, const ann::AnnForest& forest,
                                  const TsneConfig& config);

// Coordinates are interleaved (x0, y0, x1, y1, ...).
using Coords = std::vector<double>;

// 4 * sum_j (s * p_ij - q_ij) w_ij (y_i - y_j) with w = 1/(1+|y_i-y_j|^2); s is
// the exaggeration applied to P (1 outside early exaggeration).
Coords exact_gradient(std::span<const double> y, const SparseAffinities& p, double p_scale = 1.0);
Coords bh_gradient(std::span<const double> y, const SparseAffinities& p, double theta,
                   double p_scale = 1.0);

// Exact KL(P||Q), q_ij = w_ij / sum_{k!=l} w_kl floored at 1e-12.
double kl_divergence(const SparseAffinities& p, std::span<const double> y);
// Same objective with Z taken from the Barnes-Hut estimate; used for the
// optimization telemetry on large inputs.
double kl_divergence_bh(const SparseAffinities& p, std::span<const double> y, double theta);

class BhQuadtree {
 public:
  struct Cell {
    double cx = 0.0, cy = 0.0;  // geometric center
    double half = 0.0;          // half side length
    double com_x = 0.0, com_y = 0.0;
    std::uint32_t count = 0;
    std::array<std::uint32_t, 4> children{};  // 0 = absent (the root is never a child)
    bool is_leaf = true;
    std::uint32_t first = 0;  // leaf points: order()[first, first + count)
  };

  explicit BhQuadtree(std::span<const double> y);

  const std::vector<Cell>& cells() const noexcept { return cells_; }
  std::span<const std::uint32_t> order() const noexcept { return order_; }

  struct Repulsion {
    double fx = 0.0, fy = 0.0;  // sum_j w_ij^2 (y_i - y_j)
    double z = 0.0;             // sum_j w_ij
  };
  Repulsion repulsion(std::size_t i, double theta) const;

 private:
  std::span<const double> y_;
  std::vector<Cell> cells_;
  std::vector<std::uint32_t> order_;
};

struct Projection2D {
  std::vector<PointId> ids;
  std::vector<float> coords;      // interleaved x, y
  std::vector<float> kl_history;  // entry j recorded after iteration 50 * (j + 1)

  std::size_t size() const noexcept { return ids.size(); }
  friend bool operator==(const Projection2D&, const Projection2D&) = default;
};

using ProgressFn = std::function<void(std::size_t iteration, double kl)>;

Projection2D run_tsne(const EmbeddingMatrix& m, const ann::AnnForest& forest,
                      const TsneConfig& config, const ProgressFn& progress = {});

// AAPJ: "AAPJ", u32 version=1, u64 count, count u64 ids, count*2 float32,
// optional trailing u32 count + float32 KL history.
std::string encode_projection(const Projection2D& p);
Projection2D decode_projection(std::string_view bytes);
void save_projection(const std::filesystem::path& path, const Projection2D& p);
Projection2D load_projection(const std::filesystem::path& path);

}  // namespace atlas::tsne
