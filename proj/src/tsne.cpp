#include "atlas/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "atlas/binary_io.hpp"
#include "atlas/error.hpp"
#include "atlas/parallel.hpp"
#include "atlas/simd/kernels.hpp"

namespace atlas::tsne {
namespace {

constexpr double kEntropyTolerance = 1e-5;
constexpr int kMaxBisection = 200;
constexpr double kQFloor = 1e-12;
constexpr std::size_t kExactKlLimit = 20000;
constexpr int kMaxTreeDepth = 48;
constexpr std::string_view kProjectionMagic = "AAPJ";
constexpr std::uint32_t kProjectionVersion = 1;

void check_coords(std::span<const double> y) {
  require(y.size() % 2 == 0, ErrorCode::kInvalidArgument, "coordinates must be N x 2");
  for (std::size_t i = 0; i < y.size(); ++i) {
    require(std::isfinite(y[i]), ErrorCode::kInvalidArgument,
            "non-finite coordinate for point " + std::to_string(i / 2));
  }
}

void check_sizes(std::span<const double> y, const SparseAffinities& p) {
  check_coords(y);
  require(p.size() == y.size() / 2, ErrorCode::kDimensionMismatch,
          "affinity matrix size does not match coordinate count");
}

inline int sign(double v) { return (v > 0.0) - (v < 0.0); }

inline double kernel(double dx, double dy) { return 1.0 / (1.0 + dx * dx + dy * dy); }

// Attractive part: p_scale * sum_j p_ij w_ij (y_i - y_j).
void attraction(std::span<const double> y, const SparseAffinities& p, double p_scale, std::size_t i,
                double& ax, double& ay) {
  ax = 0.0;
  ay = 0.0;
  const auto cols = p.cols(i);
  const auto vals = p.values(i);
  for (std::size_t e = 0; e < cols.size(); ++e) {
    const std::size_t j = cols[e];
    const double dx = y[2 * i] - y[2 * j];
    const double dy = y[2 * i + 1] - y[2 * j + 1];
    const double w = p_scale * vals[e] * kernel(dx, dy);
    ax += w * dx;
    ay += w * dy;
  }
}

// Per-point (fx, fy, z); Z is reduced serially so results do not depend on the
// thread count.
struct RepulsionField {
  std::vector<double> force;  // interleaved
  double z = 0.0;
};

RepulsionField exact_repulsion(std::span<const double> y) {
  const std::size_t n = y.size() / 2;
  RepulsionField out;
  out.force.assign(2 * n, 0.0);
  std::vector<double> z(n, 0.0);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double fx = 0.0, fy = 0.0, zi = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dx = y[2 * i] - y[2 * j];
        const double dy = y[2 * i + 1] - y[2 * j + 1];
        const double w = kernel(dx, dy);
        zi += w;
        fx += w * w * dx;
        fy += w * w * dy;
      }
      out.force[2 * i] = fx;
      out.force[2 * i + 1] = fy;
      z[i] = zi;
    }
  });
  for (double zi : z) out.z += zi;
  return out;
}

RepulsionField bh_repulsion(std::span<const double> y, double theta) {
  const std::size_t n = y.size() / 2;
  const BhQuadtree tree(y);
  RepulsionField out;
  out.force.assign(2 * n, 0.0);
  std::vector<double> z(n, 0.0);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = tree.repulsion(i, theta);
      out.force[2 * i] = r.fx;
      out.force[2 * i + 1] = r.fy;
      z[i] = r.z;
    }
  });
  for (double zi : z) out.z += zi;
  return out;
}

Coords assemble(std::span<const double> y, const SparseAffinities& p, double p_scale,
                const RepulsionField& rep) {
  const std::size_t n = y.size() / 2;
  Coords grad(2 * n, 0.0);
  const double inv_z = rep.z > 0.0 ? 1.0 / rep.z : 0.0;
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double ax, ay;
      attraction(y, p, p_scale, i, ax, ay);
      grad[2 * i] = 4.0 * (ax - rep.force[2 * i] * inv_z);
      grad[2 * i + 1] = 4.0 * (ay - rep.force[2 * i + 1] * inv_z);
    }
  });
  return grad;
}

double kl_with_z(const SparseAffinities& p, std::span<const double> y, double z) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto cols = p.cols(i);
    const auto vals = p.values(i);
    for (std::size_t e = 0; e < cols.size(); ++e) {
      const double pij = vals[e];
      if (pij <= 0.0) continue;
      const std::size_t j = cols[e];
      const double q =
          std::max(kernel(y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]) / z, kQFloor);
      kl += pij * std::log(pij / q);
    }
  }
  return std::max(kl, 0.0);
}

}  // namespace

void validate(const TsneConfig& c, std::size_t n) {
  auto check = [](bool ok, const char* what) { require(ok, ErrorCode::kInvalidArgument, what); };
  check(std::isfinite(c.perplexity) && c.perplexity > 1.0, "perplexity must be > 1");
  check(c.theta >= 0.0 && c.theta <= 1.0, "theta must be in [0, 1]");
  check(c.iterations >= 1, "iterations must be >= 1");
  check(std::isfinite(c.learning_rate) && c.learning_rate > 0.0, "learning_rate must be > 0");
  check(c.early_exaggeration_factor >= 1.0, "early_exaggeration_factor must be >= 1");
  check(c.early_exaggeration_iters <= c.iterations,
        "early_exaggeration_iters must not exceed iterations");
  check(c.momentum_initial >= 0.0 && c.momentum_initial < 1.0, "momentum_initial must be in [0,1)");
  check(c.momentum_final >= 0.0 && c.momentum_final < 1.0, "momentum_final must be in [0,1)");
  check(c.knn_multiplier >= 3, "knn_multiplier must be >= 3");
  if (n > 0) {
    check(n >= kMinPoints, "t-SNE needs at least 8 points");
    check(c.perplexity * static_cast<double>(c.knn_multiplier) < static_cast<double>(n),
          "perplexity x knn_multiplier must be below the point count");
  }
}

CalibratedRow calibrate_row(std::span<const double> d2, double perplexity) {
  require(d2.size() >= 2, ErrorCode::kInvalidArgument, "calibration needs at least 2 neighbors");
  require(perplexity > 0.0 && perplexity <= static_cast<double>(d2.size()),
          ErrorCode::kInvalidArgument, "perplexity must not exceed the neighbor count");
  for (double d : d2) {
    require(std::isfinite(d) && d >= 0.0, ErrorCode::kInvalidArgument,
            "non-finite neighbor distance");
  }
  const double d_min = *std::min_element(d2.begin(), d2.end());
  const double target = std::log2(perplexity);

  CalibratedRow row;
  row.p.resize(d2.size());
  double beta = 1.0;
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (int step = 0; step < kMaxBisection; ++step) {
    // Shifting by d_min leaves the normalized row unchanged and keeps exp() in range.
    double sum = 0.0;
    double weighted = 0.0;
    for (std::size_t j = 0; j < d2.size(); ++j) {
      const double shifted = d2[j] - d_min;
      row.p[j] = std::exp(-beta * shifted);
      sum += row.p[j];
      weighted += shifted * row.p[j];
    }
    const double entropy_nats = beta * weighted / sum + std::log(sum);
    row.entropy_bits = entropy_nats / std::numbers::ln2;
    const double diff = row.entropy_bits - target;
    if (std::abs(diff) <= kEntropyTolerance) break;
    if (diff > 0.0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
    } else {
      hi = beta;
      beta = 0.5 * (beta + lo);
    }
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < d2.size(); ++j) {
    row.p[j] = std::exp(-beta * (d2[j] - d_min));
    sum += row.p[j];
  }
  for (double& v : row.p) v /= sum;
  row.sigma = std::sqrt(1.0 / (2.0 * beta));
  return row;
}

SparseAffinities SparseAffinities::from_entries(std::size_t n, std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  SparseAffinities out;
  out.row_ptr_.assign(n + 1, 0);
  for (std::size_t e = 0; e < entries.size();) {
    const Entry& first = entries[e];
    require(first.row < n && first.col < n, ErrorCode::kInvalidArgument,
            "affinity index out of range");
    require(first.row != first.col, ErrorCode::kInvalidArgument, "affinity diagonal must be zero");
    double v = 0.0;
    std::size_t f = e;
    for (; f < entries.size() && entries[f].row == first.row && entries[f].col == first.col; ++f) {
      v += entries[f].value;
    }
    require(std::isfinite(v) && v >= 0.0, ErrorCode::kInvalidArgument,
            "affinities must be finite and non-negative");
    out.cols_.push_back(first.col);
    out.vals_.push_back(v);
    ++out.row_ptr_[first.row + 1];
    e = f;
  }
  std::partial_sum(out.row_ptr_.begin(), out.row_ptr_.end(), out.row_ptr_.begin());
  for (std::size_t i = 0; i < n; ++i) {
    const auto cols = out.cols(i);
    const auto vals = out.values(i);
    for (std::size_t e = 0; e < cols.size(); ++e) {
      require(std::abs(out.at(cols[e], i) - vals[e]) <= 1e-9, ErrorCode::kInvalidArgument,
              "affinity matrix must be symmetric");
    }
  }
  return out;
}

double SparseAffinities::at(std::size_t i, std::size_t j) const noexcept {
  const auto c = cols(i);
  auto it = std::lower_bound(c.begin(), c.end(), static_cast<std::uint32_t>(j));
  if (it == c.end() || *it != j) return 0.0;
  return values(i)[static_cast<std::size_t>(it - c.begin())];
}

double SparseAffinities::total() const noexcept {
  return std::accumulate(vals_.begin(), vals_.end(), 0.0);
}

SparseAffinities build_affinities(const EmbeddingMatrix& m, const ann::AnnForest& forest,
                                  const TsneConfig& config) {
  const std::size_t n = m.size();
  require(n >= 3, ErrorCode::kInvalidArgument, "insufficient neighbors: need at least 3 points");
  const std::size_t k = std::min(
      n - 1, static_cast<std::size_t>(std::ceil(config.perplexity *
                                                static_cast<double>(config.knn_multiplier))));
  require(k >= 2 && config.perplexity < static_cast<double>(k), ErrorCode::kInvalidArgument,
          "insufficient neighbors: " + std::to_string(k) + " available for perplexity " +
              std::to_string(config.perplexity));

  std::vector<std::uint32_t> neighbor_idx(n * k);
  std::vector<double> conditional(n * k);
  const std::size_t search_k = ann::default_search_k(k + 1, forest.n_trees());
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<double> d2(k);
    for (std::size_t i = begin; i < end; ++i) {
      auto found = ann::query(forest, m, m.row(i), k + 1, search_k);
      auto self = std::find_if(found.begin(), found.end(),
                               [i](const ann::Neighbor& nb) { return nb.index == i; });
      if (self != found.end()) {
        found.erase(self);
      } else {
        found.pop_back();
      }
      require(found.size() == k, ErrorCode::kInvalidArgument, "insufficient neighbors");
      for (std::size_t j = 0; j < k; ++j) {
        neighbor_idx[i * k + j] = static_cast<std::uint32_t>(found[j].index);
        d2[j] = simd::squared_distance(m.row(i), m.row(found[j].index));
      }
      const auto row = calibrate_row(d2, config.perplexity);
      std::copy(row.p.begin(), row.p.end(), conditional.begin() + static_cast<std::ptrdiff_t>(i * k));
    }
  });

  std::vector<SparseAffinities::Entry> entries;
  entries.reserve(2 * n * k);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto col = neighbor_idx[i * k + j];
      const double v = conditional[i * k + j] * scale;
      entries.push_back({static_cast<std::uint32_t>(i), col, v});
      entries.push_back({col, static_cast<std::uint32_t>(i), v});
    }
  }
  double total = 0.0;
  for (const auto& e : entries) total += e.value;
  for (auto& e : entries) e.value /= total;
  return SparseAffinities::from_entries(n, std::move(entries));
}

Coords exact_gradient(std::span<const double> y, const SparseAffinities& p, double p_scale) {
  check_sizes(y, p);
  return assemble(y, p, p_scale, exact_repulsion(y));
}

Coords bh_gradient(std::span<const double> y, const SparseAffinities& p, double theta,
                   double p_scale) {
  check_sizes(y, p);
  require(theta >= 0.0 && theta <= 1.0, ErrorCode::kInvalidArgument, "theta must be in [0, 1]");
  return assemble(y, p, p_scale, bh_repulsion(y, theta));
}

double kl_divergence(const SparseAffinities& p, std::span<const double> y) {
  check_sizes(y, p);
  return kl_with_z(p, y, exact_repulsion(y).z);
}

double kl_divergence_bh(const SparseAffinities& p, std::span<const double> y, double theta) {
  check_sizes(y, p);
  return kl_with_z(p, y, bh_repulsion(y, theta).z);
}

BhQuadtree::BhQuadtree(std::span<const double> y) : y_(y) {
  const std::size_t n = y.size() / 2;
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0u);
  if (n == 0) return;

  double min_x = y[0], max_x = y[0], min_y = y[1], max_y = y[1];
  for (std::size_t i = 1; i < n; ++i) {
    min_x = std::min(min_x, y[2 * i]);
    max_x = std::max(max_x, y[2 * i]);
    min_y = std::min(min_y, y[2 * i + 1]);
    max_y = std::max(max_y, y[2 * i + 1]);
  }
  Cell root;
  root.cx = 0.5 * (min_x + max_x);
  root.cy = 0.5 * (min_y + max_y);
  root.half = 0.5 * std::max(max_x - min_x, max_y - min_y) * (1.0 + 1e-9) + 1e-12;
  cells_.push_back(root);

  struct Pending {
    std::uint32_t cell;
    std::uint32_t first;
    std::uint32_t count;
    int depth;
  };
  std::vector<Pending> stack{{0, 0, static_cast<std::uint32_t>(n), 0}};
  while (!stack.empty()) {
    const Pending job = stack.back();
    stack.pop_back();
    auto* begin = order_.data() + job.first;
    auto* end = begin + job.count;

    double sx = 0.0, sy = 0.0;
    bool coincident = true;
    for (auto* it = begin; it != end; ++it) {
      sx += y[2 * *it];
      sy += y[2 * *it + 1];
      coincident = coincident && y[2 * *it] == y[2 * *begin] && y[2 * *it + 1] == y[2 * *begin + 1];
    }
    {
      Cell& c = cells_[job.cell];
      c.count = job.count;
      c.first = job.first;
      c.com_x = sx / job.count;
      c.com_y = sy / job.count;
      if (job.count <= 1 || coincident || job.depth >= kMaxTreeDepth) continue;
      c.is_leaf = false;
    }

    const Cell parent = cells_[job.cell];
    // Quadrant q: bit 0 set for x >= cx, bit 1 set for y >= cy.
    auto quadrant = [&](std::uint32_t i) {
      return static_cast<int>(y[2 * i] >= parent.cx) | (static_cast<int>(y[2 * i + 1] >= parent.cy) << 1);
    };
    std::array<std::uint32_t, 4> counts{};
    for (auto* it = begin; it != end; ++it) ++counts[quadrant(*it)];
    std::stable_sort(begin, end, [&](std::uint32_t a, std::uint32_t b) { return quadrant(a) < quadrant(b); });

    std::uint32_t offset = job.first;
    for (int q = 0; q < 4; ++q) {
      if (counts[q] == 0) {
        offset += counts[q];
        continue;
      }
      Cell child;
      child.half = 0.5 * parent.half;
      child.cx = parent.cx + ((q & 1) ? child.half : -child.half);
      child.cy = parent.cy + ((q & 2) ? child.half : -child.half);
      const auto idx = static_cast<std::uint32_t>(cells_.size());
      cells_[job.cell].children[q] = idx;
      cells_.push_back(child);
      stack.push_back({idx, offset, counts[q], job.depth + 1});
      offset += counts[q];
    }
  }
}

BhQuadtree::Repulsion BhQuadtree::repulsion(std::size_t i, double theta) const {
  Repulsion r;
  if (cells_.empty()) return r;
  const double xi = y_[2 * i];
  const double yi = y_[2 * i + 1];
  const double theta2 = theta * theta;
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const Cell& c = cells_[stack.back()];
    stack.pop_back();
    if (c.is_leaf) {
      for (std::uint32_t k = c.first; k < c.first + c.count; ++k) {
        const std::uint32_t j = order_[k];
        if (j == i) continue;
        const double dx = xi - y_[2 * j];
        const double dy = yi - y_[2 * j + 1];
        const double w = kernel(dx, dy);
        r.z += w;
        r.fx += w * w * dx;
        r.fy += w * w * dy;
      }
      continue;
    }
    const double dx = xi - c.com_x;
    const double dy = yi - c.com_y;
    const double d2 = dx * dx + dy * dy;
    const double side = 2.0 * c.half;
    const bool contains_i = std::abs(xi - c.cx) <= c.half && std::abs(yi - c.cy) <= c.half;
    if (!contains_i && side * side < theta2 * d2) {
      const double w = 1.0 / (1.0 + d2);
      const double mass = static_cast<double>(c.count);
      r.z += mass * w;
      r.fx += mass * w * w * dx;
      r.fy += mass * w * w * dy;
      continue;
    }
    for (int q = 3; q >= 0; --q) {
      if (c.children[q] != 0) stack.push_back(c.children[q]);
    }
  }
  return r;
}

Projection2D run_tsne(const EmbeddingMatrix& m, const ann::AnnForest& forest,
                      const TsneConfig& config, const ProgressFn& progress) {
  const std::size_t n = m.size();
  validate(config, n);
  const auto p = build_affinities(m, forest, config);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1e-4);
  Coords y(2 * n);
  for (double& v : y) v = gauss(rng);
  Coords velocity(2 * n, 0.0);
  Coords gains(2 * n, 1.0);

  Projection2D out;
  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    const double p_scale = iter < config.early_exaggeration_iters ? config.early_exaggeration_factor : 1.0;
    const double momentum = iter < config.momentum_switch_iter ? config.momentum_initial
                                                                : config.momentum_final;
    const Coords grad = config.theta == 0.0 ? exact_gradient(y, p, p_scale)
                                            : bh_gradient(y, p, config.theta, p_scale);
    for (std::size_t k = 0; k < y.size(); ++k) {
      // Gain grows while the step keeps moving downhill in this coordinate.
      const bool consistent = sign(grad[k]) != sign(velocity[k]);
      gains[k] = consistent ? gains[k] + 0.2 : gains[k] * 0.8;
      gains[k] = std::max(gains[k], 0.01);
      velocity[k] = momentum * velocity[k] - config.learning_rate * gains[k] * grad[k];
      y[k] += velocity[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
    for (double v : y) {
      if (!std::isfinite(v)) {
        fail(ErrorCode::kDiverged, "t-SNE diverged at iteration " + std::to_string(iter + 1));
      }
    }
    if ((iter + 1) % kKlInterval == 0) {
      const double kl = n <= kExactKlLimit ? kl_divergence(p, y)
                                           : kl_divergence_bh(p, y, std::max(config.theta, 0.5));
      out.kl_history.push_back(static_cast<float>(kl));
      if (progress) progress(iter + 1, kl);
    }
  }

  out.ids.assign(m.ids().begin(), m.ids().end());
  out.coords.resize(2 * n);
  for (std::size_t k = 0; k < y.size(); ++k) out.coords[k] = static_cast<float>(y[k]);
  return out;
}

std::string encode_projection(const Projection2D& p) {
  require(p.coords.size() == 2 * p.ids.size(), ErrorCode::kInvalidArgument,
          "projection coords must be N x 2");
  io::Writer out;
  out.put_bytes(kProjectionMagic);
  out.put<std::uint32_t>(kProjectionVersion);
  out.put<std::uint64_t>(p.ids.size());
  out.put_array(std::span(p.ids));
  out.put_array(std::span(p.coords));
  if (!p.kl_history.empty()) {
    out.put<std::uint32_t>(static_cast<std::uint32_t>(p.kl_history.size()));
    out.put_array(std::span(p.kl_history));
  }
  return std::move(out).bytes();
}

Projection2D decode_projection(std::string_view bytes) {
  io::Reader in(bytes);
  in.expect_magic(kProjectionMagic);
  const auto version = in.get<std::uint32_t>();
  require(version == kProjectionVersion, ErrorCode::kCorruptData,
          "unsupported projection version " + std::to_string(version));
  const auto count = in.get<std::uint64_t>();
  require(in.remaining() >= count * 16, ErrorCode::kCorruptData, "truncated payload");
  Projection2D p;
  p.ids.resize(count);
  p.coords.resize(2 * count);
  in.get_array(std::span(p.ids));
  in.get_array(std::span(p.coords));
  if (in.remaining() > 0) {
    const auto kl_count = in.get<std::uint32_t>();
    require(in.remaining() >= std::size_t{kl_count} * 4, ErrorCode::kCorruptData, "truncated payload");
    p.kl_history.resize(kl_count);
    in.get_array(std::span(p.kl_history));
  }
  require(in.remaining() == 0, ErrorCode::kCorruptData, "trailing bytes after projection");
  for (float v : p.coords) {
    require(std::isfinite(v), ErrorCode::kCorruptData, "non-finite projection coordinate");
  }
  return p;
}

void save_projection(const std::filesystem::path& path, const Projection2D& p) {
  io::write_file(path, encode_projection(p));
}

Projection2D load_projection(const std::filesystem::path& path) {
  return decode_projection(io::read_file(path));
}

}  // namespace atlas::tsne
