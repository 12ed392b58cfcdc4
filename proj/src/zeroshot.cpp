#include "atlas/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "atlas/error.hpp"
#include "atlas/parallel.hpp"
#include "atlas/simd/kernels.hpp"

namespace atlas::zeroshot {

ClassSet make_class_set(std::vector<std::string> names, std::vector<float> vectors, std::size_t dim) {
  require(!names.empty(), ErrorCode::kInvalidArgument, "class set must not be empty");
  require(names.size() <= kMaxClasses, ErrorCode::kInvalidArgument,
          "too many classes (max " + std::to_string(kMaxClasses) + ")");
  std::unordered_set<std::string> seen;
  for (const auto& name : names) {
    require(!name.empty(), ErrorCode::kInvalidArgument, "class names must be non-empty");
    require(seen.insert(name).second, ErrorCode::kInvalidArgument, "duplicate class name '" + name + "'");
  }
  std::vector<PointId> ids(names.size());
  for (std::size_t c = 0; c < ids.size(); ++c) ids[c] = c;
  EmbeddingMatrix raw(std::move(ids), std::move(vectors), dim, false);
  return ClassSet{std::move(names), normalize_rows(raw)};
}

ClassAssignment unassigned(std::span<const PointId> ids, std::uint64_t version) {
  ClassAssignment a;
  a.ids.assign(ids.begin(), ids.end());
  a.class_index.assign(ids.size(), kUnassigned);
  a.confidence.assign(ids.size(), 0.0f);
  a.class_set_version = version;
  return a;
}

std::vector<double> confidence_softmax(std::span<const double> s, double temperature) {
  require(temperature > 0.0 && std::isfinite(temperature), ErrorCode::kInvalidArgument,
          "temperature must be > 0");
  require(!s.empty(), ErrorCode::kInvalidArgument, "softmax of an empty vector");
  for (double v : s) require(std::isfinite(v), ErrorCode::kInvalidArgument, "non-finite similarity");
  const double top = *std::max_element(s.begin(), s.end());
  std::vector<double> out(s.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < s.size(); ++c) {
    out[c] = std::exp((s[c] - top) / temperature);
    sum += out[c];
  }
  for (double& v : out) v /= sum;
  return out;
}

ClassAssignment classify(const EmbeddingMatrix& m, const ClassSet& classes, double temperature,
                         std::uint64_t previous_version) {
  require(classes.size() >= 1, ErrorCode::kInvalidArgument, "class set must not be empty");
  require(classes.embeddings.dim() == m.dim(), ErrorCode::kDimensionMismatch,
          "dimension mismatch: classes dim " + std::to_string(classes.embeddings.dim()) +
              ", embeddings dim " + std::to_string(m.dim()));
  require(m.normalized(), ErrorCode::kInvalidArgument, "classification requires normalized embeddings");
  require(temperature > 0.0, ErrorCode::kInvalidArgument, "temperature must be > 0");

  ClassAssignment out;
  out.ids.assign(m.ids().begin(), m.ids().end());
  out.class_index.resize(m.size());
  out.confidence.resize(m.size());
  out.class_set_version = previous_version + 1;

  const std::size_t n_classes = classes.size();
  const auto& kernels = simd::active();
  parallel_for(m.size(), [&](std::size_t begin, std::size_t end) {
    std::vector<double> sims(n_classes);
    for (std::size_t i = begin; i < end; ++i) {
      kernels.dot_rows(m.row(i).data(), classes.embeddings.values().data(), n_classes, m.dim(),
                       sims.data());
      std::size_t best = 0;
      for (std::size_t c = 0; c < n_classes; ++c) {
        sims[c] = std::clamp(sims[c], -1.0, 1.0);
        if (sims[c] > sims[best]) best = c;
      }
      out.class_index[i] = static_cast<std::uint16_t>(best);
      out.confidence[i] = static_cast<float>(confidence_softmax(sims, temperature)[best]);
    }
  });
  return out;
}

std::size_t medoid(std::span<const float> coords, std::span<const std::size_t> members) {
  require(!members.empty(), ErrorCode::kInvalidArgument, "medoid of an empty set");
  std::size_t best = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < members.size(); ++a) {
    const double ax = coords[2 * members[a]];
    const double ay = coords[2 * members[a] + 1];
    double sum = 0.0;
    for (std::size_t b = 0; b < members.size(); ++b) {
      sum += std::hypot(ax - coords[2 * members[b]], ay - coords[2 * members[b] + 1]);
    }
    if (sum < best_sum) {
      best_sum = sum;
      best = a;
    }
  }
  return best;
}

std::vector<LabelPlacement> place_labels(const tsne::Projection2D& projection,
                                         const ClassAssignment& assignment, const ClassSet& classes,
                                         std::uint64_t seed) {
  require(projection.ids == assignment.ids, ErrorCode::kInvalidArgument,
          "id mismatch between projection and class assignment");
  std::vector<std::vector<std::size_t>> members(classes.size());
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const auto c = assignment.class_index[i];
    if (c == kUnassigned) continue;
    require(c < classes.size(), ErrorCode::kInvalidArgument, "class index out of range");
    members[c].push_back(i);
  }

  std::vector<LabelPlacement> out;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    auto& pts = members[c];
    if (pts.empty()) continue;
    const std::size_t count = pts.size();
    if (pts.size() > kExactMedoidLimit) {
      std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (c + 1)));
      std::shuffle(pts.begin(), pts.end(), rng);
      pts.resize(kExactMedoidLimit);
      std::sort(pts.begin(), pts.end());
    }
    const std::size_t at = pts[medoid(projection.coords, pts)];
    out.push_back({static_cast<std::uint16_t>(c), classes.names[c], projection.coords[2 * at],
                   projection.coords[2 * at + 1], count});
  }
  return out;
}

}  // namespace atlas::zeroshot
