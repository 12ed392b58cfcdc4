#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atlas/embedding_store.hpp"
#include "atlas/tsne.hpp"

namespace atlas::zeroshot {

inline constexpr std::uint16_t kUnassigned = 0xFFFF;
inline constexpr std::size_t kMaxClasses = 65534;
inline constexpr double kDefaultTemperature = 0.07;
inline constexpr std::size_t kExactMedoidLimit = 2000;

struct ClassSet {
  std::vector<std::string> names;
  EmbeddingMatrix embeddings;  // one unit row per class, ids 0..C-1

  std::size_t size() const noexcept { return names.size(); }
};

// Validates names (non-empty, unique, 1..65534 of them) and normalizes the
// class vectors (row-major, names.size() x dim).
ClassSet make_class_set(std::vector<std::string> names, std::vector<float> vectors, std::size_t dim);

struct ClassAssignment {
  std::vector<PointId> ids;
  std::vector<std::uint16_t> class_index;  // kUnassigned when no class set applies
  std::vector<float> confidence;
  std::uint64_t class_set_version = 0;

  std::size_t size() const noexcept { return ids.size(); }
};

ClassAssignment unassigned(std::span<const PointId> ids, std::uint64_t version = 0);

// argmax cosine per point (lowest class index on ties) with the softmax
// probability of the winner as confidence. The result carries
// previous_version + 1.
ClassAssignment classify(const EmbeddingMatrix& m, const ClassSet& classes,
                         double temperature = kDefaultTemperature,
                         std::uint64_t previous_version = 0);

// softmax(s / temperature), max-subtracted.
std::vector<double> confidence_softmax(std::span<const double> similarities, double temperature);

struct LabelPlacement {
  std::uint16_t class_index = 0;
  std::string name;
  float x = 0.0f;
  float y = 0.0f;
  std::size_t member_count = 0;
};

// Index into `members` of the point with the least summed Euclidean distance to
// the other members; ties go to the earliest member.
std::size_t medoid(std::span<const float> coords, std::span<const std::size_t> members);

// One label per non-empty class, anchored at the class medoid in 2D. Classes
// above 2000 members use a seeded 2000-point sample.
std::vector<LabelPlacement> place_labels(const tsne::Projection2D& projection,
                                         const ClassAssignment& assignment, const ClassSet& classes,
                                         std::uint64_t seed = 0);

}  // namespace atlas::zeroshot
