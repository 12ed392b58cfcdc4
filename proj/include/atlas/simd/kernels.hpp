#pragma once

// Float32 vector kernels with 64-bit accumulation. Each kernel has a portable
// scalar reference and, where the target supports it, an AVX2+FMA (x86-64) or
// NEON (aarch64) variant. The active variant is chosen once at first use from
// CPU feature detection; ATLAS_SIMD=scalar forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace atlas::simd {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view to_string(Isa isa);

struct KernelTable {
  Isa isa;
  double (*dot)(const float* a, const float* b, std::size_t n);
  double (*squared_distance)(const float* a, const float* b, std::size_t n);
  // out[r] = dot(query, rows + r * dim) for r in [0, count)
  void (*dot_rows)(const float* query, const float* rows, std::size_t count, std::size_t dim,
                   double* out);
};

const KernelTable& scalar_kernels();
// nullptr when the variant is not compiled in or the CPU lacks the feature.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Best table supported by this CPU, honoring ATLAS_SIMD.
const KernelTable& active();
// Overrides the active table (tests and benchmarks).
void set_active(Isa isa);

inline double dot(std::span<const float> a, std::span<const float> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  return active().squared_distance(a.data(), b.data(), a.size());
}

inline double squared_norm(std::span<const float> a) { return dot(a, a); }

}  // namespace atlas::simd
