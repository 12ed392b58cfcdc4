#include "atlas/simd/kernels.hpp"

namespace atlas::simd {
namespace {

double dot_scalar(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double squared_distance_scalar(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

void dot_rows_scalar(const float* query, const float* rows, std::size_t count, std::size_t dim,
                     double* out) {
  for (std::size_t r = 0; r < count; ++r) out[r] = dot_scalar(query, rows + r * dim, dim);
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::kScalar, dot_scalar, squared_distance_scalar,
                                 dot_rows_scalar};
  return table;
}

}  // namespace atlas::simd
