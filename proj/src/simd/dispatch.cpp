#include <atomic>
#include <cstdlib>
#include <string>

#include "atlas/error.hpp"
#include "atlas/simd/kernels.hpp"

namespace atlas::simd {
namespace {

const KernelTable* select_default() {
  if (const char* env = std::getenv("ATLAS_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return &scalar_kernels();
  }
  if (const auto* t = avx2_kernels()) return t;
  if (const auto* t = neon_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{select_default()};
  return table;
}

}  // namespace

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
    case Isa::kNeon: return "neon";
  }
  return "unknown";
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void set_active(Isa isa) {
  const KernelTable* table = nullptr;
  switch (isa) {
    case Isa::kScalar: table = &scalar_kernels(); break;
    case Isa::kAvx2: table = avx2_kernels(); break;
    case Isa::kNeon: table = neon_kernels(); break;
  }
  require(table != nullptr, ErrorCode::kInvalidArgument,
          "kernel variant '" + std::string(to_string(isa)) + "' is not available on this CPU");
  slot().store(table, std::memory_order_release);
}

}  // namespace atlas::simd
