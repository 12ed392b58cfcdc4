#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "atlas/embedding_store.hpp"
#include "atlas/error.hpp"

namespace atlas::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "atlas-test-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Runs fn and returns the AtlasError it throws; fails the test if nothing is thrown.
inline AtlasError expect_atlas_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const AtlasError& e) {
    return e;
  }
  ADD_FAILURE() << "expected an AtlasError";
  return AtlasError(ErrorCode::kInvalidArgument, "<none thrown>");
}

inline bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

// Fresh unit queries drawn like synth_dataset points: normalize(centroid + N(0, spread^2)).
inline std::vector<std::vector<float>> held_out_queries(const EmbeddingMatrix& centroids, std::size_t count,
                                                        double spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, centroids.size() - 1);
  std::normal_distribution<double> noise(0.0, spread);
  std::vector<std::vector<float>> out;
  for (std::size_t q = 0; q < count; ++q) {
    const auto c = centroids.row(pick(rng));
    std::vector<double> v(c.begin(), c.end());
    double norm = 0.0;
    for (auto& x : v) {
      x += noise(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    std::vector<float> f(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i] / norm);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace atlas::testing
