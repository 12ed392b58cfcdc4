#include <cmath>
#include <cstring>
#include <numeric>
#include <fstream>
#include <limits>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>

#include "atlas/ann_forest.hpp"
#include "atlas/binary_io.hpp"
#include "atlas/embedding_store.hpp"
#include "test_util.hpp"

using namespace atlas;
using atlas::testing::contains;
using atlas::testing::expect_atlas_error;
using atlas::testing::TempDir;

namespace {

EmbeddingMatrix toy_matrix() {
  return EmbeddingMatrix({1, 2, 3}, {1, 0, 0, 0, 0, 3, 4, 0, 1, 1, 1, 1}, 4);
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j) { io::write_file(p, j.dump()); }

double dense_dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

}  // namespace

TEST(Manifest, MinimalManifestEchoesFields) {
  TempDir dir;
  write_embeddings(dir / "e.aaem", toy_matrix());
  write_json(dir / "manifest.json", {{"name", "toy"}, {"point_count", 3}, {"dim", 4}, {"embeddings_path", "e.aaem"}});
  const auto m = parse_manifest(dir / "manifest.json");
  EXPECT_EQ(m.name, "toy");
  EXPECT_EQ(m.point_count, 3u);
  EXPECT_EQ(m.dim, 4u);
  EXPECT_EQ(m.embeddings_path, dir.path() / "e.aaem");
  EXPECT_FALSE(m.metadata_path.has_value());
  EXPECT_FALSE(m.media_url_template.has_value());
  EXPECT_TRUE(m.default_classes.empty());
}

TEST(Manifest, CountMismatchIsRejected) {
  TempDir dir;
  write_embeddings(dir / "e.aaem", toy_matrix());
  write_json(dir / "manifest.json", {{"name", "toy"}, {"point_count", 4}, {"dim", 4}, {"embeddings_path", "e.aaem"}});
  const auto e = expect_atlas_error([&] { parse_manifest(dir / "manifest.json"); });
  EXPECT_TRUE(contains(e.what(), "count mismatch")) << e.what();
}

TEST(Manifest, DimMismatchIsRejected) {
  TempDir dir;
  write_embeddings(dir / "e.aaem", toy_matrix());
  write_json(dir / "manifest.json", {{"name", "toy"}, {"point_count", 3}, {"dim", 8}, {"embeddings_path", "e.aaem"}});
  const auto e = expect_atlas_error([&] { parse_manifest(dir / "manifest.json"); });
  EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
}

TEST(Manifest, MediaUrlTemplateSubstitutesId) {
  TempDir dir;
  write_embeddings(dir / "e.aaem", toy_matrix());
  write_json(dir / "manifest.json", {{"name", "toy"},
                                     {"point_count", 3},
                                     {"dim", 4},
                                     {"embeddings_path", "e.aaem"},
                                     {"media_url_template", "https://host/a/{id}.ogg"}});
  const auto m = parse_manifest(dir / "manifest.json");
  EXPECT_EQ(m.media_url(7), "https://host/a/7.ogg");
}

TEST(Manifest, TemplateWithoutIdIsRejected) {
  TempDir dir;
  write_embeddings(dir / "e.aaem", toy_matrix());
  write_json(dir / "manifest.json", {{"name", "toy"},
                                     {"point_count", 3},
                                     {"dim", 4},
                                     {"embeddings_path", "e.aaem"},
                                     {"media_url_template", "https://host/a.ogg"}});
  EXPECT_EQ(expect_atlas_error([&] { parse_manifest(dir / "manifest.json"); }).code(), ErrorCode::kInvalidArgument);
}

TEST(Manifest, MissingFileMalformedAndMissingField) {
  TempDir dir;
  EXPECT_EQ(expect_atlas_error([&] { parse_manifest(dir / "nope.json"); }).code(), ErrorCode::kNotFound);
  io::write_file(dir / "bad.json", "{ not json");
  EXPECT_EQ(expect_atlas_error([&] { parse_manifest(dir / "bad.json"); }).code(), ErrorCode::kInvalidArgument);
  write_json(dir / "nodim.json", {{"name", "toy"}, {"point_count", 3}, {"embeddings_path", "e.aaem"}});
  const auto e = expect_atlas_error([&] { parse_manifest(dir / "nodim.json"); });
  EXPECT_TRUE(contains(e.what(), "dim")) << e.what();
}

TEST(Manifest, WriteThenParseRoundTrips) {
  TempDir dir;
  write_embeddings(dir / "e.aaem", toy_matrix());
  DatasetManifest m;
  m.name = "toy";
  m.point_count = 3;
  m.dim = 4;
  m.embeddings_path = dir / "e.aaem";
  m.media_url_template = "x/{id}";
  m.default_classes = {"a", "b"};
  write_manifest(dir / "manifest.json", m);
  const auto back = parse_manifest(dir / "manifest.json");
  EXPECT_EQ(back.name, m.name);
  EXPECT_EQ(back.embeddings_path, m.embeddings_path);
  EXPECT_EQ(back.default_classes, m.default_classes);
  EXPECT_EQ(back.media_url_template, m.media_url_template);
}

TEST(Embeddings, DecodesTwoByThree) {
  const EmbeddingMatrix m({10, 20}, {1, 2, 3, 4, 5, 6}, 3);
  const auto back = decode_embeddings(encode_embeddings(m));
  ASSERT_EQ(back.size(), 2u);
  ASSERT_EQ(back.dim(), 3u);
  EXPECT_FALSE(back.normalized());
  EXPECT_EQ(back.row(1)[2], 6.0f);
  EXPECT_EQ(back.id(1), 20u);
}

TEST(Embeddings, HeaderLayout) {
  const EmbeddingMatrix m({10, 20}, {1, 2, 3, 4, 5, 6}, 3);
  const auto bytes = encode_embeddings(m);
  ASSERT_EQ(bytes.size(), kEmbeddingsHeaderBytes + 2 * 8 + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "AAEM");
  io::Reader r(bytes);
  r.expect_magic("AAEM");
  EXPECT_EQ(r.get<std::uint32_t>(), 1u);
  EXPECT_EQ(r.get<std::uint64_t>(), 2u);
  EXPECT_EQ(r.get<std::uint32_t>(), 3u);
  EXPECT_EQ(r.get<std::uint8_t>(), 0u);
  EXPECT_EQ(r.get<std::uint8_t>(), 0u);
  EXPECT_EQ(r.get<std::uint8_t>(), 0u);
  EXPECT_EQ(r.get<std::uint8_t>(), 0u);
  EXPECT_EQ(r.get<std::uint64_t>(), 10u);
}

TEST(Embeddings, TruncatedPayload) {
  const EmbeddingMatrix m({10, 20}, {1, 2, 3, 4, 5, 6}, 3);
  auto bytes = encode_embeddings(m);
  bytes.resize(bytes.size() - 4);  // 5 of 6 floats
  const auto e = expect_atlas_error([&] { decode_embeddings(bytes); });
  EXPECT_EQ(e.code(), ErrorCode::kCorruptData);
  EXPECT_TRUE(contains(e.what(), "truncated payload")) << e.what();
}

TEST(Embeddings, NanNamesTheRow) {
  const EmbeddingMatrix m({10, 20, 30}, {1, 2, 3, 4, 5, 6, 7, 8, 9}, 3);
  auto bytes = encode_embeddings(m);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + kEmbeddingsHeaderBytes + 3 * 8 + 4 * 4, &nan, 4);  // row 1
  const auto e = expect_atlas_error([&] { decode_embeddings(bytes); });
  EXPECT_TRUE(contains(e.what(), "row 1")) << e.what();
}

TEST(Embeddings, BadMagicVersionAndDtype) {
  const auto good = encode_embeddings(toy_matrix());
  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(expect_atlas_error([&] { decode_embeddings(bad); }).code(), ErrorCode::kCorruptData);
  bad = good;
  bad[4] = 2;
  EXPECT_EQ(expect_atlas_error([&] { decode_embeddings(bad); }).code(), ErrorCode::kCorruptData);
  bad = good;
  bad[20] = 1;
  EXPECT_EQ(expect_atlas_error([&] { decode_embeddings(bad); }).code(), ErrorCode::kCorruptData);
}

TEST(Embeddings, RejectsUnsortedOrDuplicateIds) {
  EXPECT_ANY_THROW(EmbeddingMatrix({2, 1}, {1, 0, 0, 1}, 2));
  EXPECT_ANY_THROW(EmbeddingMatrix({1, 1}, {1, 0, 0, 1}, 2));
}

TEST(Embeddings, RoundTripPropertyOverRandomMatrices) {
  TempDir dir;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> n_dist(0, 40), d_dist(1, 17);
  std::uniform_real_distribution<float> v(-1e6f, 1e6f);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = n_dist(rng), d = d_dist(rng);
    std::vector<PointId> ids(n);
    PointId next = rng() % 1000;
    for (auto& id : ids) id = (next += 1 + rng() % (1ull << 40));
    std::vector<float> vals(n * d);
    for (auto& x : vals) x = v(rng);
    const EmbeddingMatrix m(ids, vals, d);
    write_embeddings(dir / "m.aaem", m);
    const auto back = load_embeddings(dir / "m.aaem");
    EXPECT_EQ(back, m);
    EXPECT_EQ(encode_embeddings(back), encode_embeddings(m));
  }
}

TEST(Normalize, ThreeFourFive) {
  const auto n = normalize_rows(EmbeddingMatrix({1, 2}, {0, 3, 4, 1, 0, 0}, 3));
  EXPECT_TRUE(n.normalized());
  EXPECT_FLOAT_EQ(n.row(0)[0], 0.0f);
  EXPECT_FLOAT_EQ(n.row(0)[1], 0.6f);
  EXPECT_FLOAT_EQ(n.row(0)[2], 0.8f);
  EXPECT_EQ(n.row(1)[0], 1.0f);
  EXPECT_EQ(n.row(1)[1], 0.0f);
}

TEST(Normalize, ZeroRowNamesId) {
  const auto e = expect_atlas_error([] { normalize_rows(EmbeddingMatrix({5, 42}, {1, 0, 0, 0, 0, 0}, 3)); });
  EXPECT_TRUE(contains(e.what(), "42")) << e.what();
}

TEST(Normalize, IdempotentProperty) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 30, d = 1 + trial;
    std::vector<PointId> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    std::vector<float> vals(n * d);
    for (auto& x : vals) x = g(rng) + 0.01f;
    const auto once = normalize_rows(EmbeddingMatrix(ids, vals, d));
    const auto twice = normalize_rows(once);
    for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_NEAR(once.values()[i], twice.values()[i], 1e-7);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(std::sqrt(dense_dot(once.row(i), once.row(i))), 1.0, 1e-5);
  }
}

TEST(Cosine, HandExamples) {
  const std::vector<float> v{0.3f, -2.0f, 5.0f}, x{1, 0}, y{0, 1}, nx{-1, 0};
  EXPECT_NEAR(cosine(v, v), 1.0, 1e-12);
  EXPECT_EQ(cosine(x, y), 0.0);
  EXPECT_EQ(cosine(x, nx), -1.0);
  EXPECT_EQ(expect_atlas_error([&] { cosine(v, x); }).code(), ErrorCode::kDimensionMismatch);
  const std::vector<float> z{0, 0};
  EXPECT_ANY_THROW(cosine(x, z));
}

TEST(Cosine, SymmetricAndScaleInvariantProperty) {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> g(0, 1);
  std::uniform_real_distribution<float> s(0.01f, 100.0f);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> a(16), b(16);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng);
    const double c = cosine(a, b);
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
    EXPECT_EQ(c, cosine(b, a));
    auto scaled = a;
    const float k = s(rng);
    for (auto& x : scaled) x *= k;
    EXPECT_NEAR(cosine(scaled, b), c, 1e-6);
  }
}

TEST(Synth, DeterministicForSeed) {
  const auto a = synth_dataset(2, 5, 8, 0.01, 1);
  const auto b = synth_dataset(2, 5, 8, 0.01, 1);
  EXPECT_EQ(a.matrix, b.matrix);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_NE(synth_dataset(2, 5, 8, 0.01, 2).matrix, a.matrix);
}

TEST(Synth, InvalidParameters) {
  EXPECT_ANY_THROW(synth_dataset(0, 5, 8, 0.1, 1));
  EXPECT_ANY_THROW(synth_dataset(2, 0, 8, 0.1, 1));
  EXPECT_ANY_THROW(synth_dataset(2, 5, 1, 0.1, 1));
  EXPECT_ANY_THROW(synth_dataset(2, 5, 8, 0.0, 1));
}

TEST(Synth, TightClustersSeparateByBruteForce) {
  const auto s = synth_dataset(4, 10, 16, 0.0001, 3);
  const auto& m = s.matrix;
  for (std::size_t i = 0; i < m.size(); ++i) {
    double min_within = 2.0, max_between = -2.0;
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (i == j) continue;
      const double c = dense_dot(m.row(i), m.row(j));
      if (s.labels[i] == s.labels[j]) {
        min_within = std::min(min_within, c);
      } else {
        max_between = std::max(max_between, c);
      }
    }
    EXPECT_GE(min_within, max_between) << "point " << i;
  }
}

TEST(Synth, OneNearestNeighborAgreesWithLabels) {
  const auto s = synth_dataset(50, 40, 64, 0.05, 7);
  const auto& m = s.matrix;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    // Brute-force 1-NN excluding the point itself.
    std::size_t best = i == 0 ? 1 : 0;
    double best_sim = -2.0;
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (j == i) continue;
      const double c = dense_dot(m.row(i), m.row(j));
      if (c > best_sim) best_sim = c, best = j;
    }
    // exact_knn's top-2 must contain the same neighbor after self.
    const auto knn = ann::exact_knn(m, m.row(i), 2);
    EXPECT_EQ(knn[0].index, i);
    EXPECT_EQ(knn[1].index, best);
    agree += s.labels[best] == s.labels[i];
  }
  EXPECT_GE(double(agree) / m.size(), 0.99);
}

TEST(Metadata, JsonLinesRoundTripAndMediaUrl) {
  TempDir dir;
  const auto m = toy_matrix();
  std::vector<PointMetadata> recs(2);
  recs[0].id = 1;
  recs[0].title = "dog";
  recs[0].labels = {"animal", "bark"};
  recs[1].id = 3;
  recs[1].description = "rain on a roof";
  write_metadata(dir / "meta.jsonl", recs);
  const auto table = load_metadata(dir / "meta.jsonl", m);
  EXPECT_EQ(table.size(), 2u);
  EXPECT_EQ(table.lookup(1), recs[0]);
  EXPECT_EQ(table.lookup(3), recs[1]);
  EXPECT_EQ(table.lookup(2).id, 2u);
  EXPECT_FALSE(table.lookup(2).title.has_value());
  DatasetManifest man;
  man.media_url_template = "https://m/{id}.wav";
  EXPECT_EQ(table.lookup(2, &man).media_url, "https://m/2.wav");
}

TEST(Metadata, UnknownIdRejected) {
  TempDir dir;
  io::write_file(dir / "meta.jsonl", "{\"id\": 99, \"title\": \"x\"}\n");
  EXPECT_ANY_THROW(load_metadata(dir / "meta.jsonl", toy_matrix()));
}
