#include "atlas/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "atlas/binary_io.hpp"
#include "atlas/error.hpp"
#include "atlas/simd/kernels.hpp"

namespace atlas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kEmbeddingsMagic = "AAEM";
constexpr std::uint32_t kEmbeddingsVersion = 1;
constexpr std::uint8_t kDtypeFloat32 = 0;
constexpr double kUnitTolerance = 1e-5;

EmbeddingsHeader decode_header(io::Reader& in) {
  in.expect_magic(kEmbeddingsMagic);
  const auto version = in.get<std::uint32_t>();
  require(version == kEmbeddingsVersion, ErrorCode::kCorruptData,
          "unsupported embeddings version " + std::to_string(version));
  EmbeddingsHeader h;
  h.count = in.get<std::uint64_t>();
  h.dim = in.get<std::uint32_t>();
  const auto dtype = in.get<std::uint8_t>();
  require(dtype == kDtypeFloat32, ErrorCode::kCorruptData,
          "unsupported embeddings dtype " + std::to_string(dtype));
  in.get_bytes(3);
  require(h.dim > 0, ErrorCode::kCorruptData, "embeddings dim must be positive");
  return h;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::optional<std::string> DatasetManifest::media_url(PointId id) const {
  if (!media_url_template) return std::nullopt;
  std::string url = *media_url_template;
  const std::string token = "{id}";
  const std::string value = std::to_string(id);
  for (auto pos = url.find(token); pos != std::string::npos; pos = url.find(token, pos + value.size())) {
    url.replace(pos, token.size(), value);
  }
  return url;
}

DatasetManifest parse_manifest(const fs::path& path) {
  require(fs::exists(path), ErrorCode::kNotFound, "manifest not found: " + path.string());
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, "malformed manifest '" + path.string() + "': " + e.what());
  }
  require(doc.is_object(), ErrorCode::kInvalidArgument, "malformed manifest: expected an object");

  auto field = [&](const char* key) -> const json& {
    auto it = doc.find(key);
    require(it != doc.end() && !it->is_null(), ErrorCode::kInvalidArgument,
            std::string("manifest missing required field '") + key + "'");
    return *it;
  };

  DatasetManifest m;
  m.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
  try {
    m.name = field("name").get<std::string>();
    const auto& count = field("point_count");
    require(count.is_number_unsigned() || (count.is_number_integer() && count.get<std::int64_t>() >= 0),
            ErrorCode::kInvalidArgument, "point_count must be a non-negative integer");
    m.point_count = count.get<std::uint64_t>();
    const auto& dim = field("dim");
    require(dim.is_number_integer() && dim.get<std::int64_t>() > 0, ErrorCode::kInvalidArgument,
            "dim must be a positive integer");
    m.dim = dim.get<std::uint32_t>();
    m.embeddings_path = resolve(m.root, field("embeddings_path").get<std::string>());
    if (doc.contains("metadata_path") && !doc["metadata_path"].is_null()) {
      m.metadata_path = resolve(m.root, doc["metadata_path"].get<std::string>());
    }
    if (doc.contains("media_url_template") && !doc["media_url_template"].is_null()) {
      m.media_url_template = doc["media_url_template"].get<std::string>();
    }
    if (doc.contains("default_classes") && !doc["default_classes"].is_null()) {
      m.default_classes = doc["default_classes"].get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed manifest field: ") + e.what());
  }
  require(!m.name.empty(), ErrorCode::kInvalidArgument, "manifest name must be non-empty");
  if (m.media_url_template) {
    require(m.media_url_template->find("{id}") != std::string::npos, ErrorCode::kInvalidArgument,
            "media_url_template must contain '{id}'");
  }

  const auto header = read_embeddings_header(m.embeddings_path);
  require(header.count == m.point_count, ErrorCode::kInvalidArgument,
          "count mismatch: manifest declares " + std::to_string(m.point_count) +
              " points, embeddings header declares " + std::to_string(header.count));
  require(header.dim == m.dim, ErrorCode::kDimensionMismatch,
          "dimension mismatch: manifest dim " + std::to_string(m.dim) + ", embeddings dim " +
              std::to_string(header.dim));
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  auto relative = [&](const fs::path& p) {
    const auto base = path.has_parent_path() ? path.parent_path() : fs::path(".");
    return p.is_absolute() ? p.lexically_relative(fs::absolute(base)).generic_string()
                           : p.lexically_relative(base).generic_string();
  };
  json doc = {
      {"name", m.name},
      {"point_count", m.point_count},
      {"dim", m.dim},
      {"embeddings_path", relative(m.embeddings_path)},
  };
  if (m.metadata_path) doc["metadata_path"] = relative(*m.metadata_path);
  if (m.media_url_template) doc["media_url_template"] = *m.media_url_template;
  if (!m.default_classes.empty()) doc["default_classes"] = m.default_classes;
  io::write_file(path, doc.dump(2) + "\n");
}

EmbeddingMatrix::EmbeddingMatrix(std::vector<PointId> ids, std::vector<float> values,
                                 std::size_t dim, bool normalized)
    : ids_(std::move(ids)), values_(std::move(values)), dim_(dim), normalized_(normalized) {
  require(dim_ > 0, ErrorCode::kInvalidArgument, "embedding dim must be positive");
  require(values_.size() == ids_.size() * dim_, ErrorCode::kInvalidArgument,
          "embedding value count does not match ids x dim");
  for (std::size_t i = 1; i < ids_.size(); ++i) {
    require(ids_[i - 1] < ids_[i], ErrorCode::kInvalidArgument,
            "point ids must be unique and ascending (row " + std::to_string(i) + ", id " +
                std::to_string(ids_[i]) + ")");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const auto r = row(i);
    const bool finite = std::all_of(r.begin(), r.end(), [](float v) { return std::isfinite(v); });
    require(finite, ErrorCode::kInvalidArgument,
            "non-finite component in row " + std::to_string(i) + " (id " +
                std::to_string(ids_[i]) + ")");
    if (normalized_) {
      const double norm = std::sqrt(simd::squared_norm(r));
      require(std::abs(norm - 1.0) <= kUnitTolerance, ErrorCode::kInvalidArgument,
              "row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

std::optional<std::size_t> EmbeddingMatrix::index_of(PointId id) const noexcept {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

std::string encode_embeddings(const EmbeddingMatrix& m) {
  io::Writer out;
  out.put_bytes(kEmbeddingsMagic);
  out.put<std::uint32_t>(kEmbeddingsVersion);
  out.put<std::uint64_t>(m.size());
  out.put<std::uint32_t>(static_cast<std::uint32_t>(m.dim()));
  out.put<std::uint8_t>(kDtypeFloat32);
  out.put_bytes(std::string_view("\0\0\0", 3));
  out.put_array(m.ids());
  out.put_array(m.values());
  return std::move(out).bytes();
}

EmbeddingMatrix decode_embeddings(std::string_view bytes) {
  io::Reader in(bytes);
  const auto h = decode_header(in);
  // Size check up front so a huge declared count cannot trigger a huge allocation.
  const std::uint64_t needed = h.count * (sizeof(PointId) + std::uint64_t{h.dim} * sizeof(float));
  require(in.remaining() >= needed, ErrorCode::kCorruptData, "truncated payload");
  std::vector<PointId> ids(h.count);
  std::vector<float> values(h.count * h.dim);
  in.get_array(std::span(ids));
  in.get_array(std::span(values));
  return EmbeddingMatrix(std::move(ids), std::move(values), h.dim, false);
}

EmbeddingsHeader read_embeddings_header(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kNotFound, "embeddings file not found: " + path.string());
  std::string buf(kEmbeddingsHeaderBytes, '\0');
  f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  buf.resize(static_cast<std::size_t>(f.gcount()));
  io::Reader in(buf);
  return decode_header(in);
}

void write_embeddings(const fs::path& path, const EmbeddingMatrix& m) {
  io::write_file(path, encode_embeddings(m));
}

EmbeddingMatrix load_embeddings(const fs::path& path) {
  return decode_embeddings(io::read_file(path));
}

EmbeddingMatrix load_embeddings(const DatasetManifest& manifest) {
  auto m = load_embeddings(manifest.embeddings_path);
  require(m.size() == manifest.point_count, ErrorCode::kInvalidArgument, "count mismatch");
  require(m.dim() == manifest.dim, ErrorCode::kDimensionMismatch, "dimension mismatch");
  return m;
}

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m) {
  std::vector<float> values(m.values().begin(), m.values().end());
  const std::size_t d = m.dim();
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double norm = std::sqrt(simd::squared_norm(m.row(i)));
    require(norm > 0.0, ErrorCode::kInvalidArgument,
            "zero embedding row for id " + std::to_string(m.id(i)));
    for (std::size_t j = 0; j < d; ++j) {
      values[i * d + j] = static_cast<float>(static_cast<double>(values[i * d + j]) / norm);
    }
  }
  return EmbeddingMatrix(std::vector<PointId>(m.ids().begin(), m.ids().end()), std::move(values), d,
                         true);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), ErrorCode::kDimensionMismatch,
          "dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  const double na = simd::squared_norm(a);
  const double nb = simd::squared_norm(b);
  require(na > 0.0 && nb > 0.0, ErrorCode::kInvalidArgument, "cosine of a zero vector");
  return std::clamp(simd::dot(a, b) / std::sqrt(na * nb), -1.0, 1.0);
}

void MetadataTable::insert(PointMetadata record) {
  const PointId id = record.id;
  records_.insert_or_assign(id, std::move(record));
}

PointMetadata MetadataTable::lookup(PointId id, const DatasetManifest* manifest) const {
  PointMetadata out;
  if (auto it = records_.find(id); it != records_.end()) out = it->second;
  out.id = id;
  if (manifest != nullptr && !out.media_url) out.media_url = manifest->media_url(id);
  return out;
}

MetadataTable load_metadata(const fs::path& path, const EmbeddingMatrix& m) {
  MetadataTable table;
  std::istringstream lines(io::read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    PointMetadata rec;
    try {
      const auto doc = json::parse(line);
      rec.id = doc.at("id").get<PointId>();
      if (doc.contains("title")) rec.title = doc["title"].get<std::string>();
      if (doc.contains("description")) rec.description = doc["description"].get<std::string>();
      if (doc.contains("labels")) rec.labels = doc["labels"].get<std::vector<std::string>>();
      if (doc.contains("media_url")) rec.media_url = doc["media_url"].get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kInvalidArgument,
           "malformed metadata record at line " + std::to_string(line_no) + ": " + e.what());
    }
    require(m.index_of(rec.id).has_value(), ErrorCode::kInvalidArgument,
            "metadata id " + std::to_string(rec.id) + " not present in embeddings");
    table.insert(std::move(rec));
  }
  return table;
}

void write_metadata(const fs::path& path, std::span<const PointMetadata> records) {
  std::string out;
  for (const auto& r : records) {
    json doc = {{"id", r.id}};
    if (r.title) doc["title"] = *r.title;
    if (r.description) doc["description"] = *r.description;
    if (!r.labels.empty()) doc["labels"] = r.labels;
    if (r.media_url) doc["media_url"] = *r.media_url;
    out += doc.dump();
    out += '\n';
  }
  io::write_file(path, out);
}

SynthDataset synth_dataset(std::size_t k, std::size_t n, std::size_t d, double spread,
                           std::uint64_t seed) {
  require(k >= 1 && n >= 1 && d >= 2 && spread > 0.0 && std::isfinite(spread),
          ErrorCode::kInvalidArgument, "synth_dataset requires k>=1, n>=1, d>=2, spread>0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto unit = [d](std::vector<double>& v, std::vector<float>& out) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) out.push_back(static_cast<float>(v[j] / norm));
  };

  std::vector<float> centroid_values;
  centroid_values.reserve(k * d);
  std::vector<double> tmp(d);
  for (std::size_t c = 0; c < k; ++c) {
    for (auto& x : tmp) x = gauss(rng);
    unit(tmp, centroid_values);
  }

  std::vector<float> values;
  values.reserve(k * n * d);
  std::vector<std::uint32_t> labels;
  labels.reserve(k * n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) tmp[j] = centroid_values[c * d + j] + spread * gauss(rng);
      unit(tmp, values);
      labels.push_back(static_cast<std::uint32_t>(c));
    }
  }

  std::vector<PointId> ids(k * n);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  std::vector<PointId> centroid_ids(k);
  for (std::size_t c = 0; c < k; ++c) centroid_ids[c] = c;

  return SynthDataset{EmbeddingMatrix(std::move(ids), std::move(values), d, true), std::move(labels),
                      EmbeddingMatrix(std::move(centroid_ids), std::move(centroid_values), d, true)};
}

}  // namespace atlas
