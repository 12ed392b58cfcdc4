#include "atlas/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "atlas/base64.hpp"
#include "atlas/binary_io.hpp"
#include "atlas/error.hpp"

namespace atlas::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kDefaultPageLimit = 100;
constexpr std::size_t kMaxPageLimit = 1000;

// Handler-level failure with an explicit HTTP status and machine-readable code.
struct ApiError {
  int status;
  std::string code;
  std::string message;
};

[[noreturn]] void api_fail(int status, std::string code, std::string message) {
  throw ApiError{status, std::move(code), std::move(message)};
}

HttpResponse json_response(int status, const json& body) {
  HttpResponse r;
  r.status = status;
  r.body = body.dump();
  return r;
}

HttpResponse error_response(int status, const std::string& code, const std::string& message) {
  return json_response(status, {{"error", {{"code", code}, {"message", message}}}});
}

HttpResponse from_atlas_error(const AtlasError& e) {
  switch (e.code()) {
    case ErrorCode::kInvalidArgument: return error_response(400, "invalid_request", e.what());
    case ErrorCode::kDimensionMismatch: return error_response(400, "dimension_mismatch", e.what());
    case ErrorCode::kNotFound: return error_response(404, "not_found", e.what());
    case ErrorCode::kPayloadTooLarge: return error_response(413, "payload_too_large", e.what());
    case ErrorCode::kEmbedderUnavailable: return error_response(502, "embedder_unavailable", e.what());
    case ErrorCode::kEmbedderBadResponse: return error_response(502, "embedder_bad_response", e.what());
    case ErrorCode::kMissingPrerequisite: return error_response(503, "dataset_loading", e.what());
    default: return error_response(500, std::string(to_string(e.code())), e.what());
  }
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream in(path);
  std::string part;
  while (std::getline(in, part, '/')) {
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

std::size_t query_size(const HttpRequest& req, const std::string& key, std::size_t fallback,
                       const std::string& error_code) {
  auto it = req.query.find(key);
  if (it == req.query.end()) return fallback;
  const auto v = parse_number<long long>(it->second);
  if (!v || *v < 0) api_fail(400, error_code, "'" + key + "' must be a non-negative integer");
  return static_cast<std::size_t>(*v);
}

std::size_t checked_k(long long k, std::size_t max_k) {
  if (k < 1 || static_cast<std::size_t>(k) > max_k) {
    api_fail(400, "k_out_of_range", "k must be in [1, " + std::to_string(max_k) + "]");
  }
  return static_cast<std::size_t>(k);
}

json page(const json& items, const HttpRequest& req) {
  const std::size_t offset = query_size(req, "offset", 0, "invalid_request");
  const std::size_t limit =
      std::min(query_size(req, "limit", kDefaultPageLimit, "invalid_request"), kMaxPageLimit);
  json slice = json::array();
  for (std::size_t i = offset; i < items.size() && i < offset + limit; ++i) slice.push_back(items[i]);
  return {{"items", std::move(slice)}, {"total", items.size()}, {"offset", offset}, {"limit", limit}};
}

json metadata_json(const PointMetadata& m) {
  json j = {{"id", m.id}, {"labels", m.labels}};
  j["title"] = m.title ? json(*m.title) : json(nullptr);
  j["description"] = m.description ? json(*m.description) : json(nullptr);
  j["media_url"] = m.media_url ? json(*m.media_url) : json(nullptr);
  return j;
}

json label_json(const zeroshot::LabelPlacement& l) {
  return {{"class_index", l.class_index}, {"name", l.name}, {"x", l.x}, {"y", l.y},
          {"member_count", l.member_count}};
}

std::string apply_template(const std::string& tmpl, const std::string& name) {
  std::string out = tmpl;
  const std::string token = "{class}";
  for (auto pos = out.find(token); pos != std::string::npos; pos = out.find(token, pos + name.size())) {
    out.replace(pos, token.size(), name);
  }
  return out;
}

std::unordered_map<std::uint64_t, std::string> encode_tiles(const tiles::TilePyramid& pyramid) {
  std::unordered_map<std::uint64_t, std::string> out;
  out.reserve(pyramid.tiles.size());
  for (const auto& t : pyramid.tiles) out.emplace(t.key.packed(), tiles::serialize_tile(t));
  return out;
}

}  // namespace

void to_json(json& j, const SearchResult& r) {
  j = {{"id", r.id},
       {"similarity", r.similarity},
       {"x", r.x},
       {"y", r.y},
       {"class_index", r.class_index == zeroshot::kUnassigned ? json(nullptr) : json(r.class_index)},
       {"metadata", metadata_json(r.metadata)}};
}

ServiceConfig load_config(const std::optional<fs::path>& path) {
  ServiceConfig c;
  if (path) {
    json doc;
    try {
      doc = json::parse(io::read_file(*path));
      c.host = doc.value("host", c.host);
      c.port = doc.value("port", c.port);
      if (doc.contains("dataset_roots")) {
        for (const auto& r : doc["dataset_roots"]) c.dataset_roots.emplace_back(r.get<std::string>());
      }
      c.embedder_url = doc.value("embedder_url", c.embedder_url);
      c.embedder_timeout = std::chrono::milliseconds(
          doc.value("embedder_timeout_ms", static_cast<long long>(c.embedder_timeout.count())));
      c.embedder_concurrency = doc.value("embedder_concurrency", c.embedder_concurrency);
      c.max_upload_bytes = doc.value("max_upload_bytes", c.max_upload_bytes);
      c.max_k = doc.value("max_k", c.max_k);
      c.default_k = doc.value("default_k", c.default_k);
      c.temperature = doc.value("temperature", c.temperature);
      c.prompt_template = doc.value("prompt_template", c.prompt_template);
      c.worker_threads = doc.value("worker_threads", c.worker_threads);
    } catch (const json::exception& e) {
      fail(ErrorCode::kInvalidArgument, std::string("malformed config: ") + e.what());
    }
  }
  apply_env_overrides(c);
  return c;
}

void apply_env_overrides(ServiceConfig& c) {
  auto env = [](const char* key) -> std::optional<std::string> {
    const char* v = std::getenv(key);
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
  auto number = [](const std::string& key, const std::string& v) {
    const auto n = parse_number<long long>(v);
    require(n.has_value() && *n >= 0, ErrorCode::kInvalidArgument, key + " must be a non-negative integer");
    return *n;
  };
  if (auto v = env("ATLAS_HOST")) c.host = *v;
  if (auto v = env("ATLAS_PORT")) c.port = static_cast<int>(number("ATLAS_PORT", *v));
  if (auto v = env("ATLAS_DATASET_ROOTS")) {
    c.dataset_roots.clear();
    std::stringstream in(*v);
    std::string root;
    while (std::getline(in, root, ':')) {
      if (!root.empty()) c.dataset_roots.emplace_back(root);
    }
  }
  if (auto v = env("ATLAS_EMBEDDER_URL")) c.embedder_url = *v;
  if (auto v = env("ATLAS_EMBEDDER_TIMEOUT_MS")) {
    c.embedder_timeout = std::chrono::milliseconds(number("ATLAS_EMBEDDER_TIMEOUT_MS", *v));
  }
  if (auto v = env("ATLAS_MAX_UPLOAD_BYTES")) {
    c.max_upload_bytes = static_cast<std::size_t>(number("ATLAS_MAX_UPLOAD_BYTES", *v));
  }
}

std::shared_ptr<const DatasetSnapshot> make_snapshot(pipeline::LoadedDataset data) {
  auto snap = std::make_shared<DatasetSnapshot>();
  snap->name = data.manifest.name;
  snap->manifest = std::move(data.manifest);
  snap->matrix = std::move(data.matrix);
  snap->forest = std::move(data.forest);
  snap->projection = std::move(data.projection);
  snap->metadata = data.metadata ? std::move(data.metadata) : std::make_shared<MetadataTable>();
  snap->assignment = zeroshot::unassigned(snap->projection->ids, 0);
  snap->pyramid = std::make_shared<tiles::TilePyramid>(tiles::with_classes(*data.pyramid, snap->assignment));
  snap->tile_bytes = encode_tiles(*snap->pyramid);
  return snap;
}

std::vector<std::string> verify_snapshot(const DatasetSnapshot& s) {
  std::vector<std::string> problems;
  const auto ids = s.matrix->ids();
  const std::size_t n = ids.size();
  if (s.projection->size() != n || !std::equal(ids.begin(), ids.end(), s.projection->ids.begin())) {
    problems.push_back("projection ids differ from embedding ids");
  }
  if (s.assignment.size() != n || !std::equal(ids.begin(), ids.end(), s.assignment.ids.begin())) {
    problems.push_back("class assignment ids differ from embedding ids");
  }
  if (s.forest->dim() != s.matrix->dim()) problems.push_back("forest dimension differs from embeddings");
  std::vector<PointId> tiled;
  tiled.reserve(n);
  for (const auto& t : s.pyramid->tiles) tiled.insert(tiled.end(), t.ids.begin(), t.ids.end());
  std::sort(tiled.begin(), tiled.end());
  if (tiled.size() != n || !std::equal(ids.begin(), ids.end(), tiled.begin())) {
    problems.push_back("pyramid does not hold every point exactly once");
  }
  if (s.pyramid->manifest.total_points != n) problems.push_back("pyramid manifest total differs");
  for (const auto& t : s.pyramid->tiles) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      const auto idx = s.matrix->index_of(t.ids[k]);
      if (idx && s.assignment.size() == n && t.classes[k] != s.assignment.class_index[*idx]) {
        problems.push_back("tile class column differs from the assignment");
        return problems;
      }
    }
  }
  return problems;
}

AtlasService::AtlasService(ServiceConfig config, std::shared_ptr<Embedder> embedder)
    : config_(std::move(config)), embedder_(std::move(embedder)) {
  require(embedder_ != nullptr, ErrorCode::kInvalidArgument, "service needs an embedder");
}

AtlasService::~AtlasService() { wait_for_loads(); }

void AtlasService::add_dataset(std::shared_ptr<const DatasetSnapshot> snapshot, bool apply_default_classes) {
  const std::string name = snapshot->name;
  auto e = std::make_shared<Entry>();
  e->status = DatasetStatus::kReady;
  e->current = snapshot;
  {
    std::unique_lock lock(registry_mutex_);
    datasets_[name] = e;
  }
  if (apply_default_classes && !snapshot->manifest.default_classes.empty()) {
    try {
      reclassify(name, snapshot->manifest.default_classes, config_.prompt_template);
    } catch (const AtlasError& err) {
      std::cerr << "atlas: default classes for '" << name << "' not applied: " << err.what() << "\n";
    }
  }
}

std::string AtlasService::load_dataset(const fs::path& root) {
  auto snap = make_snapshot(pipeline::load_dataset(pipeline::DatasetLayout(root)));
  const std::string name = snap->name;
  add_dataset(std::move(snap));
  return name;
}

std::string AtlasService::load_dataset_async(const fs::path& root) {
  const pipeline::DatasetLayout layout(root);
  const auto manifest = parse_manifest(layout.manifest());
  const std::string name = manifest.name;
  auto e = std::make_shared<Entry>();
  {
    std::unique_lock lock(registry_mutex_);
    if (auto it = datasets_.find(name); it != datasets_.end() && it->second->status == DatasetStatus::kLoading) {
      return name;
    }
    datasets_[name] = e;
  }
  std::lock_guard lock(loaders_mutex_);
  loaders_.emplace_back([this, layout, name, e] {
    try {
      auto snap = make_snapshot(pipeline::load_dataset(layout));
      add_dataset(std::move(snap));
    } catch (const std::exception& err) {
      std::lock_guard guard(e->snapshot_mutex);
      e->status = DatasetStatus::kFailed;
      e->error = err.what();
    }
  });
  return name;
}

void AtlasService::wait_for_loads() {
  std::vector<std::jthread> pending;
  {
    std::lock_guard lock(loaders_mutex_);
    pending.swap(loaders_);
  }
  pending.clear();
}

std::vector<std::string> AtlasService::dataset_names() const {
  std::shared_lock lock(registry_mutex_);
  std::vector<std::string> names;
  for (const auto& [name, _] : datasets_) names.push_back(name);
  return names;
}

std::shared_ptr<AtlasService::Entry> AtlasService::entry(const std::string& name) const {
  std::shared_lock lock(registry_mutex_);
  auto it = datasets_.find(name);
  require(it != datasets_.end(), ErrorCode::kNotFound, "unknown dataset '" + name + "'");
  return it->second;
}

DatasetStatus AtlasService::status(const std::string& name) const {
  auto e = entry(name);
  std::lock_guard lock(e->snapshot_mutex);
  return e->status;
}

std::shared_ptr<const DatasetSnapshot> AtlasService::snapshot(const std::string& name) const {
  auto e = entry(name);
  std::lock_guard lock(e->snapshot_mutex);
  if (e->status == DatasetStatus::kLoading) {
    fail(ErrorCode::kMissingPrerequisite, "dataset '" + name + "' is still loading");
  }
  if (e->status == DatasetStatus::kFailed) {
    fail(ErrorCode::kMissingPrerequisite, "dataset '" + name + "' failed to load: " + e->error);
  }
  return e->current;
}

std::vector<SearchResult> AtlasService::semantic_search(const std::string& name,
                                                        std::span<const float> query,
                                                        std::size_t k) const {
  return semantic_search(*snapshot(name), query, k);
}

std::vector<SearchResult> AtlasService::semantic_search(const DatasetSnapshot& snap,
                                                        std::span<const float> query,
                                                        std::size_t k) const {
  require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  const auto hits = ann::query(*snap.forest, *snap.matrix, query, k);
  std::vector<SearchResult> out;
  out.reserve(hits.size());
  for (const auto& h : hits) {
    SearchResult r;
    r.id = snap.matrix->id(h.index);
    r.similarity = h.similarity;
    r.metadata = snap.metadata->lookup(r.id, &snap.manifest);
    r.x = snap.projection->coords[2 * h.index];
    r.y = snap.projection->coords[2 * h.index + 1];
    r.class_index = snap.assignment.class_index[h.index];
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SearchResult> AtlasService::neighbors_of(const std::string& name, PointId id,
                                                     std::size_t k) const {
  return neighbors_of(*snapshot(name), id, k);
}

std::vector<SearchResult> AtlasService::neighbors_of(const DatasetSnapshot& snap, PointId id,
                                                     std::size_t k) const {
  const auto idx = snap.matrix->index_of(id);
  require(idx.has_value(), ErrorCode::kNotFound, "unknown point id " + std::to_string(id));
  auto results = semantic_search(snap, snap.matrix->row(*idx), k + 1);
  auto self = std::find_if(results.begin(), results.end(), [id](const SearchResult& r) { return r.id == id; });
  if (self != results.end()) {
    results.erase(self);
  } else if (results.size() > k) {
    results.pop_back();
  }
  if (results.size() > k) results.resize(k);
  return results;
}

std::vector<float> AtlasService::embed_text_query(const DatasetSnapshot& snap, const std::string& text) const {
  const std::vector<std::string> queries{text};
  return embed_text(*embedder_, queries, snap.matrix->dim()).front();
}

std::vector<float> AtlasService::embed_audio_query(const DatasetSnapshot& snap, std::string_view bytes,
                                                   std::string_view format) const {
  return embed_audio(*embedder_, bytes, format, snap.matrix->dim(), config_.max_upload_bytes);
}

std::shared_ptr<const DatasetSnapshot> AtlasService::reclassified(
    const DatasetSnapshot& base, const std::vector<std::string>& class_names,
    const std::string& prompt_template) const {
  require(!class_names.empty(), ErrorCode::kInvalidArgument, "class list must not be empty");
  require(class_names.size() <= zeroshot::kMaxClasses, ErrorCode::kInvalidArgument,
          "too many classes (max " + std::to_string(zeroshot::kMaxClasses) + ")");
  std::vector<std::string> prompts;
  prompts.reserve(class_names.size());
  for (const auto& name : class_names) prompts.push_back(apply_template(prompt_template, name));
  const auto vectors = embed_text(*embedder_, prompts, base.matrix->dim());
  std::vector<float> flat;
  flat.reserve(vectors.size() * base.matrix->dim());
  for (const auto& v : vectors) flat.insert(flat.end(), v.begin(), v.end());
  const auto classes = zeroshot::make_class_set(class_names, std::move(flat), base.matrix->dim());

  auto next = std::make_shared<DatasetSnapshot>();
  next->name = base.name;
  next->manifest = base.manifest;
  next->matrix = base.matrix;
  next->forest = base.forest;
  next->projection = base.projection;
  next->metadata = base.metadata;
  next->class_names = class_names;
  next->assignment = zeroshot::classify(*base.matrix, classes, config_.temperature, base.version());
  next->labels = zeroshot::place_labels(*base.projection, next->assignment, classes);
  next->pyramid = std::make_shared<tiles::TilePyramid>(tiles::with_classes(*base.pyramid, next->assignment));
  next->tile_bytes = encode_tiles(*next->pyramid);
  return next;
}

std::uint64_t AtlasService::reclassify(const std::string& name, const std::vector<std::string>& class_names,
                                       const std::string& prompt_template) {
  auto e = entry(name);
  std::lock_guard writer(e->writer_mutex);
  const auto base = snapshot(name);
  auto next = reclassified(*base, class_names, prompt_template);
  const auto version = next->version();
  {
    std::lock_guard lock(e->snapshot_mutex);
    e->current = std::move(next);
  }
  return version;
}

HttpResponse AtlasService::handle(const HttpRequest& req) {
  try {
    const auto parts = split_path(req.path);
    const bool get = req.method == "GET";
    const bool post = req.method == "POST";

    if (parts.size() == 1 && parts[0] == "healthz" && get) {
      return json_response(200, {{"status", "ok"}});
    }
    if (parts.empty() || parts[0] != "api") api_fail(404, "not_found", "no route for " + req.path);

    if (parts.size() == 2 && parts[1] == "datasets" && get) {
      json items = json::array();
      for (const auto& name : dataset_names()) {
        const auto st = status(name);
        json item = {{"name", name},
                     {"status", st == DatasetStatus::kReady     ? "ready"
                                : st == DatasetStatus::kLoading ? "loading"
                                                                : "failed"}};
        if (st == DatasetStatus::kReady) {
          const auto snap = snapshot(name);
          item["point_count"] = snap->matrix->size();
          item["dim"] = snap->matrix->dim();
          item["class_set_version"] = snap->version();
        }
        items.push_back(std::move(item));
      }
      return json_response(200, page(items, req));
    }

    if (parts.size() == 3 && parts[1] == "admin" && parts[2] == "datasets" && post) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        api_fail(400, "invalid_request", e.what());
      }
      if (!body.contains("path") || !body["path"].is_string()) {
        api_fail(400, "invalid_request", "body must contain a 'path' string");
      }
      const auto name = load_dataset_async(body["path"].get<std::string>());
      return json_response(202, {{"name", name}, {"status", "loading"}});
    }

    if (parts.size() < 4 || parts[1] != "datasets") api_fail(404, "not_found", "no route for " + req.path);
    const std::string& name = parts[2];
    const std::string& action = parts[3];
    std::shared_ptr<const DatasetSnapshot> snap;
    try {
      snap = snapshot(name);
    } catch (const AtlasError& e) {
      if (e.code() == ErrorCode::kNotFound) api_fail(404, "unknown_dataset", e.what());
      api_fail(503, "dataset_loading", e.what());
    }

    if (action == "manifest" && parts.size() == 4 && get) {
      json body = snap->pyramid->manifest;
      body["name"] = snap->name;
      body["point_count"] = snap->matrix->size();
      body["dim"] = snap->matrix->dim();
      body["class_names"] = snap->class_names;
      body["class_set_version"] = snap->version();
      if (snap->manifest.media_url_template) body["media_url_template"] = *snap->manifest.media_url_template;
      auto r = json_response(200, body);
      r.headers["X-Class-Set-Version"] = std::to_string(snap->version());
      return r;
    }

    if (action == "tiles" && parts.size() == 7 && get) {
      const auto z = parse_number<long long>(parts[4]);
      const auto x = parse_number<long long>(parts[5]);
      const auto y = parse_number<long long>(parts[6]);
      if (!z || !x || !y) api_fail(400, "invalid_request", "tile coordinates must be integers");
      const auto& m = snap->pyramid->manifest;
      if (*z < 0 || *z > m.max_zoom || *x < 0 || *y < 0 || *x >= (1LL << *z) || *y >= (1LL << *z)) {
        api_fail(404, "tile_out_of_range",
                 "tile " + parts[4] + "/" + parts[5] + "/" + parts[6] + " is outside the pyramid (max_zoom " +
                     std::to_string(m.max_zoom) + ")");
      }
      const tiles::TileKey key{static_cast<std::uint8_t>(*z), static_cast<std::uint32_t>(*x),
                               static_cast<std::uint32_t>(*y)};
      HttpResponse r;
      r.content_type = "application/octet-stream";
      if (auto it = snap->tile_bytes.find(key.packed()); it != snap->tile_bytes.end()) {
        r.body = it->second;
      } else {
        tiles::Tile empty;
        empty.key = key;
        r.body = tiles::serialize_tile(empty);
      }
      r.headers["X-Class-Set-Version"] = std::to_string(snap->version());
      return r;
    }

    if (action == "points" && parts.size() == 5 && get) {
      const auto id = parse_number<PointId>(parts[4]);
      if (!id) api_fail(400, "invalid_request", "point id must be an unsigned integer");
      const auto idx = snap->matrix->index_of(*id);
      if (!idx) api_fail(404, "unknown_point", "unknown point id " + parts[4]);
      long long k = static_cast<long long>(config_.default_k);
      if (auto it = req.query.find("k"); it != req.query.end()) {
        const auto parsed = parse_number<long long>(it->second);
        if (!parsed) api_fail(400, "k_out_of_range", "k must be an integer");
        k = *parsed;
      }
      const auto neighbors = neighbors_of(*snap, *id, checked_k(k, config_.max_k));
      const auto cls = snap->assignment.class_index[*idx];
      json point = {{"id", *id},
                    {"x", snap->projection->coords[2 * *idx]},
                    {"y", snap->projection->coords[2 * *idx + 1]},
                    {"metadata", metadata_json(snap->metadata->lookup(*id, &snap->manifest))}};
      if (cls == zeroshot::kUnassigned) {
        point["class_index"] = nullptr;
        point["class_name"] = nullptr;
        point["confidence"] = nullptr;
      } else {
        point["class_index"] = cls;
        point["class_name"] = snap->class_names[cls];
        point["confidence"] = snap->assignment.confidence[*idx];
      }
      return json_response(200, {{"point", point}, {"neighbors", neighbors},
                                 {"class_set_version", snap->version()}});
    }

    if (action == "search" && parts.size() == 4 && post) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        api_fail(400, "invalid_request", e.what());
      }
      long long k = static_cast<long long>(config_.default_k);
      if (body.contains("k")) {
        if (!body["k"].is_number_integer()) api_fail(400, "k_out_of_range", "k must be an integer");
        k = body["k"].get<long long>();
      }
      const std::size_t kk = checked_k(k, config_.max_k);
      const int given = static_cast<int>(body.contains("text")) + static_cast<int>(body.contains("embedding")) +
                        static_cast<int>(body.contains("audio_base64"));
      if (given != 1) {
        api_fail(400, "invalid_query", "give exactly one of 'text', 'embedding' or 'audio_base64'");
      }
      std::vector<float> q;
      std::string modality;
      try {
        if (body.contains("text")) {
          modality = "text";
          q = embed_text_query(*snap, body["text"].get<std::string>());
        } else if (body.contains("embedding")) {
          modality = "embedding";
          auto raw = body["embedding"].get<std::vector<float>>();
          if (raw.size() != snap->matrix->dim()) {
            api_fail(400, "dimension_mismatch", "embedding has dim " + std::to_string(raw.size()) +
                                                    ", dataset dim " + std::to_string(snap->matrix->dim()));
          }
          double sq = 0.0;
          for (float v : raw) {
            if (!std::isfinite(v)) api_fail(400, "invalid_query", "embedding has a non-finite component");
            sq += static_cast<double>(v) * v;
          }
          if (sq == 0.0) api_fail(400, "invalid_query", "embedding must be non-zero");
          for (float& v : raw) v = static_cast<float>(v / std::sqrt(sq));
          q = std::move(raw);
        } else {
          modality = "audio";
          const auto encoded = body["audio_base64"].get<std::string>();
          if (encoded.size() / 4 * 3 > config_.max_upload_bytes + 3) {
            api_fail(413, "payload_too_large", "audio payload exceeds the upload limit");
          }
          q = embed_audio_query(*snap, base64_decode(encoded), body.value("format", std::string{}));
        }
      } catch (const json::exception& e) {
        api_fail(400, "invalid_query", e.what());
      }
      const auto results = semantic_search(*snap, q, kk);
      return json_response(200, {{"results", results}, {"modality", modality},
                                  {"class_set_version", snap->version()}});
    }

    if (action == "classify" && parts.size() == 4 && post) {
      json body;
      std::vector<std::string> names;
      std::string tmpl = config_.prompt_template;
      try {
        body = json::parse(req.body);
        names = body.at("class_names").get<std::vector<std::string>>();
        if (body.contains("prompt_template")) tmpl = body["prompt_template"].get<std::string>();
      } catch (const json::exception& e) {
        api_fail(400, "invalid_request", e.what());
      }
      if (names.empty()) api_fail(400, "invalid_request", "class_names must not be empty");
      if (names.size() > zeroshot::kMaxClasses) {
        api_fail(400, "too_many_classes", "at most " + std::to_string(zeroshot::kMaxClasses) + " classes");
      }
      const auto version = reclassify(name, names, tmpl);
      return json_response(200, {{"class_set_version", version}, {"class_names", names}});
    }

    if (action == "labels" && parts.size() == 4 && get) {
      json items = json::array();
      for (const auto& l : snap->labels) items.push_back(label_json(l));
      auto body = page(items, req);
      body["class_set_version"] = snap->version();
      return json_response(200, body);
    }

    if (action == "verify" && parts.size() == 4 && get) {
      const auto problems = verify_snapshot(*snap);
      return json_response(200, {{"consistent", problems.empty()}, {"problems", problems},
                                 {"class_set_version", snap->version()}});
    }

    api_fail(404, "not_found", "no route for " + req.method + " " + req.path);
  } catch (const ApiError& e) {
    return error_response(e.status, e.code, e.message);
  } catch (const AtlasError& e) {
    return from_atlas_error(e);
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

}  // namespace atlas::service
