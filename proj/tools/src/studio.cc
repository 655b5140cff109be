#include "studio.h"

#include <chrono>
#include <cstdio>

#include <httplib.h>
#include <openssl/evp.h>
#include <nlohmann/json.hpp>

#include "tool_io.h"

namespace fpgs::studio {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

Response json_response(int status, const json& body) { return {status, "application/json", body.dump(), {}}; }
Response error_response(int status, const std::string& message) { return json_response(status, {{"error", message}}); }

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Maps exceptions from request parsing and the engine onto HTTP statuses.
template <class Fn>
Response guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    return error_response(400, std::string("malformed request: ") + e.what());
  } catch (const ValidationError& e) {
    return error_response(400, e.what());
  } catch (const FormatError& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

json parse_body(const std::string& body) {
  json j = json::parse(body.empty() ? std::string("{}") : body);
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  return j;
}

template <class T>
T value_or(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

std::vector<Stroke> parse_strokes(const json& j) {
  std::vector<Stroke> strokes;
  if (!j.contains("strokes")) return strokes;
  if (!j.at("strokes").is_array()) throw ValidationError("'strokes' must be an array");
  for (const auto& s : j.at("strokes")) {
    Stroke stroke;
    for (const auto& p : s.at("path")) stroke.path.emplace_back(p.at(0).get<float>(), p.at(1).get<float>());
    if (stroke.path.empty()) throw ValidationError("stroke path is empty");
    const auto& c = s.at("color");
    if (!c.is_array() || c.size() != 3) throw ValidationError("stroke color must hold 3 numbers");
    stroke.color = {c.at(0).get<float>(), c.at(1).get<float>(), c.at(2).get<float>()};
    stroke.radius = value_or(s, "radius", stroke.radius);
    if (!(stroke.radius > 0.0f)) throw ValidationError("stroke radius must be > 0");
    strokes.push_back(std::move(stroke));
  }
  return strokes;
}

StylizeConfig parse_config(const json& j, const StudioOptions& o) {
  StylizeConfig cfg;
  cfg.clusters = value_or(j, "clusters", o.default_clusters);
  cfg.iterations = value_or(j, "iterations", o.default_iterations);
  cfg.temperature = value_or(j, "tau", o.default_tau);
  cfg.normalize_keys = value_or(j, "normalize_keys", false);
  cfg.sh_zero_rest = value_or(j, "sh_zero_rest", false);
  cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

float segment_distance(const Eigen::Vector2f& p, const Eigen::Vector2f& a, const Eigen::Vector2f& b) {
  const Eigen::Vector2f ab = b - a;
  const float len2 = ab.squaredNorm();
  const float t = len2 > 0.0f ? std::clamp((p - a).dot(ab) / len2, 0.0f, 1.0f) : 0.0f;
  return (p - (a + t * ab)).norm();
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string base64_decode(const std::string& text) {
  std::string clean;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  }
  if (clean.size() % 4 != 0) throw ValidationError("base64 payload has a bad length");
  std::string out(clean.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) throw ValidationError("invalid base64 payload");
  size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<size_t>(n) - pad);
  return out;
}

std::string base64_encode(const std::string& bytes) {
  std::string out((bytes.size() + 2) / 3 * 4 + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

FeatureMap paint_strokes(FeatureMap image, const std::vector<Stroke>& strokes) {
  const auto w = static_cast<float>(image.width);
  const auto h = static_cast<float>(image.height);
  for (const auto& s : strokes) {
    const float r = s.radius * w;
    std::vector<Eigen::Vector2f> pts;
    for (const auto& p : s.path) pts.emplace_back(p.x() * w, p.y() * h);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        const Eigen::Vector2f c(static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f);
        float d = (c - pts.front()).norm();
        for (size_t i = 1; i < pts.size(); ++i) d = std::min(d, segment_distance(c, pts[i - 1], pts[i]));
        if (d > r || image.channels < 3) continue;
        for (int k = 0; k < 3; ++k) image.at(y, x, k) = s.color[k];
      }
    }
  }
  return image;
}

Studio::Studio(std::vector<RawGaussianRecord> records, GaussianScene scene, StyleNetworks networks,
               std::vector<ReferenceBundle> references, StudioOptions options)
    : records_(std::move(records)),
      networks_(std::move(networks)),
      references_(std::move(references)),
      options_(options) {
  if (records_.size() != scene.size()) throw ValidationError("studio: records and scene differ in size");
  scene.validate();
  original_id_ = store(std::move(scene), std::nullopt)->id;
  current_id_ = original_id_;
}

std::string Studio::hash_scene(const GaussianScene& scene) const {
  const auto bytes = serialize_gaussian_ply(overlay_sh(records_, scene));
  return sha256_hex(std::string(bytes.begin(), bytes.end()));
}

std::shared_ptr<const Snapshot> Studio::store(GaussianScene scene, std::optional<StyleAssignment> assignment) {
  auto snap = std::make_shared<Snapshot>();
  snap->id = hash_scene(scene);
  snap->scene = std::move(scene);
  snap->assignment = std::move(assignment);
  std::lock_guard lock(store_mutex_);
  auto& slot = snapshots_[snap->id];
  if (!slot || snap->assignment) slot = snap;
  return slot;
}

std::shared_ptr<const Snapshot> Studio::resolve(const std::string& id) const {
  std::lock_guard lock(store_mutex_);
  const auto it = snapshots_.find(id.empty() ? current_id_ : id);
  return it == snapshots_.end() ? nullptr : it->second;
}

std::shared_ptr<const Snapshot> Studio::snapshot(const std::string& id) const { return resolve(id); }

std::string Studio::current_id() const {
  std::lock_guard lock(store_mutex_);
  return current_id_;
}

void Studio::begin_job() {
  std::lock_guard lock(progress_mutex_);
  progress_.clear();
  job_running_ = true;
}

void Studio::log_progress(const std::string& line) {
  {
    std::lock_guard lock(progress_mutex_);
    progress_.push_back(line);
  }
  progress_cv_.notify_all();
}

void Studio::end_job() {
  {
    std::lock_guard lock(progress_mutex_);
    job_running_ = false;
  }
  progress_cv_.notify_all();
}

std::vector<std::string> Studio::progress_since(size_t from, bool& done) const {
  std::unique_lock lock(progress_mutex_);
  progress_cv_.wait_for(lock, std::chrono::milliseconds(500),
                        [&] { return progress_.size() > from || !job_running_; });
  done = !job_running_;
  if (from >= progress_.size()) return {};
  return {progress_.begin() + static_cast<long>(from), progress_.end()};
}

Response Studio::scene_info() const {
  const auto snap = resolve("");
  Eigen::Vector3f lo = Eigen::Vector3f::Constant(std::numeric_limits<float>::infinity());
  Eigen::Vector3f hi = -lo;
  for (const auto& p : snap->scene.prims) {
    lo = lo.cwiseMin(p.position);
    hi = hi.cwiseMax(p.position);
  }
  if (snap->scene.prims.empty()) lo = hi = Eigen::Vector3f::Zero();
  json refs = json::array();
  for (size_t i = 0; i < references_.size(); ++i) refs.push_back(i);
  return json_response(200, {{"gaussian_count", snap->scene.size()},
                             {"bbox", {{"min", {lo.x(), lo.y(), lo.z()}}, {"max", {hi.x(), hi.y(), hi.z()}}}},
                             {"has_semantic", snap->scene.has_semantic()},
                             {"snapshot_id", snap->id},
                             {"original_id", original_id_},
                             {"ref_ids", refs}});
}

Response Studio::render(const std::string& body) const {
  return guarded([&] {
    const json j = parse_body(body);
    const Camera cam = tools::camera_from_json(j.at("camera"));
    const auto snap = resolve(value_or<std::string>(j, "snapshot_id", ""));
    if (!snap) return error_response(404, "unknown snapshot");
    const bool zero_rest = value_or(j, "sh_zero_rest", false);
    const FeatureMap img =
        rasterize_color(zero_rest ? without_view_dependence(snap->scene) : snap->scene, cam);
    const auto png = encode_png(img);
    Response r{200, "image/png", std::string(png.begin(), png.end()), {}};
    r.headers["X-Snapshot-Id"] = snap->id;
    return r;
  });
}

Response Studio::stylize(const std::string& body) {
  return guarded([&]() -> Response {
    const json j = parse_body(body);
    const StylizeConfig cfg = parse_config(j, options_);
    const auto base = resolve(value_or<std::string>(j, "snapshot_id", original_id_));
    if (!base) return error_response(404, "unknown snapshot");
    if (!base->scene.has_semantic()) return error_response(422, "scene has no semantic field");

    std::vector<ReferenceBundle> refs;
    for (const auto& id : value_or(j, "ref_ids", json::array())) {
      const auto i = id.get<int64_t>();
      if (i < 0 || static_cast<size_t>(i) >= references_.size()) return error_response(404, "unknown reference id");
      refs.push_back(references_[static_cast<size_t>(i)]);
    }
    for (const auto& upload : value_or(j, "refs", json::array())) {
      if (!networks_.vgg) return error_response(400, "service has no VGG weights for uploaded references");
      const std::string png = base64_decode(upload.at("image").get<std::string>());
      const std::string tf = base64_decode(upload.at("semantic").get<std::string>());
      FeatureMap image = decode_png(std::span(reinterpret_cast<const uint8_t*>(png.data()), png.size()));
      FeatureMap semantic = parse_tensor_file(std::span(reinterpret_cast<const uint8_t*>(tf.data()), tf.size()))
                                .feature_map("semantic");
      refs.push_back(make_reference_bundle(std::move(image), std::move(semantic), *networks_.vgg));
    }
    if (refs.empty()) return error_response(400, "no references given");

    std::unique_lock lock(mutation_mutex_, std::try_to_lock);
    if (!lock.owns_lock()) return error_response(409, "stylization already in progress");
    begin_job();
    const auto start = Clock::now();
    try {
      auto progress = [&](const std::string& stage, double fraction) {
        log_progress(json{{"stage", stage}, {"fraction", fraction}, {"ms", ms_since(start)}}.dump());
      };
      StylizeResult result = stylize_scene(base->scene, refs, networks_, cfg, progress);
      const double stylize_ms = ms_since(start);
      const size_t entries = result.dictionary.size();
      const auto snap = store(std::move(result.scene), std::move(result.assignment));
      {
        std::lock_guard store_lock(store_mutex_);
        current_id_ = snap->id;
      }
      end_job();
      return json_response(200, {{"snapshot_id", snap->id},
                                  {"entries", entries},
                                  {"timings", {{"stylize_ms", stylize_ms}, {"total_ms", ms_since(start)}}}});
    } catch (...) {
      end_job();
      throw;
    }
  });
}

Response Studio::scribble(const std::string& body) {
  return guarded([&]() -> Response {
    const json j = parse_body(body);
    const StylizeConfig cfg = parse_config(j, options_);
    const Camera cam = tools::camera_from_json(j.at("camera"));
    const auto strokes = parse_strokes(j);
    const auto base = resolve(value_or<std::string>(j, "snapshot_id", ""));
    if (!base) return error_response(404, "unknown snapshot");
    if (!base->scene.has_semantic()) return error_response(422, "scene has no semantic field");
    if (!networks_.vgg) return error_response(400, "service has no VGG weights");
    if (cam.width % 2 || cam.height % 2 || cam.width < 8 || cam.height < 8) {
      return error_response(400, "scribble camera needs even width and height >= 8");
    }

    std::unique_lock lock(mutation_mutex_, std::try_to_lock);
    if (!lock.owns_lock()) return error_response(409, "stylization already in progress");
    begin_job();
    const auto start = Clock::now();
    try {
      auto progress = [&](const std::string& stage, double fraction) {
        log_progress(json{{"stage", stage}, {"fraction", fraction}, {"ms", ms_since(start)}}.dump());
      };
      const FeatureMap rendered = rasterize_color(base->scene, cam);
      const FeatureMap scribbled = paint_strokes(rendered, strokes);
      const FeatureMap semantic = render_semantic_map(base->scene, cam, networks_.autoencoder);
      StyleDictionary dict =
          build_scribble_dictionary(semantic, vgg_slice_forward(scribbled, *networks_.vgg), cfg.clusters, cfg.seed);
      StylizeResult result = stylize_with_dictionary(base->scene, std::move(dict), networks_, cfg, progress);
      const auto snap = store(std::move(result.scene), std::move(result.assignment));
      {
        std::lock_guard store_lock(store_mutex_);
        current_id_ = snap->id;
      }
      end_job();
      return json_response(200, {{"snapshot_id", snap->id}, {"timings", {{"total_ms", ms_since(start)}}}});
    } catch (...) {
      end_job();
      throw;
    }
  });
}

Response Studio::heatmap(const std::map<std::string, std::string>& params) const {
  return guarded([&]() -> Response {
    const auto entry_it = params.find("entry");
    const auto cam_it = params.find("camera");
    if (entry_it == params.end() || cam_it == params.end()) {
      return error_response(400, "heatmap needs 'entry' and 'camera' parameters");
    }
    int entry = 0;
    try {
      entry = std::stoi(entry_it->second);
    } catch (const std::exception&) {
      return error_response(400, "'entry' must be an integer");
    }
    const Camera cam = tools::camera_from_json(json::parse(cam_it->second));
    const auto id_it = params.find("snapshot_id");
    const auto snap = resolve(id_it == params.end() ? "" : id_it->second);
    if (!snap) return error_response(404, "unknown snapshot");
    if (!snap->assignment) return error_response(404, "snapshot has no attention; stylize first");
    const auto png = encode_png(attention_heatmap(*snap->assignment, snap->scene, cam, entry));
    Response r{200, "image/png", std::string(png.begin(), png.end()), {}};
    r.headers["X-Snapshot-Id"] = snap->id;
    return r;
  });
}

Response Studio::reset() {
  std::unique_lock lock(mutation_mutex_, std::try_to_lock);
  if (!lock.owns_lock()) return error_response(409, "stylization already in progress");
  std::lock_guard store_lock(store_mutex_);
  current_id_ = original_id_;
  return json_response(200, {{"snapshot_id", original_id_}});
}

Response Studio::export_ply(const std::string& body) const {
  return guarded([&]() -> Response {
    const json j = parse_body(body);
    const auto snap = resolve(value_or<std::string>(j, "snapshot_id", ""));
    if (!snap) return error_response(404, "unknown snapshot");
    const auto bytes = serialize_gaussian_ply(overlay_sh(records_, snap->scene));
    Response r{200, "application/octet-stream", std::string(bytes.begin(), bytes.end()), {}};
    r.headers["X-Snapshot-Id"] = snap->id;
    return r;
  });
}

void Studio::mount(httplib::Server& server, const std::filesystem::path& static_dir) {
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_content(r.body, r.content_type);
  };
  server.Get("/api/scene", [this, send](const httplib::Request&, httplib::Response& res) { send(res, scene_info()); });
  server.Post("/api/render",
              [this, send](const httplib::Request& req, httplib::Response& res) { send(res, render(req.body)); });
  server.Post("/api/stylize",
              [this, send](const httplib::Request& req, httplib::Response& res) { send(res, stylize(req.body)); });
  server.Post("/api/scribble",
              [this, send](const httplib::Request& req, httplib::Response& res) { send(res, scribble(req.body)); });
  server.Get("/api/heatmap", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> params;
    for (const auto& [k, v] : req.params) params[k] = v;
    send(res, heatmap(params));
  });
  server.Post("/api/reset", [this, send](const httplib::Request&, httplib::Response& res) { send(res, reset()); });
  server.Post("/api/export",
              [this, send](const httplib::Request& req, httplib::Response& res) { send(res, export_ply(req.body)); });
  server.Get("/api/stylize/progress", [this](const httplib::Request&, httplib::Response& res) {
    auto from = std::make_shared<size_t>(0);
    res.set_chunked_content_provider("text/event-stream", [this, from](size_t, httplib::DataSink& sink) {
      bool done = false;
      const auto lines = progress_since(*from, done);
      for (const auto& line : lines) {
        const std::string event = "data: " + line + "\n\n";
        if (!sink.write(event.data(), event.size())) return false;
      }
      *from += lines.size();
      if (done) {
        const std::string end = "event: done\ndata: {}\n\n";
        sink.write(end.data(), end.size());
        sink.done();
      }
      return true;
    });
  });
  if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) {
    server.set_mount_point("/", static_dir.string());
  }
}

}  // namespace fpgs::studio
