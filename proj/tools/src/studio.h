#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fpgs/scene.h"
#include "fpgs/style_dictionary.h"
#include "fpgs/stylizer.h"

namespace httplib {
class Server;
}

namespace fpgs::studio {

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Immutable scene version. Ids are the SHA-256 of the serialized Gaussian payload.
struct Snapshot {
  std::string id;
  GaussianScene scene;
  std::optional<StyleAssignment> assignment;
};

struct StudioOptions {
  uint64_t seed = 0;
  int default_clusters = 10;
  int default_iterations = 2;
  float default_tau = 1.0f;
};

/// Engine state behind the HTTP endpoints. Handlers are safe to call concurrently;
/// stylize, scribble and reset share one mutation lock and answer 409 when it is held.
class Studio {
 public:
  Studio(std::vector<RawGaussianRecord> records, GaussianScene scene, StyleNetworks networks,
         std::vector<ReferenceBundle> references = {}, StudioOptions options = {});

  Response scene_info() const;
  Response render(const std::string& body) const;
  Response stylize(const std::string& body);
  Response scribble(const std::string& body);
  Response heatmap(const std::map<std::string, std::string>& params) const;
  Response reset();
  Response export_ply(const std::string& body) const;

  /// Progress lines of the current or most recent job. Blocks until at least `from`
  /// lines exist or the job finishes; `done` reports whether the job has finished.
  std::vector<std::string> progress_since(size_t from, bool& done) const;

  std::string current_id() const;
  std::string original_id() const { return original_id_; }
  std::shared_ptr<const Snapshot> snapshot(const std::string& id) const;

  /// Registers the handlers (and a static mount when the directory exists).
  void mount(httplib::Server& server, const std::filesystem::path& static_dir = {});

 private:
  std::shared_ptr<const Snapshot> store(GaussianScene scene, std::optional<StyleAssignment> assignment);
  std::shared_ptr<const Snapshot> resolve(const std::string& id) const;
  std::string hash_scene(const GaussianScene& scene) const;
  void begin_job();
  void log_progress(const std::string& line);
  void end_job();

  std::vector<RawGaussianRecord> records_;
  StyleNetworks networks_;
  std::vector<ReferenceBundle> references_;
  StudioOptions options_;
  std::string original_id_;

  mutable std::mutex store_mutex_;
  std::map<std::string, std::shared_ptr<const Snapshot>> snapshots_;
  std::string current_id_;

  std::mutex mutation_mutex_;

  mutable std::mutex progress_mutex_;
  mutable std::condition_variable progress_cv_;
  std::vector<std::string> progress_;
  bool job_running_ = false;
};

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);
std::string base64_decode(const std::string& text);
std::string base64_encode(const std::string& bytes);

/// Paints strokes (normalized [0,1]^2 paths, radius as a fraction of the image width)
/// over an RGB image.
struct Stroke {
  std::vector<Eigen::Vector2f> path;
  Eigen::Vector3f color = Eigen::Vector3f::Zero();
  float radius = 0.02f;
};
FeatureMap paint_strokes(FeatureMap image, const std::vector<Stroke>& strokes);

}  // namespace fpgs::studio
