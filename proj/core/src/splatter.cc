#include "fpgs/splatter.h"

#include <numeric>
#include <string>

#include "raster_core.h"

namespace fpgs {

void Camera::validate() const {
  if (!(fx > 0.0f && fy > 0.0f)) throw ValidationError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ValidationError("camera image size must be positive");
  if (!(near_plane > 0.0f && near_plane < far_plane)) throw ValidationError("camera requires 0 < near < far");
  if (!rotation.allFinite() || !translation.allFinite()) throw ValidationError("camera pose is not finite");
  const Eigen::Matrix3f err = rotation * rotation.transpose() - Eigen::Matrix3f::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-5f) throw ValidationError("camera rotation is not orthonormal");
}

Camera look_at(const Eigen::Vector3f& eye, const Eigen::Vector3f& target, const Eigen::Vector3f& up, float focal,
               int width, int height, float near_plane, float far_plane) {
  const Eigen::Vector3f forward = (target - eye).normalized();
  const Eigen::Vector3f right = ((-up).cross(forward)).normalized();
  const Eigen::Vector3f down = forward.cross(right);
  Camera cam;
  cam.fx = cam.fy = focal;
  cam.width = width;
  cam.height = height;
  cam.cx = 0.5f * static_cast<float>(width);
  cam.cy = 0.5f * static_cast<float>(height);
  cam.rotation.row(0) = right;
  cam.rotation.row(1) = down;
  cam.rotation.row(2) = forward;
  cam.translation = -cam.rotation * eye;
  cam.near_plane = near_plane;
  cam.far_plane = far_plane;
  return cam;
}

std::optional<Splat2D> project_gaussian(const GaussianPrim& prim, const Camera& camera, uint32_t index,
                                        const RasterConfig& config) {
  const Eigen::Vector3f pc = camera.to_camera(prim.position);
  const float z = pc.z();
  if (!(z > camera.near_plane && z < camera.far_plane)) return std::nullopt;

  const float inv_z = 1.0f / z;
  Splat2D s;
  s.mean = {camera.fx * pc.x() * inv_z + camera.cx, camera.fy * pc.y() * inv_z + camera.cy};
  s.depth = z;
  s.index = index;

  // Jacobian taken at the point clamped to 1.3x the half frustum.
  const float lim_x = 1.3f * 0.5f * static_cast<float>(camera.width) / camera.fx;
  const float lim_y = 1.3f * 0.5f * static_cast<float>(camera.height) / camera.fy;
  const float tx = std::clamp(pc.x() * inv_z, -lim_x, lim_x) * z;
  const float ty = std::clamp(pc.y() * inv_z, -lim_y, lim_y) * z;
  Eigen::Matrix<float, 2, 3> jac;
  jac << camera.fx * inv_z, 0.0f, -camera.fx * tx * inv_z * inv_z,  //
      0.0f, camera.fy * inv_z, -camera.fy * ty * inv_z * inv_z;
  const Eigen::Matrix<float, 2, 3> t = jac * camera.rotation;
  s.cov = t * covariance(prim) * t.transpose();
  s.cov(0, 1) = s.cov(1, 0) = 0.5f * (s.cov(0, 1) + s.cov(1, 0));
  s.cov(0, 0) += config.blur;
  s.cov(1, 1) += config.blur;

  const float ext_x = config.cutoff_sigma * std::sqrt(s.cov(0, 0));
  const float ext_y = config.cutoff_sigma * std::sqrt(s.cov(1, 1));
  if (s.mean.x() + ext_x < 0.0f || s.mean.x() - ext_x > static_cast<float>(camera.width) ||
      s.mean.y() + ext_y < 0.0f || s.mean.y() - ext_y > static_cast<float>(camera.height)) {
    return std::nullopt;
  }
  return s;
}

namespace detail {

SplatBins bin_splats(const GaussianScene& scene, const Camera& camera, const RasterConfig& config) {
  camera.validate();
  SplatBins bins;
  bins.width = camera.width;
  bins.height = camera.height;
  bins.tiles_x = (camera.width + kTileSize - 1) / kTileSize;
  bins.tiles_y = (camera.height + kTileSize - 1) / kTileSize;

  const size_t n = scene.size();
  std::vector<ProjectedSplat> projected(n);
  std::vector<uint8_t> keep(n, 0);
  const size_t chunks = (n + kRowChunk - 1) / kRowChunk;
  parallel_for(chunks, [&](size_t chunk) {
    const size_t end = std::min(n, (chunk + 1) * kRowChunk);
    for (size_t i = chunk * kRowChunk; i < end; ++i) {
      const auto& prim = scene.prims[i];
      if (!(prim.opacity > 0.0f)) continue;
      const auto s = project_gaussian(prim, camera, static_cast<uint32_t>(i), config);
      if (!s) continue;
      const float det = s->cov.determinant();
      if (!(det > 0.0f)) continue;
      ProjectedSplat& p = projected[i];
      p.mean_x = s->mean.x();
      p.mean_y = s->mean.y();
      p.conic_a = s->cov(1, 1) / det;
      p.conic_b = -s->cov(0, 1) / det;
      p.conic_c = s->cov(0, 0) / det;
      p.opacity = prim.opacity;
      p.depth = s->depth;
      p.index = static_cast<uint32_t>(i);
      const float ext_x = config.cutoff_sigma * std::sqrt(s->cov(0, 0));
      const float ext_y = config.cutoff_sigma * std::sqrt(s->cov(1, 1));
      p.tile_x0 = std::clamp(static_cast<int>(std::floor((p.mean_x - ext_x) / kTileSize)), 0, bins.tiles_x);
      p.tile_x1 = std::clamp(static_cast<int>(std::floor((p.mean_x + ext_x) / kTileSize)) + 1, 0, bins.tiles_x);
      p.tile_y0 = std::clamp(static_cast<int>(std::floor((p.mean_y - ext_y) / kTileSize)), 0, bins.tiles_y);
      p.tile_y1 = std::clamp(static_cast<int>(std::floor((p.mean_y + ext_y) / kTileSize)) + 1, 0, bins.tiles_y);
      if (p.tile_x0 < p.tile_x1 && p.tile_y0 < p.tile_y1) keep[i] = 1;
    }
  });

  bins.splats.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (keep[i]) bins.splats.push_back(projected[i]);
  }
  std::sort(bins.splats.begin(), bins.splats.end(), [](const ProjectedSplat& a, const ProjectedSplat& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
  });

  const size_t tile_count = static_cast<size_t>(bins.tiles_x) * bins.tiles_y;
  bins.tile_offsets.assign(tile_count + 1, 0);
  for (const auto& s : bins.splats) {
    for (int ty = s.tile_y0; ty < s.tile_y1; ++ty) {
      for (int tx = s.tile_x0; tx < s.tile_x1; ++tx) ++bins.tile_offsets[static_cast<size_t>(ty) * bins.tiles_x + tx + 1];
    }
  }
  std::partial_sum(bins.tile_offsets.begin(), bins.tile_offsets.end(), bins.tile_offsets.begin());
  bins.tile_items.resize(bins.tile_offsets.back());
  std::vector<uint32_t> cursor(bins.tile_offsets.begin(), bins.tile_offsets.end() - 1);
  for (uint32_t k = 0; k < bins.splats.size(); ++k) {
    const auto& s = bins.splats[k];
    for (int ty = s.tile_y0; ty < s.tile_y1; ++ty) {
      for (int tx = s.tile_x0; tx < s.tile_x1; ++tx) {
        bins.tile_items[cursor[static_cast<size_t>(ty) * bins.tiles_x + tx]++] = k;
      }
    }
  }
  return bins;
}

}  // namespace detail

namespace {

struct FeatureAccumulator {
  const float* features;
  int channels;
  const float* background;
  float* out;
  float* alpha;
  float* px = nullptr;
  float acc = 0.0f;

  void begin(size_t pixel) {
    px = out + pixel * channels;
    acc = 0.0f;
  }
  void add(uint32_t prim, float w, const detail::ProjectedSplat&) {
    const float* f = features + static_cast<size_t>(prim) * channels;
    for (int c = 0; c < channels; ++c) px[c] += w * f[c];
    acc += w;
  }
  void end(size_t pixel, float transmittance) {
    if (background) {
      for (int c = 0; c < channels; ++c) px[c] += transmittance * background[c];
    }
    alpha[pixel] = acc;
  }
};

}  // namespace

FeatureRender rasterize_features(const GaussianScene& scene, const Camera& camera, const MatrixRM& features,
                                 const RasterConfig& config, std::span<const float> background) {
  if (static_cast<size_t>(features.rows()) != scene.size()) {
    throw ValidationError("rasterize_features: " + std::to_string(features.rows()) + " feature rows for " +
                          std::to_string(scene.size()) + " prims");
  }
  if (features.cols() < 1) throw ValidationError("rasterize_features: need at least one channel");
  if (!background.empty() && static_cast<Eigen::Index>(background.size()) != features.cols()) {
    throw ValidationError("rasterize_features: background size does not match channel count");
  }
  const int channels = static_cast<int>(features.cols());
  const auto bins = detail::bin_splats(scene, camera, config);
  FeatureRender out{FeatureMap(camera.height, camera.width, channels), FeatureMap(camera.height, camera.width, 1)};
  detail::traverse(bins, config, [&](size_t) {
    return FeatureAccumulator{features.data(), channels, background.empty() ? nullptr : background.data(),
                              out.features.data.data(), out.alpha.data.data()};
  });
  return out;
}

MatrixRM view_colors(const GaussianScene& scene, const Camera& camera) {
  const Eigen::Vector3f eye = camera.center();
  MatrixRM colors(static_cast<Eigen::Index>(scene.size()), 3);
  const size_t n = scene.size();
  parallel_for((n + kRowChunk - 1) / kRowChunk, [&](size_t chunk) {
    const size_t end = std::min(n, (chunk + 1) * kRowChunk);
    for (size_t i = chunk * kRowChunk; i < end; ++i) {
      const auto& g = scene.prims[i];
      Eigen::Vector3f dir = g.position - eye;
      const float len = dir.norm();
      dir = len > 0.0f ? Eigen::Vector3f(dir / len) : Eigen::Vector3f(0.0f, 0.0f, 1.0f);
      colors.row(static_cast<Eigen::Index>(i)) = sh_color(g.sh, dir, scene.sh_offset_enabled).transpose();
    }
  });
  return colors;
}

FeatureMap rasterize_color(const GaussianScene& scene, const Camera& camera, const RasterConfig& config) {
  const std::array<float, 3> bg = {scene.background.x(), scene.background.y(), scene.background.z()};
  return rasterize_features(scene, camera, view_colors(scene, camera), config, bg).features;
}

namespace {

struct DepthAccumulator {
  float* depth;
  float* alpha;
  float acc = 0.0f;
  float weighted = 0.0f;

  void begin(size_t) { acc = weighted = 0.0f; }
  void add(uint32_t, float w, const detail::ProjectedSplat& s) {
    acc += w;
    weighted += w * s.depth;
  }
  void end(size_t pixel, float) {
    alpha[pixel] = acc;
    depth[pixel] = acc > 0.0f ? weighted / acc : 0.0f;
  }
};

struct WeightCollector {
  struct Entry {
    uint32_t pixel;
    uint32_t prim;
    float weight;
  };
  std::vector<Entry>* entries;
  uint32_t pixel = 0;

  void begin(size_t p) { pixel = static_cast<uint32_t>(p); }
  void add(uint32_t prim, float w, const detail::ProjectedSplat&) { entries->push_back({pixel, prim, w}); }
  void end(size_t, float) {}
};

}  // namespace

DepthRender rasterize_depth(const GaussianScene& scene, const Camera& camera, const RasterConfig& config) {
  const auto bins = detail::bin_splats(scene, camera, config);
  DepthRender out{FeatureMap(camera.height, camera.width, 1), FeatureMap(camera.height, camera.width, 1), {}};
  detail::traverse(bins, config,
                   [&](size_t) { return DepthAccumulator{out.depth.data.data(), out.alpha.data.data()}; });
  out.valid.resize(out.depth.pixel_count());
  for (size_t p = 0; p < out.valid.size(); ++p) {
    out.valid[p] = out.alpha.data[p] >= config.depth_alpha_threshold ? 1 : 0;
    if (!out.valid[p]) out.depth.data[p] = 0.0f;
  }
  return out;
}

CompositeWeights composite_weights(const GaussianScene& scene, const Camera& camera, const RasterConfig& config) {
  const auto bins = detail::bin_splats(scene, camera, config);
  const size_t tile_count = static_cast<size_t>(bins.tiles_x) * bins.tiles_y;
  std::vector<std::vector<WeightCollector::Entry>> per_tile(tile_count);
  detail::traverse(bins, config, [&](size_t tile) { return WeightCollector{&per_tile[tile]}; });

  CompositeWeights w;
  w.height = camera.height;
  w.width = camera.width;
  w.offsets.assign(w.pixel_count() + 1, 0);
  for (const auto& tile : per_tile) {
    for (const auto& e : tile) ++w.offsets[e.pixel + 1];
  }
  std::partial_sum(w.offsets.begin(), w.offsets.end(), w.offsets.begin());
  w.prims.resize(w.offsets.back());
  w.weights.resize(w.offsets.back());
  std::vector<uint32_t> cursor(w.offsets.begin(), w.offsets.end() - 1);
  for (const auto& tile : per_tile) {
    for (const auto& e : tile) {
      const uint32_t slot = cursor[e.pixel]++;
      w.prims[slot] = e.prim;
      w.weights[slot] = e.weight;
    }
  }
  return w;
}

}  // namespace fpgs
