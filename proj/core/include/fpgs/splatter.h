#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fpgs/common.h"
#include "fpgs/scene.h"

namespace fpgs {

/// Pinhole camera with a world-to-camera rigid transform. Camera space is x right,
/// y down, z forward. Pixel (x, y) has its center at (x + 0.5, y + 0.5).
struct Camera {
  float fx = 1.0f;
  float fy = 1.0f;
  float cx = 0.0f;
  float cy = 0.0f;
  int width = 1;
  int height = 1;
  Eigen::Matrix3f rotation = Eigen::Matrix3f::Identity();
  Eigen::Vector3f translation = Eigen::Vector3f::Zero();
  float near_plane = 0.01f;
  float far_plane = 1000.0f;

  void validate() const;
  Eigen::Vector3f to_camera(const Eigen::Vector3f& world) const { return rotation * world + translation; }
  Eigen::Vector3f center() const { return -rotation.transpose() * translation; }
  bool operator==(const Camera&) const = default;
};

/// Camera at `eye` looking at `target`; `up` is the world up hint (image y points away from it).
Camera look_at(const Eigen::Vector3f& eye, const Eigen::Vector3f& target, const Eigen::Vector3f& up, float focal,
               int width, int height, float near_plane = 0.01f, float far_plane = 1000.0f);

struct RasterConfig {
  float alpha_clamp = 0.99f;
  float min_transmittance = 1e-4f;
  float blur = 0.3f;          // px^2 added to every projected covariance
  float cutoff_sigma = 3.0f;  // footprint radius in standard deviations
  float depth_alpha_threshold = 0.5f;
};

inline constexpr int kTileSize = 16;

struct Splat2D {
  Eigen::Vector2f mean;
  Eigen::Matrix2f cov;
  float depth = 0.0f;
  uint32_t index = 0;
};

/// EWA projection. Returns nothing when the depth is outside (near, far) or the
/// footprint misses the image.
std::optional<Splat2D> project_gaussian(const GaussianPrim& prim, const Camera& camera, uint32_t index = 0,
                                        const RasterConfig& config = {});

struct FeatureRender {
  FeatureMap features;  // H x W x C
  FeatureMap alpha;     // H x W x 1, accumulated compositing weight
};

/// Composites per-prim features front to back. `background` (C values or empty for zero)
/// is added with the residual transmittance.
FeatureRender rasterize_features(const GaussianScene& scene, const Camera& camera, const MatrixRM& features,
                                 const RasterConfig& config = {}, std::span<const float> background = {});

/// Per-prim colors evaluated at the per-Gaussian viewing direction.
MatrixRM view_colors(const GaussianScene& scene, const Camera& camera);

/// RGB render over the scene background.
FeatureMap rasterize_color(const GaussianScene& scene, const Camera& camera, const RasterConfig& config = {});

struct DepthRender {
  FeatureMap depth;  // normalized expected camera-z; 0 where invalid
  FeatureMap alpha;
  std::vector<uint8_t> valid;  // alpha >= depth_alpha_threshold

  bool is_valid(int y, int x) const { return valid[static_cast<size_t>(y) * depth.width + x] != 0; }
};

DepthRender rasterize_depth(const GaussianScene& scene, const Camera& camera, const RasterConfig& config = {});

/// Sparse compositing weights: rendered feature at pixel p equals
/// sum over entries e in [offsets[p], offsets[p+1]) of weight[e] * features[prim[e]].
struct CompositeWeights {
  int height = 0;
  int width = 0;
  std::vector<uint32_t> offsets;
  std::vector<uint32_t> prims;
  std::vector<float> weights;

  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
};

CompositeWeights composite_weights(const GaussianScene& scene, const Camera& camera, const RasterConfig& config = {});

}  // namespace fpgs
