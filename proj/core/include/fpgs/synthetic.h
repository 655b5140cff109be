#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpgs/common.h"
#include "fpgs/scene.h"
#include "fpgs/semantic_field.h"
#include "fpgs/splatter.h"
#include "fpgs/style_dictionary.h"
#include "fpgs/stylizer.h"

namespace fpgs::synthetic {

struct SyntheticScene {
  GaussianScene scene;   // semantic holds the planted codes
  std::vector<int> labels;  // region label per prim
  int regions = 0;
  Camera camera;         // authoring camera
  std::vector<Eigen::Vector3f> palette;
};

/// Planted code of region k: code_scale * e_k in the 16-d code space.
Eigen::VectorXf region_code(int region, float code_scale = 1.0f);
/// The same code embedded in the 384-d semantic space (first 16 dimensions).
Eigen::VectorXf region_semantic(int region, float code_scale = 1.0f);

/// Default region colors, cycled when there are more regions than entries.
std::vector<Eigen::Vector3f> default_palette();
std::vector<Eigen::Vector3f> style_palette();

struct PlaneOptions {
  int n_per_side = 40;
  float depth = 4.0f;
  float half_extent = 1.0f;
  int regions = 2;             // vertical stripes, left to right
  float code_scale = 1.0f;
  float opacity = 0.99f;
  float sigma_per_spacing = 0.8f;
  float color_noise = 0.05f;   // per-prim uniform jitter amplitude
  int image_width = 128;
  int image_height = 128;
  std::vector<Eigen::Vector3f> palette;  // empty: default_palette()
  uint64_t seed = 0;
};

/// Grid of flat Gaussians on one fronto-parallel plane centred on the optical axis of an
/// identity-rotation camera at the origin.
SyntheticScene make_plane_scene(const PlaneOptions& options = {});

/// Three overlapping planes centred at depths 3, 4 and 5, one region each, all turned
/// 15 degrees about the vertical axis.
SyntheticScene make_three_plane_scene(uint64_t seed = 0, int image_width = 128, int image_height = 96);

/// Backdrop at depth 5 (region 0) and a square occluder at depth 3 (region 1) with the
/// given half extent; zero yields no occluder prims.
SyntheticScene make_occlusion_scene(float occluder_half_extent, uint64_t seed = 0, int image_width = 96,
                                    int image_height = 96);

/// Named presets: "plane2", "three-plane", "occlusion".
SyntheticScene make_preset(const std::string& name, uint64_t seed = 0);

/// Cameras on a horizontal arc around `target`, sweeping `arc_degrees` in `views` steps.
std::vector<Camera> arc_trajectory(const Eigen::Vector3f& target, float radius, int views, float arc_degrees,
                                   float focal, int width, int height);
/// The default 8-view arc for a synthetic scene, centred on its authoring view.
std::vector<Camera> default_trajectory(const SyntheticScene& scene, int views = 8);

/// Per-pixel region label of a render (argmax of composited one-hot labels), -1 where
/// alpha < 0.5.
std::vector<int> render_labels(const SyntheticScene& scene, const Camera& camera, const RasterConfig& raster = {});

struct ReferenceOptions {
  int width = 64;
  int height = 64;
  int regions = 2;            // vertical stripes
  int semantic_stride = 4;    // semantic map is (H / stride) x (W / stride)
  float code_scale = 100.0f;
  float texture = 0.0f;       // amplitude of seeded per-pixel noise
  std::vector<Eigen::Vector3f> palette;  // empty: style_palette()
  uint64_t seed = 0;
};

/// Striped image plus a planted 384-d semantic map with the region codes.
FeatureMap reference_image(const ReferenceOptions& options);
FeatureMap reference_semantic(const ReferenceOptions& options);
ReferenceBundle make_reference(const ReferenceOptions& options, const VggSliceWeights& vgg);

/// Selection-matrix autoencoder: non-negative codes in the first 16 semantic dimensions
/// round-trip exactly.
AutoencoderWeights make_embedding_autoencoder();

struct DecoderFitOptions {
  int steps = 1500;
  int batch = 256;
  float lr = 3e-3f;
  uint64_t seed = 0;
};

/// Decoder trained to invert the MLP-VGG on uniformly sampled colors.
DecoderWeights fit_inverse_decoder(const MlpVggWeights& encoder, const DecoderFitOptions& options = {},
                                   double* final_loss = nullptr);

/// Random VGG slice, its collapsed MLP, a fitted decoder and the embedding autoencoder.
StyleNetworks make_networks(uint64_t seed = 0);

}  // namespace fpgs::synthetic
