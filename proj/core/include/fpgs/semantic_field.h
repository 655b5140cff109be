#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "fpgs/common.h"
#include "fpgs/nets.h"
#include "fpgs/splatter.h"

namespace fpgs {

inline constexpr int kSemanticDims = 384;
inline constexpr int kCodeDims = 16;

/// Encoder 384 -> 128 -> 64 -> 16 and decoder 16 -> 64 -> 128 -> 384, ReLU between
/// hidden layers, linear outputs.
struct AutoencoderWeights {
  std::array<DenseLayer, 3> encoder;
  std::array<DenseLayer, 3> decoder;

  void validate() const;
  static AutoencoderWeights random(uint64_t seed);
  /// Tensors "ae.enc.{0,1,2}.{weight,bias}" and "ae.dec.{0,1,2}.{weight,bias}".
  static AutoencoderWeights from_tensors(const TensorFile& file);
  void to_tensors(TensorFile& file) const;
};

MatrixRM encode_features(const MatrixRM& features, const AutoencoderWeights& weights);
MatrixRM decode_features(const MatrixRM& codes, const AutoencoderWeights& weights);
/// H x W x 384 -> H x W x 16.
FeatureMap encode_map(const FeatureMap& map, const AutoencoderWeights& weights);

struct AutoencoderTrainConfig {
  int epochs = 5;
  float lr = 1e-4f;
  float lambda_cos = 1.0f;
  int batch_size = 64;
  uint64_t seed = 0;
};

struct AutoencoderTrainResult {
  AutoencoderWeights weights;
  double initial_loss = 0.0;  // full-dataset loss before the first step
  double final_loss = 0.0;    // full-dataset loss after the last step
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::vector<double> step_loss;
};

/// Per-sample loss ||y - x||^2 + lambda_cos * (1 - cos(y, x)), averaged over samples.
double autoencoder_loss(const MatrixRM& features, const AutoencoderWeights& weights, float lambda_cos);

/// Trains on every pixel of the given 384-channel maps, shuffled with a seeded RNG.
/// `init` overrides the seeded random initialization.
AutoencoderTrainResult train_autoencoder(std::span<const FeatureMap> maps, const AutoencoderTrainConfig& config,
                                         const AutoencoderWeights* init = nullptr);

/// Mean per-row cosine similarity between decode(encode(x)) and x.
double reconstruction_cosine(const MatrixRM& features, const AutoencoderWeights& weights);

/// Fixed-geometry L1 fitting problem: per-prim features whose composited renders match
/// the target maps. The compositing weights are precomputed once per camera, so the
/// rendered feature is linear in the per-prim features.
class DistillProblem {
 public:
  DistillProblem(const GaussianScene& scene, std::span<const Camera> cameras, std::span<const FeatureMap> targets,
                 const RasterConfig& raster = {});

  size_t prim_count() const { return prim_count_; }
  int dims() const { return dims_; }
  /// Mean absolute residual over all pixels, cameras and channels.
  double loss(const Eigen::MatrixXd& features) const;
  /// Analytic (sub)gradient of loss(): the adjoint of the compositing weights applied
  /// to sign(residual) / N.
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& features) const;
  /// Largest compositing weight each prim receives in any view.
  const std::vector<float>& visibility() const { return visibility_; }

 private:
  Eigen::MatrixXd render(size_t view, const Eigen::MatrixXd& features) const;

  struct PrimEntries {
    std::vector<uint32_t> offsets;
    std::vector<uint32_t> pixels;
    std::vector<float> weights;
  };
  size_t prim_count_ = 0;
  int dims_ = 0;
  double normalizer_ = 1.0;
  std::vector<CompositeWeights> views_;
  std::vector<PrimEntries> transposed_;
  std::vector<FeatureMap> targets_;
  std::vector<float> visibility_;
};

struct DistillConfig {
  int iterations = 500;
  float lr = 2.5e-3f;
  RasterConfig raster{};
};

struct DistillResult {
  MatrixRM features;  // P x D
  std::vector<double> loss_history;
  std::vector<float> visibility;
};

/// Fits per-prim semantic codes to one encoded map per camera with Adam. Target maps are
/// bilinearly resized to the camera resolution. Prims never seen keep their zero init.
DistillResult distill_scene_features(const GaussianScene& scene, std::span<const Camera> cameras,
                                     std::span<const FeatureMap> encoded_maps, const DistillConfig& config = {});

}  // namespace fpgs
