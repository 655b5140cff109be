#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpgs/common.h"
#include "fpgs/nets.h"
#include "fpgs/scene.h"
#include "fpgs/semantic_field.h"
#include "fpgs/splatter.h"
#include "fpgs/style_dictionary.h"

namespace fpgs {

/// Maps colors into the feature space where statistics are matched, and back.
class ColorCodec {
 public:
  virtual ~ColorCodec() = default;
  /// P x 3 -> P x D
  virtual MatrixRM encode(const MatrixRM& colors) const = 0;
  /// P x D -> P x 3
  virtual MatrixRM decode(const MatrixRM& features) const = 0;
};

/// MLP-VGG encoder and the trained color decoder.
class NetworkCodec final : public ColorCodec {
 public:
  NetworkCodec(MlpVggWeights encoder, DecoderWeights decoder);
  MatrixRM encode(const MatrixRM& colors) const override;
  MatrixRM decode(const MatrixRM& features) const override;

 private:
  MlpVggWeights encoder_;
  DecoderWeights decoder_;
};

/// Everything the stylization pipeline needs. `vgg` is only used to build reference VGG maps.
struct StyleNetworks {
  MlpVggWeights mlp_vgg;
  DecoderWeights decoder;
  AutoencoderWeights autoencoder;
  std::optional<VggSliceWeights> vgg;

  /// Reads whichever of the "vgg.*", "mlpvgg.*", "decoder.*", "ae.*" groups are present.
  /// The MLP-VGG is derived from the VGG slice when only the latter is stored.
  static StyleNetworks from_tensors(const TensorFile& file);
  void to_tensors(TensorFile& file) const;
  NetworkCodec codec() const { return {mlp_vgg, decoder}; }
};

inline constexpr float kStdFloor = 1e-6f;

struct ChannelStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  // population std, floored
};

/// Per-channel mean and population std over rows. With `weights` (one per row, >= 0)
/// the statistics are weighted.
ChannelStats channel_stats(const MatrixRM& features, std::span<const float> weights = {}, float floor = kStdFloor);

/// Renormalizes every channel of `content` to the style mean and std.
MatrixRM global_adain(const MatrixRM& content, std::span<const float> style_mean, std::span<const float> style_std);

/// Per-prim style codes as attention-weighted dictionary values.
struct StyleAssignment {
  MatrixRM mean;       // P x 128
  MatrixRM std;        // P x 128
  MatrixRM attention;  // P x T, rows sum to 1; empty when not retained

  size_t size() const { return static_cast<size_t>(mean.rows()); }
};

struct MatchConfig {
  float temperature = 1.0f;
  bool normalize_keys = false;
  bool keep_attention = true;
};

/// Softmax over dot products between decoded prim features (P x 384) and dictionary keys.
StyleAssignment semantic_match(const MatrixRM& scene_features, const StyleDictionary& dict,
                               const MatchConfig& config = {});

struct StylizeStep {
  MatrixRM features;  // post-AdaIN features, P x D
  MatrixRM colors;    // decoded colors, P x 3
  ChannelStats content_stats;
};

/// One local AdaIN pass: encode, normalize by the global content statistics, apply the
/// per-prim codes, decode. `weights` switches to weighted content statistics.
StylizeStep stylize_once(const MatrixRM& base_colors, const StyleAssignment& assignment, const ColorCodec& codec,
                         std::span<const float> weights = {});

struct StylizeConfig {
  int iterations = 2;
  int clusters = 10;
  float temperature = 1.0f;
  bool normalize_keys = false;
  bool sh_zero_rest = false;
  bool opacity_weighted = false;
  uint64_t seed = 0;

  void validate() const;
};

struct IterativeResult {
  GaussianScene scene;
  std::vector<MatrixRM> diffuse_history;  // colors after each iteration
  std::vector<StylizeStep> steps;
};

using ProgressFn = std::function<void(const std::string& stage, double fraction)>;

/// Repeats stylize_once with a fixed assignment, feeding each output back as the base
/// colors, then writes the final colors into the DC coefficients.
IterativeResult iterative_stylize(const GaussianScene& scene, const StyleAssignment& assignment,
                                  const ColorCodec& codec, const StylizeConfig& config,
                                  const ProgressFn& progress = {});

struct StylizeResult {
  GaussianScene scene;
  StyleDictionary dictionary;
  StyleAssignment assignment;
  std::vector<MatrixRM> diffuse_history;
  std::vector<StylizeStep> steps;
};

/// Decodes the scene's semantic field to the semantic space used by dictionary keys.
MatrixRM decoded_scene_features(const GaussianScene& scene, const AutoencoderWeights& autoencoder);

/// Stylization against an existing dictionary.
StylizeResult stylize_with_dictionary(const GaussianScene& scene, StyleDictionary dict, const StyleNetworks& nets,
                                      const StylizeConfig& config, const ProgressFn& progress = {});

/// Full pipeline: decode features, build the dictionary, match, iterate, update DC.
StylizeResult stylize_scene(const GaussianScene& scene, std::span<const ReferenceBundle> refs,
                            const StyleNetworks& nets, const StylizeConfig& config, const ProgressFn& progress = {});

/// Rendered attention column for one dictionary entry, clamped to [0, 1]. H x W x 1.
FeatureMap attention_heatmap(const StyleAssignment& assignment, const GaussianScene& scene, const Camera& camera,
                             int entry, const RasterConfig& raster = {});

/// Decoded 384-d semantic map of a view: the rendered low-dimensional field passed
/// through the autoencoder decoder.
FeatureMap render_semantic_map(const GaussianScene& scene, const Camera& camera, const AutoencoderWeights& autoencoder,
                               const RasterConfig& raster = {});

}  // namespace fpgs
