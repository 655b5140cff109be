#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fpgs/common.h"
#include "fpgs/parallel.h"
#include "fpgs/tensor_io.h"

namespace fpgs {

/// Dense layer y = x W^T + b, with W stored out x in.
struct DenseLayer {
  MatrixRM weight;
  VectorF bias;

  int inputs() const { return static_cast<int>(weight.cols()); }
  int outputs() const { return static_cast<int>(weight.rows()); }
  /// Affine part only, no activation.
  MatrixRM forward(const MatrixRM& x) const;

  /// Weights and biases drawn from U(-1/sqrt(in), 1/sqrt(in)).
  static DenseLayer random(int in, int out, uint64_t seed);
  static DenseLayer zeros(int in, int out);
  void validate(int in, int out, const std::string& name) const;
  bool operator==(const DenseLayer&) const = default;
};

/// 3x3 convolution, weight layout out x in x ky x kx.
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<float> weight;
  VectorF bias;

  float w(int o, int i, int ky, int kx) const { return weight[((static_cast<size_t>(o) * in_channels + i) * 3 + ky) * 3 + kx]; }
  static ConvLayer random(int in, int out, uint64_t seed);
  void validate(int in, int out, const std::string& name) const;
  bool operator==(const ConvLayer&) const = default;
};

/// VGG prefix up to relu2_1: conv1_1 (3->64), conv1_2 (64->64), 2x2 max-pool, conv2_1 (64->128).
struct VggSliceWeights {
  ConvLayer conv1_1;
  ConvLayer conv1_2;
  ConvLayer conv2_1;

  void validate() const;
  static VggSliceWeights random(uint64_t seed);
  /// Tensors "vgg.conv1_1.weight" (64x3x3x3), "vgg.conv1_1.bias", ... "vgg.conv2_1.bias".
  static VggSliceWeights from_tensors(const TensorFile& file);
  void to_tensors(TensorFile& file) const;
};

/// Dense 3 -> 64 -> 64 -> 128 with ReLU after every layer.
struct MlpVggWeights {
  DenseLayer fc1;
  DenseLayer fc2;
  DenseLayer fc3;

  void validate() const;
  /// Tensors "mlpvgg.fc{1,2,3}.{weight,bias}".
  static MlpVggWeights from_tensors(const TensorFile& file);
  void to_tensors(TensorFile& file) const;
};

/// Dense 128 -> 128, ReLU, dense 128 -> 3, sigmoid.
struct DecoderWeights {
  DenseLayer fc1;
  DenseLayer fc2;

  void validate() const;
  static DecoderWeights random(uint64_t seed);
  /// Tensors "decoder.fc{1,2}.{weight,bias}".
  static DecoderWeights from_tensors(const TensorFile& file);
  void to_tensors(TensorFile& file) const;
};

inline constexpr int kVggChannels = 128;

/// Image H x W x 3 -> relu2_1 map (H/2) x (W/2) x 128. Zero padding 1, stride 1.
/// Requires even H, W >= 8.
FeatureMap vgg_slice_forward(const FeatureMap& image, const VggSliceWeights& weights);

/// Collapses each 3x3 kernel to the sum of its taps; biases are copied, pooling dropped.
MlpVggWeights distill_mlp_vgg(const VggSliceWeights& weights);

/// Row-wise dense+ReLU chain, P x 3 colors -> P x 128 features.
MatrixRM mlp_vgg_forward(const MatrixRM& colors, const MlpVggWeights& weights);

/// P x 128 features -> P x 3 colors in (0, 1).
MatrixRM decoder_forward(const MatrixRM& features, const DecoderWeights& weights);

/// Gray-guide guided filter over (2r+1)^2 box windows clipped at the border.
/// The guide is converted to luma; each source channel is filtered independently.
FeatureMap guided_filter(const FeatureMap& guide, const FeatureMap& src, int radius, float eps);

/// Box mean over (2r+1)^2 windows clipped at the border.
FeatureMap box_mean(const FeatureMap& src, int radius);

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  int64_t step = 0;

  explicit AdamState(size_t n = 0) : m(n, 0.0f), v(n, 0.0f) {}
};

/// One bias-corrected Adam update in place.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, const AdamConfig& config);

/// Applies fn to fixed-size row chunks of x in parallel and stacks the results.
/// Chunk boundaries do not depend on the thread count.
template <class Fn>
MatrixRM map_row_chunks(const MatrixRM& x, int out_cols, Fn&& fn) {
  const auto rows = static_cast<size_t>(x.rows());
  MatrixRM out(x.rows(), out_cols);
  const size_t chunks = (rows + kRowChunk - 1) / kRowChunk;
  parallel_for(chunks, [&](size_t chunk) {
    const auto begin = static_cast<Eigen::Index>(chunk * kRowChunk);
    const auto count = static_cast<Eigen::Index>(std::min(kRowChunk, rows - chunk * kRowChunk));
    out.middleRows(begin, count) = fn(MatrixRM(x.middleRows(begin, count)));
  });
  return out;
}

}  // namespace fpgs
