#include "fpgs/nets.h"

#include <cmath>
#include <random>

namespace fpgs {
namespace {

MatrixRM relu(MatrixRM x) { return x.cwiseMax(0.0f); }

void read_dense(const TensorFile& file, const std::string& prefix, DenseLayer& layer) {
  layer.weight = file.matrix(prefix + ".weight");
  layer.bias = file.vector(prefix + ".bias");
}

void write_dense(TensorFile& file, const std::string& prefix, const DenseLayer& layer) {
  file.add(prefix + ".weight", layer.weight);
  file.add(prefix + ".bias", {static_cast<uint64_t>(layer.bias.size())},
           std::vector<float>(layer.bias.data(), layer.bias.data() + layer.bias.size()));
}

ConvLayer read_conv(const TensorFile& file, const std::string& prefix) {
  const Tensor& w = file.get(prefix + ".weight");
  if (w.shape.size() != 4 || w.shape[2] != 3 || w.shape[3] != 3) {
    throw ValidationError(prefix + ".weight must be out x in x 3 x 3");
  }
  ConvLayer c;
  c.out_channels = static_cast<int>(w.shape[0]);
  c.in_channels = static_cast<int>(w.shape[1]);
  c.weight = w.data;
  c.bias = file.vector(prefix + ".bias");
  return c;
}

void write_conv(TensorFile& file, const std::string& prefix, const ConvLayer& c) {
  file.add(prefix + ".weight",
           {static_cast<uint64_t>(c.out_channels), static_cast<uint64_t>(c.in_channels), 3, 3}, c.weight);
  file.add(prefix + ".bias", {static_cast<uint64_t>(c.bias.size())},
           std::vector<float>(c.bias.data(), c.bias.data() + c.bias.size()));
}

// 3x3 convolution, zero padding 1, followed by ReLU. Processed in bands of output rows
// through an im2col matrix so each band is one GEMM.
FeatureMap conv3x3_relu(const FeatureMap& in, const ConvLayer& conv) {
  const int h = in.height, w = in.width, cin = in.channels;
  const int k = cin * 9;
  const Eigen::Map<const MatrixRM> wmat(conv.weight.data(), conv.out_channels, k);
  FeatureMap out(h, w, conv.out_channels);
  constexpr int kBand = 8;
  const int bands = (h + kBand - 1) / kBand;
  parallel_for(static_cast<size_t>(bands), [&](size_t band) {
    const int y0 = static_cast<int>(band) * kBand;
    const int y1 = std::min(h, y0 + kBand);
    MatrixRM cols = MatrixRM::Zero(static_cast<Eigen::Index>(y1 - y0) * w, k);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        float* row = cols.row(static_cast<Eigen::Index>(y - y0) * w + x).data();
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            const float* src = in.pixel(sy, sx);
            for (int c = 0; c < cin; ++c) row[c * 9 + ky * 3 + kx] = src[c];
          }
        }
      }
    }
    MatrixRM result = cols * wmat.transpose();
    result.rowwise() += conv.bias.transpose();
    out.matrix().middleRows(static_cast<Eigen::Index>(y0) * w, result.rows()) = result.cwiseMax(0.0f);
  });
  return out;
}

FeatureMap max_pool2(const FeatureMap& in) {
  FeatureMap out(in.height / 2, in.width / 2, in.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      float* o = out.pixel(y, x);
      const float* a = in.pixel(2 * y, 2 * x);
      const float* b = in.pixel(2 * y, 2 * x + 1);
      const float* c = in.pixel(2 * y + 1, 2 * x);
      const float* d = in.pixel(2 * y + 1, 2 * x + 1);
      for (int k = 0; k < in.channels; ++k) o[k] = std::max(std::max(a[k], b[k]), std::max(c[k], d[k]));
    }
  }
  return out;
}

DenseLayer collapse_kernel(const ConvLayer& conv) {
  DenseLayer d;
  d.weight.resize(conv.out_channels, conv.in_channels);
  for (int o = 0; o < conv.out_channels; ++o) {
    for (int i = 0; i < conv.in_channels; ++i) {
      float sum = 0.0f;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) sum += conv.w(o, i, ky, kx);
      }
      d.weight(o, i) = sum;
    }
  }
  d.bias = conv.bias;
  return d;
}

}  // namespace

MatrixRM DenseLayer::forward(const MatrixRM& x) const {
  if (x.cols() != weight.cols()) {
    throw ValidationError("dense layer expects " + std::to_string(weight.cols()) + " inputs, got " +
                          std::to_string(x.cols()));
  }
  MatrixRM y = x * weight.transpose();
  y.rowwise() += bias.transpose();
  return y;
}

DenseLayer DenseLayer::random(int in, int out, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  DenseLayer d;
  d.weight.resize(out, in);
  d.bias.resize(out);
  for (Eigen::Index i = 0; i < d.weight.size(); ++i) {
    d.weight.data()[i] = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  }
  for (Eigen::Index i = 0; i < d.bias.size(); ++i) d.bias[i] = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  return d;
}

DenseLayer DenseLayer::zeros(int in, int out) { return {MatrixRM::Zero(out, in), VectorF::Zero(out)}; }

void DenseLayer::validate(int in, int out, const std::string& name) const {
  if (weight.rows() != out || weight.cols() != in || bias.size() != out) {
    throw ValidationError(name + ": expected " + std::to_string(out) + " x " + std::to_string(in) + " weights");
  }
  if (!weight.allFinite() || !bias.allFinite()) throw ValidationError(name + ": non-finite weights");
}

ConvLayer ConvLayer::random(int in, int out, uint64_t seed) {
  std::mt19937_64 rng(seed);
  // He-style scale keeps activations O(1) through the ReLU chain.
  const double bound = std::sqrt(6.0 / (9.0 * in));
  ConvLayer c;
  c.in_channels = in;
  c.out_channels = out;
  c.weight.resize(static_cast<size_t>(out) * in * 9);
  for (float& v : c.weight) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  c.bias.resize(out);
  for (Eigen::Index i = 0; i < out; ++i) c.bias[i] = static_cast<float>((2.0 * uniform01(rng) - 1.0) * 0.1);
  return c;
}

void ConvLayer::validate(int in, int out, const std::string& name) const {
  if (in_channels != in || out_channels != out || weight.size() != static_cast<size_t>(in) * out * 9 ||
      bias.size() != out) {
    throw ValidationError(name + ": expected " + std::to_string(out) + " x " + std::to_string(in) + " x 3 x 3");
  }
  for (float v : weight) {
    if (!std::isfinite(v)) throw ValidationError(name + ": non-finite weights");
  }
  if (!bias.allFinite()) throw ValidationError(name + ": non-finite bias");
}

void VggSliceWeights::validate() const {
  conv1_1.validate(3, 64, "vgg.conv1_1");
  conv1_2.validate(64, 64, "vgg.conv1_2");
  conv2_1.validate(64, 128, "vgg.conv2_1");
}

VggSliceWeights VggSliceWeights::random(uint64_t seed) {
  return {ConvLayer::random(3, 64, mix_seed(seed, 0)), ConvLayer::random(64, 64, mix_seed(seed, 1)),
          ConvLayer::random(64, 128, mix_seed(seed, 2))};
}

VggSliceWeights VggSliceWeights::from_tensors(const TensorFile& file) {
  VggSliceWeights w{read_conv(file, "vgg.conv1_1"), read_conv(file, "vgg.conv1_2"), read_conv(file, "vgg.conv2_1")};
  w.validate();
  return w;
}

void VggSliceWeights::to_tensors(TensorFile& file) const {
  write_conv(file, "vgg.conv1_1", conv1_1);
  write_conv(file, "vgg.conv1_2", conv1_2);
  write_conv(file, "vgg.conv2_1", conv2_1);
}

void MlpVggWeights::validate() const {
  fc1.validate(3, 64, "mlpvgg.fc1");
  fc2.validate(64, 64, "mlpvgg.fc2");
  fc3.validate(64, 128, "mlpvgg.fc3");
}

MlpVggWeights MlpVggWeights::from_tensors(const TensorFile& file) {
  MlpVggWeights w;
  read_dense(file, "mlpvgg.fc1", w.fc1);
  read_dense(file, "mlpvgg.fc2", w.fc2);
  read_dense(file, "mlpvgg.fc3", w.fc3);
  w.validate();
  return w;
}

void MlpVggWeights::to_tensors(TensorFile& file) const {
  write_dense(file, "mlpvgg.fc1", fc1);
  write_dense(file, "mlpvgg.fc2", fc2);
  write_dense(file, "mlpvgg.fc3", fc3);
}

void DecoderWeights::validate() const {
  fc1.validate(kVggChannels, 128, "decoder.fc1");
  fc2.validate(128, 3, "decoder.fc2");
}

DecoderWeights DecoderWeights::random(uint64_t seed) {
  return {DenseLayer::random(kVggChannels, 128, mix_seed(seed, 0)), DenseLayer::random(128, 3, mix_seed(seed, 1))};
}

DecoderWeights DecoderWeights::from_tensors(const TensorFile& file) {
  DecoderWeights w;
  read_dense(file, "decoder.fc1", w.fc1);
  read_dense(file, "decoder.fc2", w.fc2);
  w.validate();
  return w;
}

void DecoderWeights::to_tensors(TensorFile& file) const {
  write_dense(file, "decoder.fc1", fc1);
  write_dense(file, "decoder.fc2", fc2);
}

FeatureMap vgg_slice_forward(const FeatureMap& image, const VggSliceWeights& weights) {
  if (image.channels != 3) throw ValidationError("vgg_slice_forward: image must have 3 channels");
  if (image.height < 8 || image.width < 8 || image.height % 2 != 0 || image.width % 2 != 0) {
    throw ValidationError("vgg_slice_forward: image dimensions must be even and >= 8, got " +
                          std::to_string(image.height) + " x " + std::to_string(image.width));
  }
  const FeatureMap a = conv3x3_relu(image, weights.conv1_1);
  const FeatureMap b = conv3x3_relu(a, weights.conv1_2);
  return conv3x3_relu(max_pool2(b), weights.conv2_1);
}

MlpVggWeights distill_mlp_vgg(const VggSliceWeights& weights) {
  weights.validate();
  return {collapse_kernel(weights.conv1_1), collapse_kernel(weights.conv1_2), collapse_kernel(weights.conv2_1)};
}

MatrixRM mlp_vgg_forward(const MatrixRM& colors, const MlpVggWeights& weights) {
  if (colors.cols() != 3) throw ValidationError("mlp_vgg_forward: expected P x 3 colors");
  return map_row_chunks(colors, weights.fc3.outputs(), [&](const MatrixRM& x) {
    return relu(weights.fc3.forward(relu(weights.fc2.forward(relu(weights.fc1.forward(x))))));
  });
}

MatrixRM decoder_forward(const MatrixRM& features, const DecoderWeights& weights) {
  return map_row_chunks(features, 3, [&](const MatrixRM& x) {
    MatrixRM logits = weights.fc2.forward(relu(weights.fc1.forward(x)));
    return MatrixRM(logits.unaryExpr([](float v) { return 1.0f / (1.0f + std::exp(-v)); }));
  });
}

FeatureMap box_mean(const FeatureMap& src, int radius) {
  if (radius < 0) throw ValidationError("box_mean: radius must be >= 0");
  const int h = src.height, w = src.width, ch = src.channels;
  // Summed-area table in double with a zero border row/column.
  std::vector<double> sat(static_cast<size_t>(h + 1) * (w + 1) * ch, 0.0);
  auto at = [&](int y, int x, int c) -> double& { return sat[(static_cast<size_t>(y) * (w + 1) + x) * ch + c]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        at(y + 1, x + 1, c) = src.at(y, x, c) + at(y, x + 1, c) + at(y + 1, x, c) - at(y, x, c);
      }
    }
  }
  FeatureMap out(h, w, ch);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - radius), y1 = std::min(h, y + radius + 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - radius), x1 = std::min(w, x + radius + 1);
      const double n = static_cast<double>(y1 - y0) * (x1 - x0);
      for (int c = 0; c < ch; ++c) {
        const double s = at(y1, x1, c) - at(y0, x1, c) - at(y1, x0, c) + at(y0, x0, c);
        out.at(y, x, c) = static_cast<float>(s / n);
      }
    }
  }
  return out;
}

FeatureMap guided_filter(const FeatureMap& guide, const FeatureMap& src, int radius, float eps) {
  if (guide.height != src.height || guide.width != src.width) throw ValidationError("guided_filter: size mismatch");
  if (guide.channels != 3 && guide.channels != 1) throw ValidationError("guided_filter: guide must be gray or RGB");
  if (radius < 0) throw ValidationError("guided_filter: radius must be >= 0");
  if (!(eps > 0.0f)) throw ValidationError("guided_filter: eps must be > 0");
  if (radius == 0) return src;

  const int h = src.height, w = src.width, ch = src.channels;
  FeatureMap gray(h, w, 1);
  for (size_t p = 0; p < src.pixel_count(); ++p) {
    const float* g = guide.data.data() + p * guide.channels;
    gray.data[p] = guide.channels == 3 ? 0.299f * g[0] + 0.587f * g[1] + 0.114f * g[2] : g[0];
  }
  // Stack I, I*I, p, I*p so one box pass covers every statistic.
  FeatureMap stack(h, w, 2 + 2 * ch);
  for (size_t p = 0; p < src.pixel_count(); ++p) {
    float* s = stack.data.data() + p * stack.channels;
    const float i = gray.data[p];
    s[0] = i;
    s[1] = i * i;
    for (int c = 0; c < ch; ++c) {
      const float v = src.data[p * ch + c];
      s[2 + c] = v;
      s[2 + ch + c] = i * v;
    }
  }
  const FeatureMap mean = box_mean(stack, radius);
  FeatureMap ab(h, w, 2 * ch);
  for (size_t p = 0; p < src.pixel_count(); ++p) {
    const float* m = mean.data.data() + p * mean.channels;
    const float var = m[1] - m[0] * m[0];
    float* o = ab.data.data() + p * ab.channels;
    for (int c = 0; c < ch; ++c) {
      const float cov = m[2 + ch + c] - m[0] * m[2 + c];
      const float a = cov / (var + eps);
      o[c] = a;
      o[ch + c] = m[2 + c] - a * m[0];
    }
  }
  const FeatureMap mean_ab = box_mean(ab, radius);
  FeatureMap out(h, w, ch);
  for (size_t p = 0; p < src.pixel_count(); ++p) {
    const float* m = mean_ab.data.data() + p * mean_ab.channels;
    for (int c = 0; c < ch; ++c) out.data[p * ch + c] = m[c] * gray.data[p] + m[ch + c];
  }
  return out;
}

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, const AdamConfig& config) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ValidationError("adam_step: parameter, gradient and state sizes differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta1), t));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta2), t));
  for (size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0f - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0f - config.beta2) * g * g;
    const float m_hat = state.m[i] / c1;
    const float v_hat = state.v[i] / c2;
    params[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

}  // namespace fpgs
