#include "fpgs/semantic_field.h"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace fpgs {
namespace {

constexpr std::array<int, 4> kEncoderWidths = {kSemanticDims, 128, 64, kCodeDims};
constexpr std::array<int, 4> kDecoderWidths = {kCodeDims, 64, 128, kSemanticDims};

MatrixRM relu(MatrixRM x) { return x.cwiseMax(0.0f); }

MatrixRM run_chain(const std::array<DenseLayer, 3>& layers, const MatrixRM& x) {
  return layers[2].forward(relu(layers[1].forward(relu(layers[0].forward(x)))));
}

// Activations kept for the backward pass; acts[0] is the input, acts[6] the output.
struct Trace {
  std::array<MatrixRM, 7> acts;
};

Trace forward_trace(const AutoencoderWeights& w, const MatrixRM& x) {
  Trace t;
  t.acts[0] = x;
  t.acts[1] = relu(w.encoder[0].forward(t.acts[0]));
  t.acts[2] = relu(w.encoder[1].forward(t.acts[1]));
  t.acts[3] = w.encoder[2].forward(t.acts[2]);
  t.acts[4] = relu(w.decoder[0].forward(t.acts[3]));
  t.acts[5] = relu(w.decoder[1].forward(t.acts[4]));
  t.acts[6] = w.decoder[2].forward(t.acts[5]);
  return t;
}

// Loss and dLoss/dy for one batch, averaged over rows.
double batch_loss(const MatrixRM& y, const MatrixRM& x, float lambda_cos, MatrixRM* grad) {
  constexpr double kTiny = 1e-12;
  const auto rows = y.rows();
  double total = 0.0;
  if (grad) grad->resize(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto yr = y.row(r);
    const auto xr = x.row(r);
    const double diff2 = (yr - xr).squaredNorm();
    const double ny = std::max(static_cast<double>(yr.norm()), kTiny);
    const double nx = std::max(static_cast<double>(xr.norm()), kTiny);
    const double dot = yr.dot(xr);
    const double cos = dot / (ny * nx);
    total += diff2 + lambda_cos * (1.0 - cos);
    if (grad) {
      // d/dy [ -cos ] = -(x / (|y||x|) - cos * y / |y|^2)
      const float a = static_cast<float>(-lambda_cos / (ny * nx));
      const float b = static_cast<float>(lambda_cos * cos / (ny * ny));
      grad->row(r) = 2.0f * (yr - xr) + a * xr + b * yr;
    }
  }
  if (grad) *grad /= static_cast<float>(rows);
  return total / static_cast<double>(rows);
}

struct LayerGrad {
  MatrixRM weight;
  VectorF bias;
};

// Backward through the six dense layers given dLoss/dy.
std::array<LayerGrad, 6> backward(const AutoencoderWeights& w, const Trace& t, MatrixRM dy) {
  std::array<const DenseLayer*, 6> layers = {&w.encoder[0], &w.encoder[1], &w.encoder[2],
                                             &w.decoder[0], &w.decoder[1], &w.decoder[2]};
  // Layers 0,1 and 3,4 have a ReLU after them; 2 (code) and 5 (output) are linear.
  constexpr std::array<bool, 6> relu_after = {true, true, false, true, true, false};
  std::array<LayerGrad, 6> grads;
  for (int l = 5; l >= 0; --l) {
    if (relu_after[l]) dy = dy.cwiseProduct((t.acts[l + 1].array() > 0.0f).cast<float>().matrix());
    grads[l].weight = dy.transpose() * t.acts[l];
    grads[l].bias = dy.colwise().sum().transpose();
    if (l > 0) dy = dy * layers[l]->weight;
  }
  return grads;
}

void check_width(const MatrixRM& m, int cols, const char* what) {
  if (m.cols() != cols) {
    throw ValidationError(std::string(what) + ": expected " + std::to_string(cols) + " channels, got " +
                          std::to_string(m.cols()));
  }
}

}  // namespace

void AutoencoderWeights::validate() const {
  for (int l = 0; l < 3; ++l) {
    encoder[l].validate(kEncoderWidths[l], kEncoderWidths[l + 1], "ae.enc." + std::to_string(l));
    decoder[l].validate(kDecoderWidths[l], kDecoderWidths[l + 1], "ae.dec." + std::to_string(l));
  }
}

AutoencoderWeights AutoencoderWeights::random(uint64_t seed) {
  AutoencoderWeights w;
  for (int l = 0; l < 3; ++l) {
    w.encoder[l] = DenseLayer::random(kEncoderWidths[l], kEncoderWidths[l + 1], mix_seed(seed, l));
    w.decoder[l] = DenseLayer::random(kDecoderWidths[l], kDecoderWidths[l + 1], mix_seed(seed, 3 + l));
  }
  return w;
}

AutoencoderWeights AutoencoderWeights::from_tensors(const TensorFile& file) {
  AutoencoderWeights w;
  for (int l = 0; l < 3; ++l) {
    const std::string e = "ae.enc." + std::to_string(l);
    const std::string d = "ae.dec." + std::to_string(l);
    w.encoder[l] = {file.matrix(e + ".weight"), file.vector(e + ".bias")};
    w.decoder[l] = {file.matrix(d + ".weight"), file.vector(d + ".bias")};
  }
  w.validate();
  return w;
}

void AutoencoderWeights::to_tensors(TensorFile& file) const {
  auto put = [&](const std::string& prefix, const DenseLayer& layer) {
    file.add(prefix + ".weight", layer.weight);
    file.add(prefix + ".bias", {static_cast<uint64_t>(layer.bias.size())},
             std::vector<float>(layer.bias.data(), layer.bias.data() + layer.bias.size()));
  };
  for (int l = 0; l < 3; ++l) put("ae.enc." + std::to_string(l), encoder[l]);
  for (int l = 0; l < 3; ++l) put("ae.dec." + std::to_string(l), decoder[l]);
}

MatrixRM encode_features(const MatrixRM& features, const AutoencoderWeights& weights) {
  check_width(features, kSemanticDims, "encode_features");
  return map_row_chunks(features, kCodeDims, [&](const MatrixRM& x) { return run_chain(weights.encoder, x); });
}

MatrixRM decode_features(const MatrixRM& codes, const AutoencoderWeights& weights) {
  check_width(codes, kCodeDims, "decode_features");
  return map_row_chunks(codes, kSemanticDims, [&](const MatrixRM& x) { return run_chain(weights.decoder, x); });
}

FeatureMap encode_map(const FeatureMap& map, const AutoencoderWeights& weights) {
  return FeatureMap::from_matrix(encode_features(map.matrix(), weights), map.height, map.width);
}

double autoencoder_loss(const MatrixRM& features, const AutoencoderWeights& weights, float lambda_cos) {
  check_width(features, kSemanticDims, "autoencoder_loss");
  if (features.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index begin = 0; begin < features.rows(); begin += static_cast<Eigen::Index>(kRowChunk)) {
    const auto count = std::min<Eigen::Index>(static_cast<Eigen::Index>(kRowChunk), features.rows() - begin);
    const MatrixRM x = features.middleRows(begin, count);
    const MatrixRM y = run_chain(weights.decoder, run_chain(weights.encoder, x));
    total += batch_loss(y, x, lambda_cos, nullptr) * static_cast<double>(count);
  }
  return total / static_cast<double>(features.rows());
}

double reconstruction_cosine(const MatrixRM& features, const AutoencoderWeights& weights) {
  const MatrixRM y = decode_features(encode_features(features, weights), weights);
  double sum = 0.0;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double denom = std::max(1e-12, static_cast<double>(y.row(r).norm()) * features.row(r).norm());
    sum += y.row(r).dot(features.row(r)) / denom;
  }
  return y.rows() ? sum / static_cast<double>(y.rows()) : 0.0;
}

AutoencoderTrainResult train_autoencoder(std::span<const FeatureMap> maps, const AutoencoderTrainConfig& config,
                                         const AutoencoderWeights* init) {
  if (maps.empty()) throw ValidationError("train_autoencoder: no feature maps");
  if (config.epochs < 1 || config.batch_size < 1) throw ValidationError("train_autoencoder: bad epochs/batch size");
  size_t total = 0;
  for (const auto& m : maps) {
    if (m.channels != kSemanticDims) throw ValidationError("train_autoencoder: maps must have 384 channels");
    total += m.pixel_count();
  }
  if (total == 0) throw ValidationError("train_autoencoder: maps are empty");

  MatrixRM data(static_cast<Eigen::Index>(total), kSemanticDims);
  Eigen::Index row = 0;
  for (const auto& m : maps) {
    data.middleRows(row, static_cast<Eigen::Index>(m.pixel_count())) = m.matrix();
    row += static_cast<Eigen::Index>(m.pixel_count());
  }
  if (!data.allFinite()) throw ValidationError("train_autoencoder: non-finite input features");

  AutoencoderTrainResult result;
  result.weights = init ? *init : AutoencoderWeights::random(mix_seed(config.seed, 100));
  result.weights.validate();
  result.initial_loss = autoencoder_loss(data, result.weights, config.lambda_cos);

  std::array<DenseLayer*, 6> layers = {&result.weights.encoder[0], &result.weights.encoder[1],
                                       &result.weights.encoder[2], &result.weights.decoder[0],
                                       &result.weights.decoder[1], &result.weights.decoder[2]};
  std::vector<AdamState> weight_state, bias_state;
  for (auto* l : layers) {
    weight_state.emplace_back(static_cast<size_t>(l->weight.size()));
    bias_state.emplace_back(static_cast<size_t>(l->bias.size()));
  }
  const AdamConfig adam{config.lr};

  std::mt19937_64 rng(mix_seed(config.seed, 200));
  std::vector<uint32_t> order(total);
  std::iota(order.begin(), order.end(), 0u);
  const auto batch = static_cast<size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t i = total - 1; i > 0; --i) {
      const auto j = static_cast<size_t>(uniform01(rng) * static_cast<double>(i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }
    double epoch_sum = 0.0;
    size_t epoch_steps = 0;
    for (size_t start = 0; start < total; start += batch) {
      const size_t n = std::min(batch, total - start);
      MatrixRM x(static_cast<Eigen::Index>(n), kSemanticDims);
      for (size_t k = 0; k < n; ++k) x.row(static_cast<Eigen::Index>(k)) = data.row(order[start + k]);

      const Trace trace = forward_trace(result.weights, x);
      MatrixRM dy;
      const double loss = batch_loss(trace.acts[6], x, config.lambda_cos, &dy);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "train_autoencoder: non-finite loss at epoch " << epoch << ", step " << epoch_steps
            << " (last finite epoch means:";
        for (double e : result.epoch_loss) msg << ' ' << e;
        msg << ')';
        throw Error(msg.str());
      }
      const auto grads = backward(result.weights, trace, std::move(dy));
      for (size_t l = 0; l < layers.size(); ++l) {
        adam_step(std::span(layers[l]->weight.data(), static_cast<size_t>(layers[l]->weight.size())),
                  std::span<const float>(grads[l].weight.data(), static_cast<size_t>(grads[l].weight.size())),
                  weight_state[l], adam);
        adam_step(std::span(layers[l]->bias.data(), static_cast<size_t>(layers[l]->bias.size())),
                  std::span<const float>(grads[l].bias.data(), static_cast<size_t>(grads[l].bias.size())),
                  bias_state[l], adam);
      }
      result.step_loss.push_back(loss);
      epoch_sum += loss;
      ++epoch_steps;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
  }
  result.final_loss = autoencoder_loss(data, result.weights, config.lambda_cos);
  return result;
}

DistillProblem::DistillProblem(const GaussianScene& scene, std::span<const Camera> cameras,
                               std::span<const FeatureMap> targets, const RasterConfig& raster)
    : prim_count_(scene.size()) {
  if (cameras.size() != targets.size()) {
    throw ValidationError("distill: " + std::to_string(cameras.size()) + " cameras but " +
                          std::to_string(targets.size()) + " target maps");
  }
  if (cameras.empty()) throw ValidationError("distill: no views");
  dims_ = targets.front().channels;
  size_t pixels = 0;
  visibility_.assign(prim_count_, 0.0f);
  for (size_t v = 0; v < cameras.size(); ++v) {
    if (targets[v].channels != dims_) throw ValidationError("distill: target maps differ in channel count");
    views_.push_back(composite_weights(scene, cameras[v], raster));
    targets_.push_back(resize_bilinear(targets[v], cameras[v].height, cameras[v].width));
    pixels += views_.back().pixel_count();

    const auto& cw = views_.back();
    PrimEntries t;
    t.offsets.assign(prim_count_ + 1, 0);
    for (uint32_t p : cw.prims) ++t.offsets[p + 1];
    std::partial_sum(t.offsets.begin(), t.offsets.end(), t.offsets.begin());
    t.pixels.resize(cw.prims.size());
    t.weights.resize(cw.prims.size());
    std::vector<uint32_t> cursor(t.offsets.begin(), t.offsets.end() - 1);
    for (size_t px = 0; px < cw.pixel_count(); ++px) {
      for (uint32_t e = cw.offsets[px]; e < cw.offsets[px + 1]; ++e) {
        const uint32_t slot = cursor[cw.prims[e]]++;
        t.pixels[slot] = static_cast<uint32_t>(px);
        t.weights[slot] = cw.weights[e];
        visibility_[cw.prims[e]] = std::max(visibility_[cw.prims[e]], cw.weights[e]);
      }
    }
    transposed_.push_back(std::move(t));
  }
  normalizer_ = static_cast<double>(pixels) * dims_;
}

Eigen::MatrixXd DistillProblem::render(size_t view, const Eigen::MatrixXd& features) const {
  const auto& cw = views_[view];
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cw.pixel_count()), dims_);
  for (size_t px = 0; px < cw.pixel_count(); ++px) {
    for (uint32_t e = cw.offsets[px]; e < cw.offsets[px + 1]; ++e) {
      out.row(static_cast<Eigen::Index>(px)) += static_cast<double>(cw.weights[e]) * features.row(cw.prims[e]);
    }
  }
  return out;
}

double DistillProblem::loss(const Eigen::MatrixXd& features) const {
  double total = 0.0;
  for (size_t v = 0; v < views_.size(); ++v) {
    const Eigen::MatrixXd rendered = render(v, features);
    const auto target = targets_[v].matrix().cast<double>();
    total += (rendered - target).cwiseAbs().sum();
  }
  return total / normalizer_;
}

Eigen::MatrixXd DistillProblem::gradient(const Eigen::MatrixXd& features) const {
  if (static_cast<size_t>(features.rows()) != prim_count_ || features.cols() != dims_) {
    throw ValidationError("distill: feature matrix has the wrong shape");
  }
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(prim_count_), dims_);
  for (size_t v = 0; v < views_.size(); ++v) {
    const Eigen::MatrixXd residual_sign =
        (render(v, features) - targets_[v].matrix().cast<double>()).unaryExpr([](double r) {
          return static_cast<double>((r > 0.0) - (r < 0.0));
        });
    const auto& t = transposed_[v];
    const size_t chunks = (prim_count_ + kRowChunk - 1) / kRowChunk;
    parallel_for(chunks, [&](size_t chunk) {
      const size_t end = std::min(prim_count_, (chunk + 1) * kRowChunk);
      for (size_t p = chunk * kRowChunk; p < end; ++p) {
        for (uint32_t e = t.offsets[p]; e < t.offsets[p + 1]; ++e) {
          grad.row(static_cast<Eigen::Index>(p)) += static_cast<double>(t.weights[e]) * residual_sign.row(t.pixels[e]);
        }
      }
    });
  }
  return grad / normalizer_;
}

DistillResult distill_scene_features(const GaussianScene& scene, std::span<const Camera> cameras,
                                     std::span<const FeatureMap> encoded_maps, const DistillConfig& config) {
  const DistillProblem problem(scene, cameras, encoded_maps, config.raster);
  const auto p = static_cast<Eigen::Index>(problem.prim_count());
  const int d = problem.dims();
  MatrixRM params = MatrixRM::Zero(p, d);
  AdamState state(static_cast<size_t>(params.size()));
  const AdamConfig adam{config.lr};

  DistillResult result;
  for (int it = 0; it < config.iterations; ++it) {
    const Eigen::MatrixXd f = params.cast<double>();
    result.loss_history.push_back(problem.loss(f));
    const MatrixRM grad = problem.gradient(f).cast<float>();
    adam_step(std::span(params.data(), static_cast<size_t>(params.size())),
              std::span<const float>(grad.data(), static_cast<size_t>(grad.size())), state, adam);
  }
  result.loss_history.push_back(problem.loss(params.cast<double>()));
  result.features = std::move(params);
  result.visibility = problem.visibility();
  return result;
}

}  // namespace fpgs
