#include "fpgs/stylizer.h"

#include <cmath>

namespace fpgs {
namespace {

void report(const ProgressFn& progress, const std::string& stage, double fraction) {
  if (progress) progress(stage, fraction);
}

std::vector<float> opacities(const GaussianScene& scene) {
  std::vector<float> w(scene.size());
  for (size_t i = 0; i < scene.size(); ++i) w[i] = scene.prims[i].opacity;
  return w;
}

}  // namespace

NetworkCodec::NetworkCodec(MlpVggWeights encoder, DecoderWeights decoder)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  encoder_.validate();
  decoder_.validate();
}

MatrixRM NetworkCodec::encode(const MatrixRM& colors) const { return mlp_vgg_forward(colors, encoder_); }
MatrixRM NetworkCodec::decode(const MatrixRM& features) const { return decoder_forward(features, decoder_); }

StyleNetworks StyleNetworks::from_tensors(const TensorFile& file) {
  StyleNetworks nets;
  if (file.find("vgg.conv1_1.weight")) nets.vgg = VggSliceWeights::from_tensors(file);
  if (file.find("mlpvgg.fc1.weight")) {
    nets.mlp_vgg = MlpVggWeights::from_tensors(file);
  } else if (nets.vgg) {
    nets.mlp_vgg = distill_mlp_vgg(*nets.vgg);
  } else {
    throw ValidationError("weights file has neither mlpvgg.* nor vgg.* tensors");
  }
  if (!file.find("decoder.fc1.weight")) throw ValidationError("weights file has no decoder.* tensors");
  nets.decoder = DecoderWeights::from_tensors(file);
  if (!file.find("ae.enc.0.weight")) throw ValidationError("weights file has no ae.* tensors");
  nets.autoencoder = AutoencoderWeights::from_tensors(file);
  return nets;
}

void StyleNetworks::to_tensors(TensorFile& file) const {
  if (vgg) vgg->to_tensors(file);
  mlp_vgg.to_tensors(file);
  decoder.to_tensors(file);
  autoencoder.to_tensors(file);
}

ChannelStats channel_stats(const MatrixRM& features, std::span<const float> weights, float floor) {
  const auto rows = features.rows();
  const auto cols = features.cols();
  if (!weights.empty() && weights.size() != static_cast<size_t>(rows)) {
    throw ValidationError("channel_stats: weight count does not match row count");
  }
  ChannelStats s;
  s.mean = Eigen::VectorXd::Zero(cols);
  s.std = Eigen::VectorXd::Zero(cols);
  double total = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double w = weights.empty() ? 1.0 : weights[static_cast<size_t>(r)];
    s.mean += w * features.row(r).cast<double>().transpose();
    total += w;
  }
  if (total <= 0.0) throw ValidationError("channel_stats: total weight is zero");
  s.mean /= total;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double w = weights.empty() ? 1.0 : weights[static_cast<size_t>(r)];
    s.std += w * (features.row(r).cast<double>().transpose() - s.mean).array().square().matrix();
  }
  s.std = (s.std / total).cwiseSqrt().cwiseMax(static_cast<double>(floor));
  return s;
}

MatrixRM global_adain(const MatrixRM& content, std::span<const float> style_mean, std::span<const float> style_std) {
  if (content.rows() < 2) throw ValidationError("global_adain: need at least 2 rows");
  const auto cols = static_cast<size_t>(content.cols());
  if (style_mean.size() != cols || style_std.size() != cols) {
    throw ValidationError("global_adain: style statistics do not match the channel count");
  }
  const ChannelStats c = channel_stats(content);
  MatrixRM out(content.rows(), content.cols());
  for (Eigen::Index r = 0; r < content.rows(); ++r) {
    for (Eigen::Index k = 0; k < content.cols(); ++k) {
      const double normalized = (content(r, k) - c.mean(k)) / c.std(k);
      out(r, k) = static_cast<float>(style_std[static_cast<size_t>(k)] * normalized + style_mean[static_cast<size_t>(k)]);
    }
  }
  return out;
}

StyleAssignment semantic_match(const MatrixRM& scene_features, const StyleDictionary& dict, const MatchConfig& config) {
  if (dict.empty()) throw ValidationError("semantic_match: empty dictionary");
  if (scene_features.cols() != dict.keys.cols()) {
    throw ValidationError("semantic_match: feature width " + std::to_string(scene_features.cols()) +
                          " does not match key width " + std::to_string(dict.keys.cols()));
  }
  if (!(config.temperature > 0.0f)) throw ValidationError("semantic_match: temperature must be > 0");

  auto normalized_rows = [](MatrixRM m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const float n = m.row(r).norm();
      if (n > 0.0f) m.row(r) /= n;
    }
    return m;
  };
  const MatrixRM keys = config.normalize_keys ? normalized_rows(dict.keys) : dict.keys;
  const auto t = static_cast<int>(dict.size());
  const double inv_tau = 1.0 / config.temperature;

  MatrixRM attention = map_row_chunks(scene_features, t, [&](const MatrixRM& x) {
    const MatrixRM q = config.normalize_keys ? normalized_rows(x) : x;
    MatrixRM logits = q * keys.transpose();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double top = logits.row(r).maxCoeff();
      double sum = 0.0;
      Eigen::VectorXd e(t);
      for (int j = 0; j < t; ++j) {
        e(j) = std::exp((logits(r, j) - top) * inv_tau);
        sum += e(j);
      }
      for (int j = 0; j < t; ++j) logits(r, j) = static_cast<float>(e(j) / sum);
    }
    return logits;
  });

  StyleAssignment a;
  a.mean = map_row_chunks(attention, static_cast<int>(dict.mus.cols()),
                          [&](const MatrixRM& w) -> MatrixRM { return w * dict.mus; });
  a.std = map_row_chunks(attention, static_cast<int>(dict.sigmas.cols()),
                         [&](const MatrixRM& w) -> MatrixRM { return w * dict.sigmas; });
  if (config.keep_attention) a.attention = std::move(attention);
  return a;
}

StylizeStep stylize_once(const MatrixRM& base_colors, const StyleAssignment& assignment, const ColorCodec& codec,
                         std::span<const float> weights) {
  if (base_colors.rows() < 2) throw ValidationError("stylize_once: need at least 2 prims");
  if (assignment.size() != static_cast<size_t>(base_colors.rows())) {
    throw ValidationError("stylize_once: assignment has " + std::to_string(assignment.size()) + " rows for " +
                          std::to_string(base_colors.rows()) + " prims");
  }
  StylizeStep step;
  const MatrixRM content = codec.encode(base_colors);
  if (content.cols() != assignment.mean.cols() || content.cols() != assignment.std.cols()) {
    throw ValidationError("stylize_once: codec feature width does not match the style codes");
  }
  step.content_stats = channel_stats(content, weights);
  const Eigen::VectorXd& mu = step.content_stats.mean;
  const Eigen::VectorXd& sd = step.content_stats.std;
  step.features.resize(content.rows(), content.cols());
  const auto rows = static_cast<size_t>(content.rows());
  const size_t chunks = (rows + kRowChunk - 1) / kRowChunk;
  parallel_for(chunks, [&](size_t chunk) {
    const size_t end = std::min(rows, (chunk + 1) * kRowChunk);
    for (size_t i = chunk * kRowChunk; i < end; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      for (Eigen::Index k = 0; k < content.cols(); ++k) {
        const double normalized = (content(r, k) - mu(k)) / sd(k);
        step.features(r, k) =
            static_cast<float>(static_cast<double>(assignment.std(r, k)) * normalized + assignment.mean(r, k));
      }
    }
  });
  step.colors = codec.decode(step.features);
  return step;
}

void StylizeConfig::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (clusters < 1) throw ValidationError("clusters must be >= 1");
  if (!(temperature > 0.0f)) throw ValidationError("temperature must be > 0");
}

IterativeResult iterative_stylize(const GaussianScene& scene, const StyleAssignment& assignment,
                                  const ColorCodec& codec, const StylizeConfig& config, const ProgressFn& progress) {
  config.validate();
  const std::vector<float> weights = config.opacity_weighted ? opacities(scene) : std::vector<float>{};
  IterativeResult result;
  MatrixRM colors = diffuse_colors(scene);
  for (int it = 0; it < config.iterations; ++it) {
    StylizeStep step = stylize_once(colors, assignment, codec, weights);
    colors = step.colors;
    result.diffuse_history.push_back(colors);
    result.steps.push_back(std::move(step));
    report(progress, "iteration " + std::to_string(it + 1), static_cast<double>(it + 1) / config.iterations);
  }
  result.scene = update_dc(scene, colors, config.sh_zero_rest);
  return result;
}

MatrixRM decoded_scene_features(const GaussianScene& scene, const AutoencoderWeights& autoencoder) {
  if (!scene.has_semantic()) throw ValidationError("scene has no semantic field");
  if (scene.semantic->rows() != static_cast<Eigen::Index>(scene.size())) {
    throw ValidationError("semantic field row count does not match the prim count");
  }
  return decode_features(*scene.semantic, autoencoder);
}

StylizeResult stylize_with_dictionary(const GaussianScene& scene, StyleDictionary dict, const StyleNetworks& nets,
                                      const StylizeConfig& config, const ProgressFn& progress) {
  config.validate();
  report(progress, "decode", 0.0);
  const MatrixRM decoded = decoded_scene_features(scene, nets.autoencoder);
  report(progress, "match", 0.0);
  StylizeResult result;
  result.assignment = semantic_match(decoded, dict, {config.temperature, config.normalize_keys, true});
  result.dictionary = std::move(dict);
  const NetworkCodec codec = nets.codec();
  IterativeResult iter = iterative_stylize(scene, result.assignment, codec, config, progress);
  result.scene = std::move(iter.scene);
  result.diffuse_history = std::move(iter.diffuse_history);
  result.steps = std::move(iter.steps);
  report(progress, "done", 1.0);
  return result;
}

StylizeResult stylize_scene(const GaussianScene& scene, std::span<const ReferenceBundle> refs,
                            const StyleNetworks& nets, const StylizeConfig& config, const ProgressFn& progress) {
  config.validate();
  if (!scene.has_semantic()) throw ValidationError("scene has no semantic field");
  report(progress, "dictionary", 0.0);
  StyleDictionary dict = build_dictionary(refs, config.clusters, config.seed);
  return stylize_with_dictionary(scene, std::move(dict), nets, config, progress);
}

FeatureMap attention_heatmap(const StyleAssignment& assignment, const GaussianScene& scene, const Camera& camera,
                             int entry, const RasterConfig& raster) {
  if (assignment.attention.size() == 0) throw ValidationError("attention_heatmap: assignment kept no attention");
  if (entry < 0 || entry >= assignment.attention.cols()) {
    throw ValidationError("attention_heatmap: entry " + std::to_string(entry) + " out of range");
  }
  if (assignment.attention.rows() != static_cast<Eigen::Index>(scene.size())) {
    throw ValidationError("attention_heatmap: assignment does not match the scene");
  }
  const MatrixRM column = assignment.attention.col(entry);
  FeatureMap map = rasterize_features(scene, camera, column, raster).features;
  for (float& v : map.data) v = std::clamp(v, 0.0f, 1.0f);
  return map;
}

FeatureMap render_semantic_map(const GaussianScene& scene, const Camera& camera, const AutoencoderWeights& autoencoder,
                               const RasterConfig& raster) {
  if (!scene.has_semantic()) throw ValidationError("scene has no semantic field");
  const FeatureMap codes = rasterize_features(scene, camera, *scene.semantic, raster).features;
  return FeatureMap::from_matrix(decode_features(codes.matrix(), autoencoder), codes.height, codes.width);
}

}  // namespace fpgs
