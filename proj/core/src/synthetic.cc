#include "fpgs/synthetic.h"

#include <cmath>
#include <random>

namespace fpgs::synthetic {
namespace {

struct PlaneSpec {
  float center_x = 0.0f;
  float center_y = 0.0f;
  float depth = 4.0f;
  float half_x = 1.0f;
  float half_y = 1.0f;
  float spacing = 0.05f;
  int label = 0;        // used when stripes == 0
  int stripes = 0;      // > 0: label = stripe index along x
  float tilt = 0.0f;    // rotation about the vertical axis, radians
};

struct Builder {
  SyntheticScene out;
  std::mt19937_64 rng;
  float opacity = 0.99f;
  float sigma_per_spacing = 0.8f;
  float color_noise = 0.05f;
  float code_scale = 1.0f;

  explicit Builder(uint64_t seed) : rng(seed) {}

  void add_plane(const PlaneSpec& p) {
    const int nx = std::max(1, static_cast<int>(std::lround(2.0f * p.half_x / p.spacing)) + 1);
    const int ny = std::max(1, static_cast<int>(std::lround(2.0f * p.half_y / p.spacing)) + 1);
    const float sigma = sigma_per_spacing * p.spacing;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const float u = -p.half_x + static_cast<float>(i) * p.spacing;
        const float y = p.center_y - p.half_y + static_cast<float>(j) * p.spacing;
        int label = p.label;
        if (p.stripes > 0) {
          const float t = nx > 1 ? static_cast<float>(i) / static_cast<float>(nx - 1) : 0.0f;
          label = std::min(p.stripes - 1, static_cast<int>(t * static_cast<float>(p.stripes)));
        }
        GaussianPrim prim;
        prim.position = {p.center_x + u * std::cos(p.tilt), y, p.depth + u * std::sin(p.tilt)};
        prim.rotation = Eigen::Quaternionf(Eigen::AngleAxisf(-p.tilt, Eigen::Vector3f::UnitY()));
        prim.scale = {sigma, sigma, 0.1f * sigma};
        prim.opacity = opacity;
        const Eigen::Vector3f base = out.palette[static_cast<size_t>(label) % out.palette.size()];
        for (int c = 0; c < 3; ++c) {
          const float jitter = color_noise * static_cast<float>(2.0 * uniform01(rng) - 1.0);
          const float color = std::clamp(base[c] + jitter, 0.0f, 1.0f);
          prim.sh(c, 0) = (color - kShDcOffset) / kShC0;
        }
        out.scene.prims.push_back(prim);
        out.labels.push_back(label);
      }
    }
  }

  SyntheticScene finish(int regions, const Camera& camera) {
    out.regions = regions;
    out.camera = camera;
    MatrixRM codes = MatrixRM::Zero(static_cast<Eigen::Index>(out.labels.size()), kCodeDims);
    for (size_t i = 0; i < out.labels.size(); ++i) {
      codes.row(static_cast<Eigen::Index>(i)) = region_code(out.labels[i], code_scale).transpose();
    }
    out.scene.semantic = std::move(codes);
    out.scene.validate();
    return std::move(out);
  }
};

Camera axis_camera(float focal, int width, int height) {
  Camera cam;
  cam.fx = cam.fy = focal;
  cam.width = width;
  cam.height = height;
  cam.cx = 0.5f * static_cast<float>(width);
  cam.cy = 0.5f * static_cast<float>(height);
  return cam;
}

int stripe_of(int x, int width, int regions) {
  const double u = (static_cast<double>(x) + 0.5) / width;
  return std::min(regions - 1, static_cast<int>(u * regions));
}

MatrixRM relu(MatrixRM x) { return x.cwiseMax(0.0f); }

DenseLayer selection(int in, int out) {
  DenseLayer layer = DenseLayer::zeros(in, out);
  for (int i = 0; i < kCodeDims; ++i) layer.weight(i, i) = 1.0f;
  return layer;
}

}  // namespace

Eigen::VectorXf region_code(int region, float code_scale) {
  if (region < 0 || region >= kCodeDims) throw ValidationError("region index out of the code range");
  Eigen::VectorXf v = Eigen::VectorXf::Zero(kCodeDims);
  v(region) = code_scale;
  return v;
}

Eigen::VectorXf region_semantic(int region, float code_scale) {
  Eigen::VectorXf v = Eigen::VectorXf::Zero(kSemanticDims);
  v.head(kCodeDims) = region_code(region, code_scale);
  return v;
}

std::vector<Eigen::Vector3f> default_palette() {
  return {{0.80f, 0.30f, 0.25f}, {0.25f, 0.55f, 0.80f}, {0.35f, 0.75f, 0.35f}, {0.85f, 0.80f, 0.30f}};
}

std::vector<Eigen::Vector3f> style_palette() {
  return {{0.95f, 0.65f, 0.15f}, {0.20f, 0.20f, 0.55f}, {0.70f, 0.20f, 0.60f}, {0.15f, 0.45f, 0.30f}};
}

SyntheticScene make_plane_scene(const PlaneOptions& o) {
  if (o.n_per_side < 2 || o.regions < 1 || o.regions > kCodeDims) throw ValidationError("bad plane options");
  Builder b(o.seed);
  b.opacity = o.opacity;
  b.sigma_per_spacing = o.sigma_per_spacing;
  b.color_noise = o.color_noise;
  b.code_scale = o.code_scale;
  b.out.palette = o.palette.empty() ? default_palette() : o.palette;
  PlaneSpec p;
  p.depth = o.depth;
  p.half_x = p.half_y = o.half_extent;
  p.spacing = 2.0f * o.half_extent / static_cast<float>(o.n_per_side - 1);
  p.stripes = o.regions;
  b.add_plane(p);
  // The plane spans 80% of the narrower image side.
  const float focal = 0.8f * 0.5f * static_cast<float>(std::min(o.image_width, o.image_height)) * o.depth /
                      o.half_extent;
  return b.finish(o.regions, axis_camera(focal, o.image_width, o.image_height));
}

SyntheticScene make_three_plane_scene(uint64_t seed, int image_width, int image_height) {
  Builder b(seed);
  b.out.palette = default_palette();
  const float tilt = 0.26f;
  b.add_plane({0.0f, 0.0f, 5.0f, 1.6f, 1.2f, 0.05f, 0, 0, tilt});
  b.add_plane({-0.4f, 0.0f, 4.0f, 0.6f, 0.6f, 0.04f, 1, 0, tilt});
  b.add_plane({0.3f, 0.1f, 3.0f, 0.4f, 0.4f, 0.03f, 2, 0, tilt});
  return b.finish(3, axis_camera(180.0f * static_cast<float>(image_width) / 128.0f, image_width, image_height));
}

SyntheticScene make_occlusion_scene(float occluder_half_extent, uint64_t seed, int image_width, int image_height) {
  Builder b(seed);
  b.out.palette = default_palette();
  b.add_plane({0.0f, 0.0f, 5.0f, 1.5f, 1.5f, 0.05f, 0, 0});
  if (occluder_half_extent > 0.0f) {
    b.add_plane({0.0f, 0.0f, 3.0f, occluder_half_extent, occluder_half_extent, 0.03f, 1, 0});
  }
  return b.finish(2, axis_camera(144.0f * static_cast<float>(image_width) / 96.0f, image_width, image_height));
}

SyntheticScene make_preset(const std::string& name, uint64_t seed) {
  if (name == "plane2") {
    PlaneOptions o;
    o.seed = seed;
    return make_plane_scene(o);
  }
  if (name == "three-plane") return make_three_plane_scene(seed);
  if (name == "occlusion") return make_occlusion_scene(0.4f, seed);
  throw ValidationError("unknown preset '" + name + "' (expected plane2, three-plane or occlusion)");
}

std::vector<Camera> arc_trajectory(const Eigen::Vector3f& target, float radius, int views, float arc_degrees,
                                   float focal, int width, int height) {
  if (views < 1) throw ValidationError("arc_trajectory: need at least one view");
  std::vector<Camera> cams;
  const double arc = arc_degrees * 3.141592653589793 / 180.0;
  for (int i = 0; i < views; ++i) {
    const double t = views == 1 ? 0.0 : -0.5 * arc + arc * i / (views - 1);
    const Eigen::Vector3f eye = target + radius * Eigen::Vector3f(static_cast<float>(std::sin(t)), 0.0f,
                                                                  static_cast<float>(-std::cos(t)));
    cams.push_back(look_at(eye, target, {0.0f, -1.0f, 0.0f}, focal, width, height));
  }
  return cams;
}

std::vector<Camera> default_trajectory(const SyntheticScene& s, int views) {
  // Orbit the point straight ahead of the authoring camera at the median prim depth.
  std::vector<float> depths;
  for (const auto& p : s.scene.prims) depths.push_back(p.position.z());
  std::nth_element(depths.begin(), depths.begin() + static_cast<long>(depths.size() / 2), depths.end());
  const float radius = depths[depths.size() / 2];
  return arc_trajectory({0.0f, 0.0f, radius}, radius, views, 16.0f, s.camera.fx, s.camera.width, s.camera.height);
}

std::vector<int> render_labels(const SyntheticScene& s, const Camera& camera, const RasterConfig& raster) {
  MatrixRM onehot = MatrixRM::Zero(static_cast<Eigen::Index>(s.labels.size()), s.regions);
  for (size_t i = 0; i < s.labels.size(); ++i) onehot(static_cast<Eigen::Index>(i), s.labels[i]) = 1.0f;
  const FeatureRender r = rasterize_features(s.scene, camera, onehot, raster);
  std::vector<int> out(r.alpha.pixel_count(), -1);
  for (size_t p = 0; p < out.size(); ++p) {
    if (r.alpha.data[p] < 0.5f) continue;
    const float* v = r.features.data.data() + p * static_cast<size_t>(s.regions);
    out[p] = static_cast<int>(std::max_element(v, v + s.regions) - v);
  }
  return out;
}

FeatureMap reference_image(const ReferenceOptions& o) {
  if (o.regions < 1 || o.regions > kCodeDims) throw ValidationError("bad reference region count");
  const auto palette = o.palette.empty() ? style_palette() : o.palette;
  std::mt19937_64 rng(o.seed);
  FeatureMap img(o.height, o.width, 3);
  for (int y = 0; y < o.height; ++y) {
    for (int x = 0; x < o.width; ++x) {
      const Eigen::Vector3f& base = palette[static_cast<size_t>(stripe_of(x, o.width, o.regions)) % palette.size()];
      for (int c = 0; c < 3; ++c) {
        const float jitter = o.texture * static_cast<float>(2.0 * uniform01(rng) - 1.0);
        img.at(y, x, c) = std::clamp(base[c] + jitter, 0.0f, 1.0f);
      }
    }
  }
  return img;
}

FeatureMap reference_semantic(const ReferenceOptions& o) {
  if (o.semantic_stride < 1) throw ValidationError("semantic stride must be >= 1");
  const int h = std::max(1, o.height / o.semantic_stride);
  const int w = std::max(1, o.width / o.semantic_stride);
  FeatureMap sem(h, w, kSemanticDims);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::VectorXf v = region_semantic(stripe_of(x, w, o.regions), o.code_scale);
      std::copy(v.data(), v.data() + kSemanticDims, sem.pixel(y, x));
    }
  }
  return sem;
}

ReferenceBundle make_reference(const ReferenceOptions& options, const VggSliceWeights& vgg) {
  return make_reference_bundle(reference_image(options), reference_semantic(options), vgg);
}

AutoencoderWeights make_embedding_autoencoder() {
  AutoencoderWeights w;
  w.encoder = {selection(kSemanticDims, 128), selection(128, 64), selection(64, kCodeDims)};
  w.decoder = {selection(kCodeDims, 64), selection(64, 128), selection(128, kSemanticDims)};
  w.validate();
  return w;
}

DecoderWeights fit_inverse_decoder(const MlpVggWeights& encoder, const DecoderFitOptions& o, double* final_loss) {
  if (o.steps < 1 || o.batch < 1) throw ValidationError("decoder fit: steps and batch must be >= 1");
  DecoderWeights dec = DecoderWeights::random(mix_seed(o.seed, 1));
  std::mt19937_64 rng(mix_seed(o.seed, 2));
  AdamState s1w(static_cast<size_t>(dec.fc1.weight.size())), s1b(static_cast<size_t>(dec.fc1.bias.size()));
  AdamState s2w(static_cast<size_t>(dec.fc2.weight.size())), s2b(static_cast<size_t>(dec.fc2.bias.size()));
  const AdamConfig adam{o.lr};
  auto step = [&](std::span<float> p, const auto& g, AdamState& st) {
    adam_step(p, std::span<const float>(g.data(), static_cast<size_t>(g.size())), st, adam);
  };
  double loss = 0.0;
  for (int it = 0; it < o.steps; ++it) {
    MatrixRM colors(o.batch, 3);
    for (Eigen::Index i = 0; i < colors.size(); ++i) colors.data()[i] = static_cast<float>(uniform01(rng));
    const MatrixRM feats = mlp_vgg_forward(colors, encoder);
    const MatrixRM hidden = relu(dec.fc1.forward(feats));
    const MatrixRM logits = dec.fc2.forward(hidden);
    const MatrixRM out = logits.unaryExpr([](float z) { return 1.0f / (1.0f + std::exp(-z)); });
    const MatrixRM diff = out - colors;
    loss = diff.squaredNorm() / static_cast<double>(o.batch);
    const MatrixRM dz =
        (2.0f / static_cast<float>(o.batch)) * diff.cwiseProduct(out.cwiseProduct((1.0f - out.array()).matrix()));
    const MatrixRM g2w = dz.transpose() * hidden;
    const VectorF g2b = dz.colwise().sum().transpose();
    const MatrixRM dh = (dz * dec.fc2.weight).cwiseProduct((hidden.array() > 0.0f).cast<float>().matrix());
    const MatrixRM g1w = dh.transpose() * feats;
    const VectorF g1b = dh.colwise().sum().transpose();
    step({dec.fc1.weight.data(), static_cast<size_t>(dec.fc1.weight.size())}, g1w, s1w);
    step({dec.fc1.bias.data(), static_cast<size_t>(dec.fc1.bias.size())}, g1b, s1b);
    step({dec.fc2.weight.data(), static_cast<size_t>(dec.fc2.weight.size())}, g2w, s2w);
    step({dec.fc2.bias.data(), static_cast<size_t>(dec.fc2.bias.size())}, g2b, s2b);
  }
  if (final_loss) *final_loss = loss;
  return dec;
}

StyleNetworks make_networks(uint64_t seed) {
  StyleNetworks nets;
  nets.vgg = VggSliceWeights::random(mix_seed(seed, 1));
  nets.mlp_vgg = distill_mlp_vgg(*nets.vgg);
  DecoderFitOptions fit;
  fit.seed = mix_seed(seed, 2);
  nets.decoder = fit_inverse_decoder(nets.mlp_vgg, fit);
  nets.autoencoder = make_embedding_autoencoder();
  return nets;
}

}  // namespace fpgs::synthetic
