#include "fpgs/scene.h"

#include <cmath>
#include <string>

namespace fpgs {
namespace {

constexpr float kShC1 = 0.4886025119029199f;
constexpr float kShC2[5] = {1.0925484305920792f, -1.0925484305920792f, 0.31539156525252005f,
                            -1.0925484305920792f, 0.5462742152960396f};
constexpr float kShC3[7] = {-0.5900435899266435f, 2.890611442640554f, -0.4570457994644658f, 0.3731763325901154f,
                            -0.4570457994644658f, 1.445305721320277f, -0.5900435899266435f};

bool all_finite(std::span<const float> v) {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

float logit(float p) { return std::log(p / (1.0f - p)); }

}  // namespace

void GaussianScene::validate() const {
  for (size_t i = 0; i < prims.size(); ++i) {
    const auto& g = prims[i];
    const std::string where = "prim " + std::to_string(i);
    if (!g.position.allFinite() || !g.scale.allFinite() || !g.sh.allFinite() || !std::isfinite(g.opacity) ||
        !g.rotation.coeffs().allFinite()) {
      throw ValidationError(where + " has non-finite values");
    }
    if (std::abs(g.rotation.norm() - 1.0f) > 1e-6f) throw ValidationError(where + " rotation is not unit");
    if ((g.scale.array() <= 0.0f).any()) throw ValidationError(where + " has non-positive scale");
    if (!(g.opacity > 0.0f && g.opacity < 1.0f)) throw ValidationError(where + " opacity outside (0,1)");
  }
  if (semantic) {
    if (static_cast<size_t>(semantic->rows()) != prims.size()) {
      throw ValidationError("semantic feature count does not match prim count");
    }
    if (!semantic->allFinite()) throw ValidationError("semantic features are not finite");
  }
}

GaussianScene activate(std::span<const RawGaussianRecord> records) {
  GaussianScene scene;
  scene.prims.resize(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!all_finite(std::span(reinterpret_cast<const float*>(&r), kPlyFloatProperties))) {
      throw ValidationError("record " + std::to_string(i) + " has non-finite values");
    }
    auto& g = scene.prims[i];
    g.position = {r.position[0], r.position[1], r.position[2]};
    Eigen::Quaternionf q(r.rotation[0], r.rotation[1], r.rotation[2], r.rotation[3]);
    const float n = q.norm();
    if (!(n > 0.0f)) throw ValidationError("record " + std::to_string(i) + " has a zero-norm rotation");
    q.coeffs() /= n;
    g.rotation = q;
    g.scale = {std::exp(r.log_scale[0]), std::exp(r.log_scale[1]), std::exp(r.log_scale[2])};
    g.opacity = 1.0f / (1.0f + std::exp(-r.opacity_logit));
    for (int c = 0; c < 3; ++c) {
      g.sh(c, 0) = r.f_dc[c];
      for (int k = 0; k < 15; ++k) g.sh(c, k + 1) = r.f_rest[c * 15 + k];
    }
  }
  return scene;
}

std::vector<RawGaussianRecord> deactivate(const GaussianScene& scene) {
  std::vector<RawGaussianRecord> out(scene.size());
  for (size_t i = 0; i < scene.size(); ++i) {
    const auto& g = scene.prims[i];
    auto& r = out[i];
    r.position = {g.position.x(), g.position.y(), g.position.z()};
    r.rotation = {g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z()};
    r.log_scale = {std::log(g.scale.x()), std::log(g.scale.y()), std::log(g.scale.z())};
    r.opacity_logit = logit(g.opacity);
    for (int c = 0; c < 3; ++c) {
      r.f_dc[c] = g.sh(c, 0);
      for (int k = 0; k < 15; ++k) r.f_rest[c * 15 + k] = g.sh(c, k + 1);
    }
  }
  return out;
}

std::vector<RawGaussianRecord> overlay_sh(std::span<const RawGaussianRecord> original, const GaussianScene& scene) {
  if (original.size() != scene.size()) throw ValidationError("overlay_sh: record count does not match scene");
  std::vector<RawGaussianRecord> out(original.begin(), original.end());
  for (size_t i = 0; i < out.size(); ++i) {
    const auto& sh = scene.prims[i].sh;
    for (int c = 0; c < 3; ++c) {
      out[i].f_dc[c] = sh(c, 0);
      for (int k = 0; k < 15; ++k) out[i].f_rest[c * 15 + k] = sh(c, k + 1);
    }
  }
  return out;
}

Eigen::Matrix3f covariance(const GaussianPrim& prim) {
  const Eigen::Matrix3f r = prim.rotation.toRotationMatrix();
  const Eigen::Matrix3f m = r * prim.scale.asDiagonal();
  return m * m.transpose();
}

std::array<float, 15> sh_basis(const Eigen::Vector3f& d) {
  const float x = d.x(), y = d.y(), z = d.z();
  const float xx = x * x, yy = y * y, zz = z * z;
  const float xy = x * y, yz = y * z, xz = x * z;
  return {
      -kShC1 * y,
      kShC1 * z,
      -kShC1 * x,
      kShC2[0] * xy,
      kShC2[1] * yz,
      kShC2[2] * (2.0f * zz - xx - yy),
      kShC2[3] * xz,
      kShC2[4] * (xx - yy),
      kShC3[0] * y * (3.0f * xx - yy),
      kShC3[1] * xy * z,
      kShC3[2] * y * (4.0f * zz - xx - yy),
      kShC3[3] * z * (2.0f * zz - 3.0f * xx - 3.0f * yy),
      kShC3[4] * x * (4.0f * zz - xx - yy),
      kShC3[5] * z * (xx - yy),
      kShC3[6] * x * (xx - 3.0f * yy),
  };
}

Eigen::Vector3f sh_diffuse(const ShMatrix& sh, bool offset) {
  Eigen::Vector3f c = sh.col(0) * kShC0;
  if (offset) c.array() += kShDcOffset;
  return c;
}

Eigen::Vector3f sh_color(const ShMatrix& sh, const Eigen::Vector3f& dir, bool offset) {
  const float n = dir.norm();
  if (!(std::abs(n - 1.0f) <= 1e-3f)) {
    throw ValidationError("sh_color: view direction is not unit length (norm " + std::to_string(n) + ")");
  }
  const auto basis = sh_basis(dir / n);
  Eigen::Vector3f c = sh_diffuse(sh, offset);
  for (int k = 0; k < 15; ++k) c += sh.col(k + 1) * basis[k];
  return c;
}

MatrixRM diffuse_colors(const GaussianScene& scene) {
  MatrixRM out(static_cast<Eigen::Index>(scene.size()), 3);
  for (size_t i = 0; i < scene.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = sh_diffuse(scene.prims[i].sh, scene.sh_offset_enabled).transpose();
  }
  return out;
}

GaussianScene update_dc(const GaussianScene& scene, const MatrixRM& stylized_diffuse, bool zero_rest) {
  if (static_cast<size_t>(stylized_diffuse.rows()) != scene.size() || stylized_diffuse.cols() != 3) {
    throw ValidationError("update_dc: expected " + std::to_string(scene.size()) + " x 3 colors");
  }
  if (!stylized_diffuse.allFinite()) throw ValidationError("update_dc: non-finite colors");
  GaussianScene out = scene;
  const float offset = scene.sh_offset_enabled ? kShDcOffset : 0.0f;
  for (size_t i = 0; i < out.size(); ++i) {
    auto& sh = out.prims[i].sh;
    for (int c = 0; c < 3; ++c) {
      const float target = stylized_diffuse(static_cast<Eigen::Index>(i), c);
      const float current = sh_diffuse(sh, scene.sh_offset_enabled)[c];
      // A color that already matches keeps its coefficient bit for bit.
      if (target != current) sh(c, 0) = (target - offset) / kShC0;
    }
    if (zero_rest) sh.rightCols<15>().setZero();
  }
  return out;
}

GaussianScene without_view_dependence(const GaussianScene& scene) {
  GaussianScene out = scene;
  for (auto& g : out.prims) g.sh.rightCols<15>().setZero();
  return out;
}

}  // namespace fpgs
