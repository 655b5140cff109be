#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Geometry>

#include "fpgs/common.h"
#include "fpgs/tensor_io.h"

namespace fpgs {

/// Degree-0 real SH constant, 1 / (2 sqrt(pi)).
inline constexpr float kShC0 = 0.28209479177387814f;
/// Offset added to the DC color by public 3DGS assets.
inline constexpr float kShDcOffset = 0.5f;
inline constexpr int kShCoefficients = 16;

using ShMatrix = Eigen::Matrix<float, 3, kShCoefficients, Eigen::RowMajor>;

struct GaussianPrim {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  Eigen::Quaternionf rotation = Eigen::Quaternionf::Identity();
  Eigen::Vector3f scale = Eigen::Vector3f::Ones();
  float opacity = 0.5f;
  /// Column 0 is the DC term, columns 1..15 the higher orders, one row per color channel.
  ShMatrix sh = ShMatrix::Zero();
};

/// Immutable-by-convention scene snapshot. Operations return new scenes.
struct GaussianScene {
  std::vector<GaussianPrim> prims;
  /// Optional P x D low-dimensional semantic features, one row per prim.
  std::optional<MatrixRM> semantic;
  bool sh_offset_enabled = true;
  Eigen::Vector3f background = Eigen::Vector3f::Zero();

  size_t size() const { return prims.size(); }
  bool has_semantic() const { return semantic.has_value(); }
  /// Throws ValidationError on any invariant violation.
  void validate() const;
};

GaussianScene activate(std::span<const RawGaussianRecord> records);
/// Inverse activations; geometry round-trips up to exp/log rounding.
std::vector<RawGaussianRecord> deactivate(const GaussianScene& scene);
/// Copies `original` and replaces only the SH coefficients with those of `scene`,
/// so geometry bytes are preserved exactly.
std::vector<RawGaussianRecord> overlay_sh(std::span<const RawGaussianRecord> original, const GaussianScene& scene);

/// Sigma = R diag(s^2) R^T.
Eigen::Matrix3f covariance(const GaussianPrim& prim);

/// Real SH basis for degrees 1..3 (15 values), 3DGS sign convention.
std::array<float, 15> sh_basis(const Eigen::Vector3f& dir);

/// View-independent color K[:,0] * C0 (+0.5 when offset is on).
Eigen::Vector3f sh_diffuse(const ShMatrix& sh, bool offset);
/// Full color diffuse + K[:,1:] * basis(d). d must be unit length; deviations up to 1e-3
/// are renormalized, larger ones throw ValidationError.
Eigen::Vector3f sh_color(const ShMatrix& sh, const Eigen::Vector3f& dir, bool offset);

/// P x 3 view-independent base colors.
MatrixRM diffuse_colors(const GaussianScene& scene);

/// Rewrites the DC coefficients so diffuse_colors(result) == stylized_diffuse.
/// Higher orders are kept unless zero_rest is set.
GaussianScene update_dc(const GaussianScene& scene, const MatrixRM& stylized_diffuse, bool zero_rest = false);

/// Scene with every higher-order SH coefficient zeroed.
GaussianScene without_view_dependence(const GaussianScene& scene);

}  // namespace fpgs
