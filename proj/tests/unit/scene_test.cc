#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "fpgs/scene.h"
#include "test_support.h"

namespace fpgs {
namespace {

RawGaussianRecord unit_record() {
  RawGaussianRecord r;
  r.rotation = {1, 0, 0, 0};
  return r;
}

TEST(Activate, ScalarActivations) {
  RawGaussianRecord r = unit_record();
  r.rotation = {2, 0, 0, 0};
  const GaussianScene s = activate(std::span(&r, 1));
  const auto& g = s.prims[0];
  EXPECT_EQ(g.opacity, 0.5f);
  EXPECT_EQ(g.scale, Eigen::Vector3f::Ones());
  EXPECT_EQ(g.rotation.w(), 1.0f);
  EXPECT_EQ(g.rotation.vec(), Eigen::Vector3f::Zero());
  EXPECT_NO_THROW(s.validate());
}

TEST(Activate, RejectsNonFiniteAndZeroRotation) {
  RawGaussianRecord r = unit_record();
  r.position[1] = NAN;
  EXPECT_THROW(activate(std::span(&r, 1)), ValidationError);
  RawGaussianRecord z = unit_record();
  z.rotation = {0, 0, 0, 0};
  EXPECT_THROW(activate(std::span(&z, 1)), ValidationError);
}

TEST(Activate, DeactivateRoundTrip) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<RawGaussianRecord> recs(200);
  for (auto& r : recs) {
    auto* f = reinterpret_cast<float*>(&r);
    for (int i = 0; i < kPlyFloatProperties; ++i) f[i] = n(rng);
    r.normal = {0, 0, 0};
  }
  const GaussianScene s = activate(recs);
  const auto back = deactivate(s);
  for (size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].position, recs[i].position);
    EXPECT_EQ(back[i].f_dc, recs[i].f_dc);
    EXPECT_EQ(back[i].f_rest, recs[i].f_rest);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(back[i].log_scale[k], recs[i].log_scale[k], 1e-5);
    EXPECT_NEAR(back[i].opacity_logit, recs[i].opacity_logit, 1e-4);
  }
  // activating again gives the same scene to float rounding
  const GaussianScene again = activate(back);
  for (size_t i = 0; i < s.size(); ++i) {
    EXPECT_LE((again.prims[i].scale - s.prims[i].scale).norm(), 1e-5f * s.prims[i].scale.norm());
    EXPECT_NEAR(again.prims[i].opacity, s.prims[i].opacity, 1e-6);
  }
}

TEST(Scene, ValidateCatchesViolations) {
  GaussianScene s;
  s.prims.resize(2);
  EXPECT_NO_THROW(s.validate());
  auto bad = s;
  bad.prims[1].scale.x() = 0.0f;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = s;
  bad.prims[0].opacity = 1.0f;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = s;
  bad.prims[0].rotation.coeffs() *= 1.01f;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = s;
  bad.semantic = MatrixRM::Zero(3, 16);
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Covariance, AxisAlignedAndIsotropic) {
  GaussianPrim g;
  g.scale = {1, 2, 3};
  EXPECT_TRUE(covariance(g).isApprox(Eigen::Vector3f(1, 4, 9).asDiagonal().toDenseMatrix()));
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    g.rotation = testing::random_rotation(rng);
    g.scale = Eigen::Vector3f::Constant(0.7f);
    EXPECT_LE((covariance(g) - 0.49f * Eigen::Matrix3f::Identity()).cwiseAbs().maxCoeff(), 1e-6f);
  }
}

TEST(Covariance, EigenvaluesAreSquaredScales) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.1f, 2.0f);
  for (int i = 0; i < 100; ++i) {
    GaussianPrim g;
    g.rotation = testing::random_rotation(rng);
    g.scale = {u(rng), u(rng), u(rng)};
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(covariance(g).cast<double>());
    Eigen::Vector3d expect = g.scale.cast<double>().cwiseAbs2();
    std::sort(expect.data(), expect.data() + 3);
    EXPECT_LE((es.eigenvalues() - expect).cwiseAbs().maxCoeff(), 1e-5 * expect.maxCoeff());
  }
}

TEST(ShColor, ZeroCoefficientsWithOffset) {
  const ShMatrix sh = ShMatrix::Zero();
  EXPECT_EQ(sh_diffuse(sh, true), Eigen::Vector3f::Constant(0.5f));
  EXPECT_EQ(sh_diffuse(sh, false), Eigen::Vector3f::Zero());
  EXPECT_FLOAT_EQ(kShC0, 0.2820947918f);
}

TEST(ShColor, NoSpecularMeansViewIndependent) {
  std::mt19937_64 rng(9);
  ShMatrix sh = ShMatrix::Zero();
  sh.col(0) = Eigen::Vector3f(0.3f, -1.0f, 2.0f);
  const Eigen::Vector3f ref = sh_color(sh, Eigen::Vector3f::UnitZ(), true);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3f d = testing::random_rotation(rng) * Eigen::Vector3f::UnitX();
    EXPECT_EQ(sh_color(sh, d, true), ref);
  }
}

TEST(ShColor, DegreeOneIsOdd) {
  std::mt19937_64 rng(10);
  std::normal_distribution<float> n(0.0f, 1.0f);
  ShMatrix sh = ShMatrix::Zero();
  for (int c = 0; c < 3; ++c)
    for (int k = 1; k <= 3; ++k) sh(c, k) = n(rng);
  const Eigen::Vector3f up = sh_color(sh, Eigen::Vector3f::UnitZ(), false);
  const Eigen::Vector3f down = sh_color(sh, -Eigen::Vector3f::UnitZ(), false);
  EXPECT_EQ(up, -down);
  EXPECT_NE(up, Eigen::Vector3f::Zero());
}

TEST(ShColor, BasisIsOrthonormalOverTheSphere) {
  // Fibonacci-sphere quadrature of <Y_i, Y_j> for the 15 non-constant real SH functions.
  const int n = 200000;
  Eigen::Matrix<double, 15, 15> gram = Eigen::Matrix<double, 15, 15>::Zero();
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(1.0 - z * z);
    const double phi = golden * i;
    const Eigen::Vector3f d(float(r * std::cos(phi)), float(r * std::sin(phi)), float(z));
    const auto b = sh_basis(d);
    Eigen::Matrix<double, 15, 1> v;
    for (int k = 0; k < 15; ++k) v[k] = b[k];
    gram += v * v.transpose();
  }
  gram *= 4.0 * M_PI / n;
  EXPECT_LE((gram - Eigen::Matrix<double, 15, 15>::Identity()).cwiseAbs().maxCoeff(), 2e-3);
}

TEST(ShColor, RejectsNonUnitDirections) {
  const ShMatrix sh = ShMatrix::Zero();
  EXPECT_NO_THROW(sh_color(sh, Eigen::Vector3f(0, 0, 1.0005f), true));
  EXPECT_THROW(sh_color(sh, Eigen::Vector3f(0, 0, 1.1f), true), ValidationError);
}

TEST(UpdateDc, IdentityLeavesCoefficientsUntouched) {
  const GaussianScene s = testing::random_scene(100, 1);
  const GaussianScene u = update_dc(s, diffuse_colors(s));
  for (size_t i = 0; i < s.size(); ++i) EXPECT_EQ(u.prims[i].sh, s.prims[i].sh);
}

TEST(UpdateDc, MidGrayIsZeroDc) {
  GaussianScene s = testing::random_scene(5, 2);
  const GaussianScene u = update_dc(s, MatrixRM::Constant(5, 3, 0.5f));
  for (const auto& p : u.prims) EXPECT_EQ(p.sh.col(0), Eigen::Vector3f::Zero());
}

TEST(UpdateDc, ReproducesRandomColors) {
  std::mt19937_64 rng(6);
  for (bool offset : {true, false}) {
    GaussianScene s = testing::random_scene(300, 3);
    s.sh_offset_enabled = offset;
    const MatrixRM target = testing::random_matrix(300, 3, rng, 0.0f, 1.0f);
    const GaussianScene u = update_dc(s, target, /*zero_rest=*/true);
    for (size_t i = 0; i < u.size(); ++i) {
      const Eigen::Vector3f d = testing::random_rotation(rng) * Eigen::Vector3f::UnitZ();
      const Eigen::Vector3f c = sh_color(u.prims[i].sh, d, offset);
      EXPECT_LE((c - target.row(Eigen::Index(i)).transpose()).cwiseAbs().maxCoeff(), 1e-6f);
    }
    // higher orders survive without zero_rest
    const GaussianScene keep = update_dc(s, target);
    EXPECT_EQ(keep.prims[0].sh.rightCols<15>(), s.prims[0].sh.rightCols<15>());
  }
}

TEST(UpdateDc, RejectsBadShapes) {
  const GaussianScene s = testing::random_scene(4, 2);
  EXPECT_THROW(update_dc(s, MatrixRM::Zero(3, 3)), ValidationError);
  MatrixRM nan = MatrixRM::Zero(4, 3);
  nan(0, 0) = NAN;
  EXPECT_THROW(update_dc(s, nan), ValidationError);
}

TEST(OverlaySh, PreservesGeometryBytes) {
  std::mt19937_64 rng(8);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<RawGaussianRecord> recs(50);
  for (auto& r : recs) {
    auto* f = reinterpret_cast<float*>(&r);
    for (int i = 0; i < kPlyFloatProperties; ++i) f[i] = n(rng);
  }
  const GaussianScene s = activate(recs);
  const GaussianScene styled = update_dc(s, MatrixRM::Constant(50, 3, 0.25f), true);
  const auto out = overlay_sh(recs, styled);
  for (size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(out[i].position, recs[i].position);
    EXPECT_EQ(out[i].normal, recs[i].normal);
    EXPECT_EQ(out[i].rotation, recs[i].rotation);
    EXPECT_EQ(out[i].log_scale, recs[i].log_scale);
    EXPECT_EQ(out[i].opacity_logit, recs[i].opacity_logit);
    for (float v : out[i].f_rest) EXPECT_EQ(v, 0.0f);
  }
  EXPECT_THROW(overlay_sh(std::span(recs).first(3), styled), ValidationError);
}

}  // namespace
}  // namespace fpgs
