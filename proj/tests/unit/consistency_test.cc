#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fpgs/consistency.h"
#include "fpgs/synthetic.h"
#include "test_support.h"

namespace fpgs {
namespace {

FeatureMap constant_flow(int h, int w, float fx, float fy) {
  FeatureMap f(h, w, 2);
  for (size_t p = 0; p < f.pixel_count(); ++p) f.data[2 * p] = fx, f.data[2 * p + 1] = fy;
  return f;
}

FlowField full_mask_flow(int h, int w, float fx = 0.0f, float fy = 0.0f) {
  FlowField f{constant_flow(h, w, fx, fy), FeatureMap(h, w, 1)};
  for (float& m : f.mask.data) m = 1.0f;
  return f;
}

FeatureMap filled(int h, int w, int c, float v) {
  FeatureMap m(h, w, c);
  for (float& x : m.data) x = v;
  return m;
}

Camera shifted(Camera cam, float tx) {
  cam.translation.x() += tx;
  return cam;
}

// ----- warp_image -----

TEST(Warp, ZeroFlowIsIdentity) {
  std::mt19937_64 rng(1);
  const FeatureMap img = testing::random_map(20, 30, 3, rng);
  const WarpResult w = warp_image(img, constant_flow(20, 30, 0, 0));
  EXPECT_EQ(w.image.data, img.data);
  for (uint8_t v : w.valid) EXPECT_EQ(v, 1);
}

TEST(Warp, IntegerShiftIsArrayShift) {
  std::mt19937_64 rng(2);
  const FeatureMap img = testing::random_map(16, 24, 3, rng);
  const WarpResult w = warp_image(img, constant_flow(16, 24, 2, 0));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 24; ++x) {
      const bool inside = x + 2 < 24;
      ASSERT_EQ(w.valid[size_t(y * 24 + x)], inside ? 1 : 0);
      if (!inside) continue;
      for (int c = 0; c < 3; ++c) ASSERT_EQ(w.image.at(y, x, c), img.at(y, x + 2, c));
    }
}

TEST(Warp, HalfPixelAveragesNeighbors) {
  std::mt19937_64 rng(3);
  const FeatureMap img = testing::random_map(8, 8, 2, rng);
  const WarpResult wx = warp_image(img, constant_flow(8, 8, 0.5f, 0));
  const WarpResult wy = warp_image(img, constant_flow(8, 8, 0, 0.5f));
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x)
      for (int c = 0; c < 2; ++c) {
        EXPECT_NEAR(wx.image.at(y, x, c), 0.5f * (img.at(y, x, c) + img.at(y, x + 1, c)), 1e-6f);
        EXPECT_NEAR(wy.image.at(y, x, c), 0.5f * (img.at(y, x, c) + img.at(y + 1, x, c)), 1e-6f);
      }
  // the last column would need a tap past the edge
  for (int y = 0; y < 8; ++y) EXPECT_EQ(wx.valid[size_t(y * 8 + 7)], 0);
}

TEST(Warp, RejectsBadFlow) {
  const FeatureMap img(4, 4, 3);
  EXPECT_THROW(warp_image(img, FeatureMap(4, 4, 3)), ValidationError);
  FeatureMap nan = constant_flow(4, 4, 0, 0);
  nan.data[3] = NAN;
  EXPECT_THROW(warp_image(img, nan), ValidationError);
}

// ----- warp_error -----

TEST(WarpError, IdenticalImagesAreZero) {
  std::mt19937_64 rng(4);
  const FeatureMap img = testing::random_map(12, 12, 3, rng);
  EXPECT_EQ(warp_error(img, img, full_mask_flow(12, 12)), 0.0);
}

TEST(WarpError, EqualConstantsUnderAnyFlow) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  FlowField f = full_mask_flow(10, 10);
  for (float& v : f.flow.data) v = u(rng);
  const FeatureMap a = filled(10, 10, 3, 0.3f);
  EXPECT_NEAR(warp_error(a, a, f), 0.0, 1e-7);
}

TEST(WarpError, ClosedFormHalf) {
  const FeatureMap zero = filled(9, 9, 3, 0.0f), half = filled(9, 9, 3, 0.5f);
  FlowField f = full_mask_flow(9, 9, 1.25f, -0.5f);
  EXPECT_NEAR(warp_error(zero, half, f), 0.5, 1e-7);
}

TEST(WarpError, SymmetricAndNonNegative) {
  std::mt19937_64 rng(6);
  const FeatureMap a = testing::random_map(10, 10, 3, rng), b = testing::random_map(10, 10, 3, rng);
  const FlowField f = full_mask_flow(10, 10);
  EXPECT_GE(warp_error(a, b, f), 0.0);
  EXPECT_DOUBLE_EQ(warp_error(a, b, f), warp_error(b, a, f));
}

TEST(WarpError, MaskRestrictsPixels) {
  FeatureMap target = filled(4, 4, 3, 0.0f);
  const FeatureMap source = filled(4, 4, 3, 0.0f);
  target.at(0, 0, 0) = target.at(0, 0, 1) = target.at(0, 0, 2) = 1.0f;
  FlowField f = full_mask_flow(4, 4);
  EXPECT_NEAR(warp_error(target, source, f), std::sqrt(1.0 / 16.0), 1e-12);
  f.mask.at(0, 0, 0) = 0.0f;
  EXPECT_EQ(warp_error(target, source, f), 0.0);
  for (float& m : f.mask.data) m = 0.0f;
  EXPECT_THROW(warp_error(target, source, f), ValidationError);
  EXPECT_THROW(warp_error(target, filled(4, 5, 3, 0), full_mask_flow(4, 4)), ValidationError);
}

// ----- gt flow -----

TEST(GtFlow, SameCameraIsZeroFlowOnAlpha) {
  const auto syn = synthetic::make_occlusion_scene(0.4f);
  const FlowField f = gt_flow_from_depth(syn.scene, syn.camera, syn.camera);
  const DepthRender d = rasterize_depth(syn.scene, syn.camera);
  size_t on = 0;
  for (int y = 0; y < f.mask.height; ++y)
    for (int x = 0; x < f.mask.width; ++x) {
      ASSERT_EQ(f.mask.at(y, x, 0) != 0.0f, d.is_valid(y, x)) << y << "," << x;
      on += d.is_valid(y, x);
      if (d.is_valid(y, x)) {
        ASSERT_LE(std::abs(f.flow.at(y, x, 0)), 1e-3f);
        ASSERT_LE(std::abs(f.flow.at(y, x, 1)), 1e-3f);
      }
    }
  EXPECT_GT(on, f.mask.pixel_count() / 2);
}

TEST(GtFlow, PlanarParallax) {
  const auto syn = synthetic::make_plane_scene();
  const float t = 0.1f, z = 4.0f;
  const Camera cam_a = shifted(syn.camera, t);
  const FlowField f = gt_flow_from_depth(syn.scene, cam_a, syn.camera);
  const float expect = syn.camera.fx * t / z;
  size_t on = 0;
  for (size_t p = 0; p < f.mask.pixel_count(); ++p) {
    if (f.mask.data[p] == 0.0f) continue;
    ++on;
    ASSERT_NEAR(f.flow.data[2 * p], expect, 1e-3f);
    ASSERT_NEAR(f.flow.data[2 * p + 1], 0.0f, 1e-3f);
  }
  EXPECT_GT(on, f.mask.pixel_count() / 3);
}

TEST(GtFlow, OccludedPointsAreMaskedOut) {
  // backdrop at z = 5 (half extent 1.5), occluder at z = 3 (half extent 0.4), camera on the axis
  const int size = 192;
  const auto syn = synthetic::make_occlusion_scene(0.4f, 0, size, size);
  const float t = -0.7f, f = syn.camera.fx, c = syn.camera.cx;
  const Camera cam_a = shifted(syn.camera, t);
  const FlowField flow = gt_flow_from_depth(syn.scene, cam_a, syn.camera);
  // the occluder square in each view and the backdrop's apparent motion, in pixels
  const float occ_half = f * 0.4f / 3.0f, occ_shift = f * t / 3.0f, back_shift = f * t / 5.0f;
  const float back_half = f * 1.5f / 5.0f;
  // occluder footprints reach ~3 sigma = 7 px past the square; depth there is a blend
  const float margin = 8.0f;
  int hidden = 0, seen = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float dx = x + 0.5f - c, dy = y + 0.5f - c;
      if (std::abs(dx) > back_half - margin || std::abs(dy) > back_half - margin) continue;
      if (std::abs(dx) < occ_half + margin && std::abs(dy) < occ_half + margin) continue;  // occluder in cam_b
      const float u = dx + back_shift;  // backdrop point in cam_a, relative to the centre
      if (std::abs(u) > c - margin) continue;
      const bool covered = std::abs(u - occ_shift) < occ_half - margin && std::abs(dy) < occ_half - margin;
      const bool clear = std::abs(u - occ_shift) > occ_half + margin || std::abs(dy) > occ_half + margin;
      if (covered) {
        EXPECT_EQ(flow.mask.at(y, x, 0), 0.0f) << y << "," << x;
        ++hidden;
      } else if (clear) {
        EXPECT_EQ(flow.mask.at(y, x, 0), 1.0f) << y << "," << x;
        EXPECT_NEAR(flow.flow.at(y, x, 0), back_shift, 1e-3f);
        ++seen;
      }
    }
  EXPECT_GT(hidden, 100);
  EXPECT_GT(seen, 5000);
}

// ----- evaluate_consistency -----

TEST(Evaluate, IdenticalScenesGiveIdenticalColumns) {
  const auto syn = synthetic::make_three_plane_scene(0, 64, 48);
  const auto traj = synthetic::default_trajectory(syn, 6);
  const ConsistencyReport r = evaluate_consistency(syn.scene, syn.scene, traj);
  EXPECT_TRUE(r.depth_identical);
  EXPECT_EQ(r.pairs.size(), 5u + 3u);
  EXPECT_EQ(r.skipped_pairs, 0u);
  for (const auto& p : r.pairs) {
    EXPECT_EQ(p.original_error, p.stylized_error);
    EXPECT_GT(p.valid_pixels, 0u);
  }
  EXPECT_EQ(r.short_original, r.short_stylized);
  EXPECT_EQ(r.long_original, r.long_stylized);
  int shorts = 0;
  for (const auto& p : r.pairs) shorts += p.baseline == "short";
  EXPECT_EQ(shorts, 5);
}

TEST(Evaluate, RecoloredSceneKeepsDepth) {
  const auto syn = synthetic::make_three_plane_scene(0, 64, 48);
  const auto traj = synthetic::default_trajectory(syn, 4);
  const GaussianScene recolored = update_dc(syn.scene, MatrixRM::Constant(Eigen::Index(syn.scene.size()), 3, 0.2f));
  const ConsistencyReport r = evaluate_consistency(syn.scene, recolored, traj);
  EXPECT_TRUE(r.depth_identical);
  GaussianScene moved = syn.scene;
  moved.prims[0].position.z() += 0.5f;
  EXPECT_FALSE(evaluate_consistency(syn.scene, moved, traj).depth_identical);
}

TEST(Evaluate, LongGapFive) {
  const auto syn = synthetic::make_three_plane_scene(0, 64, 48);
  ConsistencyConfig cfg;
  cfg.long_gap = 5;
  const ConsistencyReport r = evaluate_consistency(syn.scene, syn.scene, synthetic::default_trajectory(syn, 8), cfg);
  int longs = 0;
  for (const auto& p : r.pairs) longs += p.baseline == "long";
  EXPECT_EQ(longs, 3);
}

TEST(Evaluate, RejectsSingleView) {
  const auto syn = synthetic::make_plane_scene();
  const std::vector<Camera> one{syn.camera};
  try {
    evaluate_consistency(syn.scene, syn.scene, one);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("need >= 2 views"), std::string::npos);
  }
}

TEST(Evaluate, EmptyPairsAreSkipped) {
  const auto syn = synthetic::make_plane_scene();
  // cameras facing away from the scene see nothing
  std::vector<Camera> away;
  for (int i = 0; i < 4; ++i)
    away.push_back(look_at({0.1f * i, 0, 0}, {0.1f * i, 0, -5}, {0, -1, 0}, 100, 32, 32));
  const ConsistencyReport r = evaluate_consistency(syn.scene, syn.scene, away);
  EXPECT_EQ(r.pairs.size(), 0u);
  EXPECT_EQ(r.skipped_pairs, 3u + 1u);
  EXPECT_TRUE(std::isnan(r.short_original));
  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_TRUE(j["short"]["original"].is_null());
  EXPECT_EQ(j["skipped_pairs"], 4);
}

TEST(Evaluate, ExternalFlowsReplaceOracle) {
  const auto syn = synthetic::make_three_plane_scene(0, 64, 48);
  const auto traj = synthetic::default_trajectory(syn, 4);
  std::vector<FlowField> flows(3 + 1, full_mask_flow(48, 64));
  const ConsistencyReport r = evaluate_consistency(syn.scene, syn.scene, traj, {}, flows);
  ASSERT_EQ(r.pairs.size(), 4u);
  const FeatureMap i0 = rasterize_color(syn.scene, traj[0]), i1 = rasterize_color(syn.scene, traj[1]);
  EXPECT_DOUBLE_EQ(r.pairs[0].original_error, warp_error(i0, i1, flows[0]));
  EXPECT_EQ(r.pairs[0].valid_pixels, 48u * 64u);
  flows.pop_back();
  EXPECT_THROW(evaluate_consistency(syn.scene, syn.scene, traj, {}, flows), ValidationError);
}

TEST(Report, CsvAndJsonLayout) {
  ConsistencyReport r;
  r.pairs.push_back({0, "short", 0.25, 0.5, 10});
  r.pairs.push_back({1, "long", 0.125, 1.0, 4});
  r.short_original = 0.25;
  r.short_stylized = 0.5;
  r.long_original = 0.125;
  r.long_stylized = 1.0;
  r.depth_identical = true;
  EXPECT_EQ(report_csv(r), "pair_index,baseline,original_error,stylized_error\n0,short,0.25,0.5\n1,long,0.125,1\n");
  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_EQ(j["short"]["stylized"], 0.5);
  EXPECT_EQ(j["long"]["original"], 0.125);
  EXPECT_EQ(j["pairs"], 2);
  EXPECT_EQ(j["depth_identical"], true);
}

}  // namespace
}  // namespace fpgs
