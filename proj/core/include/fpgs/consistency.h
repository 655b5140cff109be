#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpgs/common.h"
#include "fpgs/splatter.h"
#include "fpgs/tensor_io.h"

namespace fpgs {

struct WarpResult {
  FeatureMap image;            // same grid as the flow
  std::vector<uint8_t> valid;  // 0 where the sample fell outside the source image
};

/// Bilinearly samples `source` at p + flow(p) for every pixel p of the flow grid.
/// A sample is valid when all four taps lie inside the source.
WarpResult warp_image(const FeatureMap& source, const FeatureMap& flow);

/// RMSE between `target` and `source` warped onto the target grid, pooled over channels
/// and restricted to mask && in-bounds pixels. Throws when nothing is valid.
double warp_error(const FeatureMap& target, const FeatureMap& source, const FlowField& flow);

/// Exact flow from the cam_b pixel grid into cam_a, from cam_b's rendered depth.
/// `depth_tolerance` <= 0 selects 1% of cam_b's largest valid depth.
FlowField gt_flow_from_depth(const GaussianScene& scene, const Camera& cam_a, const Camera& cam_b,
                             float depth_tolerance = 0.0f, const RasterConfig& raster = {});

struct ConsistencyConfig {
  int short_gap = 1;
  int long_gap = 3;
  float depth_tolerance = 0.0f;
  bool sh_zero_rest = false;
  RasterConfig raster{};
};

struct PairError {
  int pair_index = 0;  // index of the first view of the pair
  std::string baseline;  // "short" or "long"
  double original_error = 0.0;
  double stylized_error = 0.0;
  size_t valid_pixels = 0;
};

struct ConsistencyReport {
  std::vector<PairError> pairs;
  double short_original = 0.0;
  double short_stylized = 0.0;
  double long_original = 0.0;
  double long_stylized = 0.0;
  size_t skipped_pairs = 0;  // pairs with an empty mask
  bool depth_identical = false;
};

/// Renders both scenes along the trajectory and measures warp errors of (i, i + gap)
/// pairs, with flows and masks taken from the original geometry. `external_flows`, when
/// given, replaces them: short pairs first, then long pairs, each in view order.
ConsistencyReport evaluate_consistency(const GaussianScene& original, const GaussianScene& stylized,
                                       std::span<const Camera> trajectory, const ConsistencyConfig& config = {},
                                       std::span<const FlowField> external_flows = {});

/// CSV with header pair_index,baseline,original_error,stylized_error.
std::string report_csv(const ConsistencyReport& report);
std::string report_json(const ConsistencyReport& report);

}  // namespace fpgs
