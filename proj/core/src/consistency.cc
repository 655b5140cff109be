#include "fpgs/consistency.h"

#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

#include "fpgs/parallel.h"

namespace fpgs {
namespace {

// Sample positions this close outside the image are clamped onto it; absorbs the
// rounding of an unproject/reproject round trip at the border.
constexpr float kEdgeSlack = 1e-3f;

bool clamp_to_range(float& v, int size) {
  const float hi = static_cast<float>(size - 1);
  if (v < -kEdgeSlack || v > hi + kEdgeSlack) return false;
  v = std::clamp(v, 0.0f, hi);
  return true;
}

void check_flow(const FeatureMap& flow) {
  if (flow.channels != 2) throw ValidationError("flow must have 2 channels");
  for (float v : flow.data) {
    if (!std::isfinite(v)) throw ValidationError("flow contains non-finite values");
  }
}

FlowField flow_from_depths(const DepthRender& depth_a, const DepthRender& depth_b, const Camera& cam_a,
                           const Camera& cam_b, float tolerance) {
  const int h = cam_b.height;
  const int w = cam_b.width;
  FlowField out{FeatureMap(h, w, 2), FeatureMap(h, w, 1)};
  if (tolerance <= 0.0f) {
    float deepest = 0.0f;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (depth_b.is_valid(y, x)) deepest = std::max(deepest, depth_b.depth.at(y, x, 0));
      }
    }
    tolerance = 0.01f * deepest;
  }
  const Eigen::Matrix3f back = cam_b.rotation.transpose();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!depth_b.is_valid(y, x)) continue;
      const float z = depth_b.depth.at(y, x, 0);
      const Eigen::Vector3f local((static_cast<float>(x) + 0.5f - cam_b.cx) / cam_b.fx * z,
                                  (static_cast<float>(y) + 0.5f - cam_b.cy) / cam_b.fy * z, z);
      const Eigen::Vector3f world = back * (local - cam_b.translation);
      const Eigen::Vector3f in_a = cam_a.to_camera(world);
      if (in_a.z() <= cam_a.near_plane) continue;
      float u = cam_a.fx * in_a.x() / in_a.z() + cam_a.cx - 0.5f;
      float v = cam_a.fy * in_a.y() / in_a.z() + cam_a.cy - 0.5f;
      const float flow_x = u - static_cast<float>(x);
      const float flow_y = v - static_cast<float>(y);
      if (!clamp_to_range(u, cam_a.width) || !clamp_to_range(v, cam_a.height)) continue;
      const int nx = static_cast<int>(std::lround(u));
      const int ny = static_cast<int>(std::lround(v));
      if (!depth_a.is_valid(ny, nx)) continue;
      if (std::abs(in_a.z() - depth_a.depth.at(ny, nx, 0)) > tolerance) continue;
      out.flow.at(y, x, 0) = flow_x;
      out.flow.at(y, x, 1) = flow_y;
      out.mask.at(y, x, 0) = 1.0f;
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

WarpResult warp_image(const FeatureMap& source, const FeatureMap& flow) {
  check_flow(flow);
  if (source.empty()) throw ValidationError("warp_image: empty source");
  WarpResult out{FeatureMap(flow.height, flow.width, source.channels),
                 std::vector<uint8_t>(flow.pixel_count(), 0)};
  const int c = source.channels;
  parallel_for(static_cast<size_t>(flow.height), [&](size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < flow.width; ++x) {
      float sx = static_cast<float>(x) + flow.at(y, x, 0);
      float sy = static_cast<float>(y) + flow.at(y, x, 1);
      if (!clamp_to_range(sx, source.width) || !clamp_to_range(sy, source.height)) continue;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, source.width - 1);
      const int y1 = std::min(y0 + 1, source.height - 1);
      const float ax = sx - static_cast<float>(x0);
      const float ay = sy - static_cast<float>(y0);
      float* dst = out.image.pixel(y, x);
      for (int k = 0; k < c; ++k) {
        const float top = (1.0f - ax) * source.at(y0, x0, k) + ax * source.at(y0, x1, k);
        const float bottom = (1.0f - ax) * source.at(y1, x0, k) + ax * source.at(y1, x1, k);
        dst[k] = (1.0f - ay) * top + ay * bottom;
      }
      out.valid[static_cast<size_t>(y) * flow.width + x] = 1;
    }
  });
  return out;
}

double warp_error(const FeatureMap& target, const FeatureMap& source, const FlowField& flow) {
  flow.validate();
  if (target.height != flow.flow.height || target.width != flow.flow.width) {
    throw ValidationError("warp_error: target and flow sizes differ");
  }
  if (source.height != target.height || source.width != target.width || source.channels != target.channels) {
    throw ValidationError("warp_error: source and target sizes differ");
  }
  const WarpResult warped = warp_image(source, flow.flow);
  double sum = 0.0;
  size_t count = 0;
  for (size_t p = 0; p < target.pixel_count(); ++p) {
    if (flow.mask.data[p] == 0.0f || !warped.valid[p]) continue;
    for (int k = 0; k < target.channels; ++k) {
      const double d = static_cast<double>(target.data[p * target.channels + k]) - warped.image.data[p * target.channels + k];
      sum += d * d;
    }
    ++count;
  }
  if (count == 0) throw ValidationError("warp_error: mask has no valid pixels");
  return std::sqrt(sum / static_cast<double>(count * static_cast<size_t>(target.channels)));
}

FlowField gt_flow_from_depth(const GaussianScene& scene, const Camera& cam_a, const Camera& cam_b,
                             float depth_tolerance, const RasterConfig& raster) {
  const DepthRender a = rasterize_depth(scene, cam_a, raster);
  const DepthRender b = rasterize_depth(scene, cam_b, raster);
  return flow_from_depths(a, b, cam_a, cam_b, depth_tolerance);
}

ConsistencyReport evaluate_consistency(const GaussianScene& original, const GaussianScene& stylized,
                                       std::span<const Camera> trajectory, const ConsistencyConfig& config,
                                       std::span<const FlowField> external_flows) {
  if (trajectory.size() < 2) throw ValidationError("need >= 2 views");
  if (original.size() != stylized.size()) throw ValidationError("original and stylized scenes differ in size");
  if (config.short_gap < 1 || config.long_gap < 1) throw ValidationError("pair gaps must be >= 1");

  const GaussianScene orig_view = config.sh_zero_rest ? without_view_dependence(original) : original;
  const GaussianScene styl_view = config.sh_zero_rest ? without_view_dependence(stylized) : stylized;
  const size_t n = trajectory.size();
  std::vector<FeatureMap> orig_images, styl_images;
  std::vector<DepthRender> depths;
  ConsistencyReport report;
  report.depth_identical = true;
  for (const Camera& cam : trajectory) {
    orig_images.push_back(rasterize_color(orig_view, cam, config.raster));
    styl_images.push_back(rasterize_color(styl_view, cam, config.raster));
    depths.push_back(rasterize_depth(original, cam, config.raster));
    const DepthRender other = rasterize_depth(stylized, cam, config.raster);
    report.depth_identical = report.depth_identical && other.depth == depths.back().depth &&
                             other.alpha == depths.back().alpha && other.valid == depths.back().valid;
  }

  struct Pending {
    size_t first;
    int gap;
    const char* baseline;
  };
  std::vector<Pending> pending;
  for (size_t i = 0; i + static_cast<size_t>(config.short_gap) < n; ++i) pending.push_back({i, config.short_gap, "short"});
  for (size_t i = 0; i + static_cast<size_t>(config.long_gap) < n; ++i) pending.push_back({i, config.long_gap, "long"});
  if (!external_flows.empty() && external_flows.size() != pending.size()) {
    throw ValidationError("expected " + std::to_string(pending.size()) + " external flows, got " +
                          std::to_string(external_flows.size()));
  }

  double sums[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  size_t counts[2] = {0, 0};
  for (size_t k = 0; k < pending.size(); ++k) {
    const auto& p = pending[k];
    const size_t second = p.first + static_cast<size_t>(p.gap);
    const FlowField flow = external_flows.empty()
                               ? flow_from_depths(depths[second], depths[p.first], trajectory[second],
                                                  trajectory[p.first], config.depth_tolerance)
                               : external_flows[k];
    size_t valid = 0;
    for (float m : flow.mask.data) valid += m != 0.0f;
    PairError row;
    row.pair_index = static_cast<int>(p.first);
    row.baseline = p.baseline;
    try {
      row.original_error = warp_error(orig_images[p.first], orig_images[second], flow);
      row.stylized_error = warp_error(styl_images[p.first], styl_images[second], flow);
    } catch (const ValidationError&) {
      ++report.skipped_pairs;
      continue;
    }
    row.valid_pixels = valid;
    const int b = row.baseline == "short" ? 0 : 1;
    sums[b][0] += row.original_error;
    sums[b][1] += row.stylized_error;
    ++counts[b];
    report.pairs.push_back(std::move(row));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  report.short_original = counts[0] ? sums[0][0] / static_cast<double>(counts[0]) : nan;
  report.short_stylized = counts[0] ? sums[0][1] / static_cast<double>(counts[0]) : nan;
  report.long_original = counts[1] ? sums[1][0] / static_cast<double>(counts[1]) : nan;
  report.long_stylized = counts[1] ? sums[1][1] / static_cast<double>(counts[1]) : nan;
  return report;
}

std::string report_csv(const ConsistencyReport& report) {
  std::string out = "pair_index,baseline,original_error,stylized_error\n";
  for (const auto& row : report.pairs) {
    out += std::to_string(row.pair_index) + "," + row.baseline + "," + format_double(row.original_error) + "," +
           format_double(row.stylized_error) + "\n";
  }
  return out;
}

std::string report_json(const ConsistencyReport& report) {
  nlohmann::json j;
  j["short"] = {{"original", number_or_null(report.short_original)},
                {"stylized", number_or_null(report.short_stylized)}};
  j["long"] = {{"original", number_or_null(report.long_original)}, {"stylized", number_or_null(report.long_stylized)}};
  j["pairs"] = report.pairs.size();
  j["skipped_pairs"] = report.skipped_pairs;
  j["depth_identical"] = report.depth_identical;
  return j.dump(2) + "\n";
}

}  // namespace fpgs
