#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fpgs/parallel.h"
#include "fpgs/splatter.h"

namespace fpgs::detail {

struct ProjectedSplat {
  float mean_x, mean_y;
  float conic_a, conic_b, conic_c;  // inverse 2D covariance (xx, xy, yy)
  float opacity;
  float depth;
  uint32_t index;
  int tile_x0, tile_y0, tile_x1, tile_y1;  // inclusive-exclusive tile range
};

/// Splats sorted front to back (depth, then prim index) and binned into 16x16 tiles.
/// Every tile list preserves the global order.
struct SplatBins {
  int width = 0;
  int height = 0;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<ProjectedSplat> splats;
  std::vector<uint32_t> tile_offsets;
  std::vector<uint32_t> tile_items;
};

SplatBins bin_splats(const GaussianScene& scene, const Camera& camera, const RasterConfig& config);

/// Visits every tile (in parallel) and every pixel inside it. For each pixel the visitor
/// receives begin(pixel), add(prim, weight) for each contributing splat front to back,
/// and end(pixel, transmittance). `make_visitor(tile)` returns a fresh visitor per tile.
template <class MakeVisitor>
void traverse(const SplatBins& bins, const RasterConfig& config, MakeVisitor&& make_visitor) {
  const float cutoff = config.cutoff_sigma * config.cutoff_sigma;
  const size_t tile_count = static_cast<size_t>(bins.tiles_x) * bins.tiles_y;
  parallel_for(tile_count, [&](size_t tile) {
    auto visitor = make_visitor(tile);
    const int tx = static_cast<int>(tile % bins.tiles_x);
    const int ty = static_cast<int>(tile / bins.tiles_x);
    const uint32_t first = bins.tile_offsets[tile];
    const uint32_t last = bins.tile_offsets[tile + 1];
    const int x_end = std::min(bins.width, (tx + 1) * kTileSize);
    const int y_end = std::min(bins.height, (ty + 1) * kTileSize);
    for (int y = ty * kTileSize; y < y_end; ++y) {
      const float py = static_cast<float>(y) + 0.5f;
      for (int x = tx * kTileSize; x < x_end; ++x) {
        const float px = static_cast<float>(x) + 0.5f;
        const size_t pixel = static_cast<size_t>(y) * bins.width + x;
        visitor.begin(pixel);
        float transmittance = 1.0f;
        for (uint32_t it = first; it < last; ++it) {
          const ProjectedSplat& s = bins.splats[bins.tile_items[it]];
          const float dx = px - s.mean_x;
          const float dy = py - s.mean_y;
          const float power = s.conic_a * dx * dx + 2.0f * s.conic_b * dx * dy + s.conic_c * dy * dy;
          if (power > cutoff) continue;
          const float alpha = std::min(config.alpha_clamp, s.opacity * std::exp(-0.5f * power));
          visitor.add(s.index, alpha * transmittance, s);
          transmittance *= 1.0f - alpha;
          if (transmittance < config.min_transmittance) break;
        }
        visitor.end(pixel, transmittance);
      }
    }
  });
}

}  // namespace fpgs::detail
