#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "fpgs/common.h"
#include "fpgs/nets.h"
#include "fpgs/tensor_io.h"

namespace fpgs {

struct KMeansResult {
  std::vector<int> labels;          // N
  MatrixRM centroids;               // M x C
  std::vector<double> sse_history;  // within-cluster SSE after each assignment step
  int iterations = 0;
};

inline constexpr int kKMeansSeedings = 8;

/// Lloyd's algorithm from kKMeansSeedings seeded k-means++ starts; the run with the lowest
/// final SSE wins. Ties go to the lowest centroid index; a cluster that empties is
/// reseeded with the point farthest from its centroid.
KMeansResult kmeans(const MatrixRM& points, int clusters, uint64_t seed, int max_iters = 50);

/// Sum of squared distances of each point to its labelled centroid.
double kmeans_sse(const MatrixRM& points, std::span<const int> labels, const MatrixRM& centroids);

/// One style reference: the image, its semantic map (any resolution) and its VGG relu2_1 map.
struct ReferenceBundle {
  FeatureMap image;     // H x W x 3
  FeatureMap semantic;  // H' x W' x 384
  FeatureMap vgg;       // H/2 x W/2 x 128

  void validate() const;
};

/// Runs the VGG slice on `image` and packages it with `semantic`.
ReferenceBundle make_reference_bundle(FeatureMap image, FeatureMap semantic, const VggSliceWeights& vgg);

/// Keys are semantic cluster centroids; values are the mean and std of the VGG features
/// inside each cluster's footprint.
struct StyleDictionary {
  MatrixRM keys;    // T x 384
  MatrixRM mus;     // T x 128
  MatrixRM sigmas;  // T x 128
  std::vector<std::array<int, 2>> provenance;  // (reference index, cluster index)

  size_t size() const { return static_cast<size_t>(keys.rows()); }
  bool empty() const { return keys.rows() == 0; }
  void validate() const;

  /// Tensors "dict.keys", "dict.mus", "dict.sigmas", "dict.provenance" (T x 2).
  void to_tensors(TensorFile& file) const;
  static StyleDictionary from_tensors(const TensorFile& file);
  bool operator==(const StyleDictionary&) const = default;
};

/// Clusters one semantic map and gathers VGG statistics per cluster. The label map is
/// resampled to the VGG resolution by nearest neighbour; clusters with an empty footprint
/// there are dropped.
StyleDictionary dictionary_from_maps(const FeatureMap& semantic, const FeatureMap& vgg, int clusters, uint64_t seed,
                                     int reference_index = 0);

/// Per-reference clustering with an independent seed per reference index.
StyleDictionary build_dictionary(std::span<const ReferenceBundle> refs, int clusters, uint64_t seed);

/// Keys from the rendered view's semantic map, values from the scribbled image's VGG map
/// over the same clustered regions. Uses the same per-reference seed as build_dictionary.
StyleDictionary build_scribble_dictionary(const FeatureMap& rendered_semantic, const FeatureMap& scribbled_vgg,
                                          int clusters, uint64_t seed);

}  // namespace fpgs
