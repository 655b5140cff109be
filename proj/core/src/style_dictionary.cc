#include "fpgs/style_dictionary.h"

#include <cmath>
#include <limits>
#include <random>

#include "fpgs/parallel.h"

namespace fpgs {
namespace {

// Nearest centroid per point; ties keep the lowest index.
void assign(const MatrixRM& points, const MatrixRM& centroids, std::vector<int>& labels, std::vector<float>& dist) {
  const auto n = static_cast<size_t>(points.rows());
  const auto m = centroids.rows();
  const size_t chunks = (n + kRowChunk - 1) / kRowChunk;
  parallel_for(chunks, [&](size_t chunk) {
    const size_t end = std::min(n, (chunk + 1) * kRowChunk);
    for (size_t i = chunk * kRowChunk; i < end; ++i) {
      const auto x = points.row(static_cast<Eigen::Index>(i));
      int best = 0;
      float best_d = (x - centroids.row(0)).squaredNorm();
      for (Eigen::Index j = 1; j < m; ++j) {
        const float d = (x - centroids.row(j)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(j);
        }
      }
      labels[i] = best;
      dist[i] = best_d;
    }
  });
}

MatrixRM seed_plus_plus(const MatrixRM& points, int clusters, std::mt19937_64& rng) {
  const auto n = points.rows();
  MatrixRM centroids(clusters, points.cols());
  auto pick = [&](double u) { return std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(u * static_cast<double>(n))); };
  centroids.row(0) = points.row(pick(uniform01(rng)));
  std::vector<double> d2(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (points.row(i) - centroids.row(0)).squaredNorm();
  for (int k = 1; k < clusters; ++k) {
    double total = 0.0;
    for (double v : d2) total += v;
    const double u = uniform01(rng);
    Eigen::Index chosen = n - 1;
    if (total > 0.0) {
      const double target = u * total;
      double cum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        cum += d2[i];
        if (cum > target && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(u);
    }
    centroids.row(k) = points.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], static_cast<double>((points.row(i) - centroids.row(k)).squaredNorm()));
    }
  }
  return centroids;
}

void check_finite(const MatrixRM& m, const char* what) {
  if (!m.allFinite()) throw ValidationError(std::string(what) + " contains non-finite values");
}

KMeansResult lloyd(const MatrixRM& points, int clusters, uint64_t seed, int max_iters) {
  const auto n = static_cast<size_t>(points.rows());
  std::mt19937_64 rng(seed);
  KMeansResult result;
  result.centroids = seed_plus_plus(points, clusters, rng);
  result.labels.assign(n, -1);
  std::vector<int> labels(n);
  std::vector<float> dist(n);

  for (int it = 0; it < max_iters; ++it) {
    assign(points, result.centroids, labels, dist);
    result.iterations = it + 1;
    result.sse_history.push_back(kmeans_sse(points, labels, result.centroids));
    const bool stable = labels == result.labels;
    result.labels = labels;
    if (stable) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(clusters, points.cols());
    std::vector<size_t> counts(static_cast<size_t>(clusters), 0);
    for (size_t i = 0; i < n; ++i) {
      sums.row(labels[i]) += points.row(static_cast<Eigen::Index>(i)).cast<double>();
      ++counts[static_cast<size_t>(labels[i])];
    }
    std::vector<uint8_t> taken(n, 0);
    for (int k = 0; k < clusters; ++k) {
      if (counts[static_cast<size_t>(k)] > 0) {
        result.centroids.row(k) = (sums.row(k) / static_cast<double>(counts[static_cast<size_t>(k)])).cast<float>();
        continue;
      }
      size_t far = n;
      float far_d = 0.0f;
      for (size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      if (far == n) continue;  // every point sits on a centroid; nothing to split
      taken[far] = 1;
      result.centroids.row(k) = points.row(static_cast<Eigen::Index>(far));
    }
  }
  return result;
}

}  // namespace

double kmeans_sse(const MatrixRM& points, std::span<const int> labels, const MatrixRM& centroids) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto c = centroids.row(labels[static_cast<size_t>(i)]);
    for (Eigen::Index k = 0; k < points.cols(); ++k) {
      const double d = static_cast<double>(points(i, k)) - c(k);
      total += d * d;
    }
  }
  return total;
}

KMeansResult kmeans(const MatrixRM& points, int clusters, uint64_t seed, int max_iters) {
  if (clusters < 1) throw ValidationError("kmeans: cluster count must be >= 1");
  if (points.rows() < clusters) {
    throw ValidationError("kmeans: " + std::to_string(points.rows()) + " points for " + std::to_string(clusters) +
                          " clusters");
  }
  if (max_iters < 1) throw ValidationError("kmeans: max_iters must be >= 1");
  check_finite(points, "kmeans input");

  KMeansResult best;
  for (int run = 0; run < kKMeansSeedings; ++run) {
    KMeansResult r = lloyd(points, clusters, mix_seed(seed, static_cast<uint64_t>(run)), max_iters);
    if (run == 0 || r.sse_history.back() < best.sse_history.back()) best = std::move(r);
  }
  return best;
}

void ReferenceBundle::validate() const {
  if (image.channels != 3) throw ValidationError("reference image must have 3 channels");
  if (semantic.channels <= 0 || semantic.empty()) throw ValidationError("reference semantic map is empty");
  if (vgg.channels != kVggChannels || vgg.empty()) throw ValidationError("reference VGG map must have 128 channels");
  check_finite(semantic.matrix(), "reference semantic map");
  check_finite(vgg.matrix(), "reference VGG map");
}

ReferenceBundle make_reference_bundle(FeatureMap image, FeatureMap semantic, const VggSliceWeights& vgg) {
  ReferenceBundle ref;
  ref.vgg = vgg_slice_forward(image, vgg);
  ref.image = std::move(image);
  ref.semantic = std::move(semantic);
  ref.validate();
  return ref;
}

void StyleDictionary::validate() const {
  const auto t = keys.rows();
  if (mus.rows() != t || sigmas.rows() != t || provenance.size() != static_cast<size_t>(t)) {
    throw ValidationError("style dictionary: inconsistent entry counts");
  }
  if (t > 0 && (mus.cols() != sigmas.cols())) throw ValidationError("style dictionary: mu/sigma widths differ");
  check_finite(keys, "dictionary keys");
  check_finite(mus, "dictionary means");
  check_finite(sigmas, "dictionary stds");
  if (t > 0 && sigmas.minCoeff() < 0.0f) throw ValidationError("style dictionary: negative std");
}

void StyleDictionary::to_tensors(TensorFile& file) const {
  file.add("dict.keys", keys);
  file.add("dict.mus", mus);
  file.add("dict.sigmas", sigmas);
  MatrixRM prov(static_cast<Eigen::Index>(provenance.size()), 2);
  for (size_t i = 0; i < provenance.size(); ++i) {
    prov(static_cast<Eigen::Index>(i), 0) = static_cast<float>(provenance[i][0]);
    prov(static_cast<Eigen::Index>(i), 1) = static_cast<float>(provenance[i][1]);
  }
  file.add("dict.provenance", prov);
}

StyleDictionary StyleDictionary::from_tensors(const TensorFile& file) {
  StyleDictionary dict;
  dict.keys = file.matrix("dict.keys");
  dict.mus = file.matrix("dict.mus");
  dict.sigmas = file.matrix("dict.sigmas");
  const MatrixRM prov = file.matrix("dict.provenance");
  if (prov.cols() != 2) throw ValidationError("dict.provenance must be T x 2");
  for (Eigen::Index i = 0; i < prov.rows(); ++i) {
    dict.provenance.push_back({static_cast<int>(prov(i, 0)), static_cast<int>(prov(i, 1))});
  }
  dict.validate();
  return dict;
}

StyleDictionary dictionary_from_maps(const FeatureMap& semantic, const FeatureMap& vgg, int clusters, uint64_t seed,
                                     int reference_index) {
  if (semantic.pixel_count() < 2) throw ValidationError("semantic map must have at least 2 pixels");
  if (vgg.pixel_count() < 1 || vgg.channels < 1) throw ValidationError("VGG map is empty");
  const auto sem_aspect = static_cast<double>(semantic.width) / semantic.height;
  const auto vgg_aspect = static_cast<double>(vgg.width) / vgg.height;
  if (std::abs(sem_aspect / vgg_aspect - 1.0) > 0.1) {
    throw ValidationError("semantic and VGG maps have incompatible aspect ratios");
  }
  const KMeansResult km = kmeans(semantic.matrix(), clusters, seed);

  FeatureMap labels(semantic.height, semantic.width, 1);
  for (size_t i = 0; i < km.labels.size(); ++i) labels.data[i] = static_cast<float>(km.labels[i]);
  const FeatureMap footprint = resize_nearest(labels, vgg.height, vgg.width);

  const int c = vgg.channels;
  std::vector<Eigen::VectorXd> sums(static_cast<size_t>(clusters), Eigen::VectorXd::Zero(c));
  std::vector<size_t> counts(static_cast<size_t>(clusters), 0);
  const auto values = vgg.matrix();
  for (size_t p = 0; p < vgg.pixel_count(); ++p) {
    const auto k = static_cast<size_t>(footprint.data[p]);
    sums[k] += values.row(static_cast<Eigen::Index>(p)).cast<double>().transpose();
    ++counts[k];
  }
  std::vector<Eigen::VectorXd> means(static_cast<size_t>(clusters));
  for (size_t k = 0; k < means.size(); ++k) means[k] = sums[k] / std::max<double>(1.0, static_cast<double>(counts[k]));
  std::vector<Eigen::VectorXd> sq(static_cast<size_t>(clusters), Eigen::VectorXd::Zero(c));
  for (size_t p = 0; p < vgg.pixel_count(); ++p) {
    const auto k = static_cast<size_t>(footprint.data[p]);
    sq[k] += (values.row(static_cast<Eigen::Index>(p)).cast<double>().transpose() - means[k]).array().square().matrix();
  }

  StyleDictionary dict;
  int kept = 0;
  for (int k = 0; k < clusters; ++k) kept += counts[static_cast<size_t>(k)] > 0;
  dict.keys.resize(kept, semantic.channels);
  dict.mus.resize(kept, c);
  dict.sigmas.resize(kept, c);
  int row = 0;
  for (int k = 0; k < clusters; ++k) {
    const auto n = static_cast<double>(counts[static_cast<size_t>(k)]);
    if (n == 0.0) continue;
    dict.keys.row(row) = km.centroids.row(k);
    dict.mus.row(row) = means[static_cast<size_t>(k)].cast<float>().transpose();
    dict.sigmas.row(row) = (sq[static_cast<size_t>(k)] / n).cwiseSqrt().cast<float>().transpose();
    dict.provenance.push_back({reference_index, k});
    ++row;
  }
  return dict;
}

StyleDictionary build_dictionary(std::span<const ReferenceBundle> refs, int clusters, uint64_t seed) {
  if (refs.empty()) throw ValidationError("build_dictionary: no references");
  std::vector<StyleDictionary> parts(refs.size());
  for (size_t i = 0; i < refs.size(); ++i) {
    refs[i].validate();
    parts[i] = dictionary_from_maps(refs[i].semantic, refs[i].vgg, clusters, mix_seed(seed, i), static_cast<int>(i));
  }
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.keys.rows();
  if (total > 0) {
    for (const auto& p : parts) {
      if (p.keys.cols() != parts.front().keys.cols()) throw ValidationError("references have different semantic widths");
    }
  }
  StyleDictionary dict;
  dict.keys.resize(total, parts.front().keys.cols());
  dict.mus.resize(total, parts.front().mus.cols());
  dict.sigmas.resize(total, parts.front().sigmas.cols());
  Eigen::Index row = 0;
  for (const auto& p : parts) {
    dict.keys.middleRows(row, p.keys.rows()) = p.keys;
    dict.mus.middleRows(row, p.mus.rows()) = p.mus;
    dict.sigmas.middleRows(row, p.sigmas.rows()) = p.sigmas;
    dict.provenance.insert(dict.provenance.end(), p.provenance.begin(), p.provenance.end());
    row += p.keys.rows();
  }
  dict.validate();
  return dict;
}

StyleDictionary build_scribble_dictionary(const FeatureMap& rendered_semantic, const FeatureMap& scribbled_vgg,
                                          int clusters, uint64_t seed) {
  StyleDictionary dict = dictionary_from_maps(rendered_semantic, scribbled_vgg, clusters, mix_seed(seed, 0), 0);
  dict.validate();
  return dict;
}

}  // namespace fpgs
