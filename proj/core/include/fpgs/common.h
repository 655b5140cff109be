#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fpgs {

/// Row-major dense float matrix. Rows are items (Gaussians, pixels), columns are channels.
using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorF = Eigen::VectorXf;

/// Error codes for malformed or unreadable inputs. Each reader failure mode has its own code.
enum class Errc {
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kDuplicateName,
  kShapeMismatch,
  kBadDtype,
  kBadHeader,
  kAsciiPly,
  kMissingProperty,
  kUnexpectedProperty,
  kWrongPropertyType,
  kNotRgb,
  kDecodeFailure,
};

const char* errc_name(Errc code);

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input bytes could not be parsed.
class FormatError : public Error {
 public:
  FormatError(Errc code, const std::string& what);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

/// Inputs parsed but violate a precondition (shapes, counts, ranges).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// H x W x C float grid in row-major HWC order. Used for images, feature maps, flows and masks.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c, float fill = 0.0f);

  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
  bool empty() const { return data.empty(); }

  float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float* pixel(int y, int x) { return data.data() + (static_cast<size_t>(y) * width + x) * channels; }
  const float* pixel(int y, int x) const {
    return data.data() + (static_cast<size_t>(y) * width + x) * channels;
  }

  /// (H*W) x C view over the pixel data.
  Eigen::Map<MatrixRM> matrix() { return {data.data(), static_cast<Eigen::Index>(pixel_count()), channels}; }
  Eigen::Map<const MatrixRM> matrix() const {
    return {data.data(), static_cast<Eigen::Index>(pixel_count()), channels};
  }

  static FeatureMap from_matrix(const MatrixRM& rows, int h, int w);
  bool operator==(const FeatureMap&) const = default;
};

/// Bilinear resize with pixel-center alignment.
FeatureMap resize_bilinear(const FeatureMap& src, int height, int width);
/// Nearest-neighbour resize with pixel-center alignment.
FeatureMap resize_nearest(const FeatureMap& src, int height, int width);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

/// splitmix64 step, used to derive independent seeds.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
template <class Rng>
double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal draw (Box-Muller); reproducible across standard libraries.
template <class Rng>
double normal01(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace fpgs
