#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpgs/common.h"

namespace fpgs {

// ---------------------------------------------------------------------------
// Tensor container.
//
// Layout (all integers little-endian):
//   "FPGS" | u32 version (=1) | u32 tensor count | u32 reserved (=0)
//   per tensor: u32 name length | UTF-8 name | u32 dtype (0 = f32) | u32 rank |
//               rank x u64 dims | product(dims) x f32 payload
// ---------------------------------------------------------------------------

inline constexpr uint32_t kTensorFileVersion = 1;
inline constexpr size_t kTensorFileHeaderSize = 16;

struct Tensor {
  std::string name;
  std::vector<uint64_t> shape;
  std::vector<float> data;

  uint64_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

class TensorFile {
 public:
  /// Appends a tensor. Throws FormatError(kDuplicateName) or FormatError(kShapeMismatch).
  void add(Tensor tensor);
  void add(std::string name, const MatrixRM& matrix);
  void add(std::string name, const FeatureMap& map);
  void add(std::string name, std::vector<uint64_t> shape, std::vector<float> data);

  const std::vector<Tensor>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  bool contains(std::string_view name) const { return find(name) != nullptr; }
  const Tensor* find(std::string_view name) const;
  /// Throws ValidationError when absent.
  const Tensor& get(std::string_view name) const;

  /// Rank-2 tensor as a matrix; rank-1 becomes a column. Throws ValidationError on rank > 2.
  MatrixRM matrix(std::string_view name) const;
  /// Rank-1 tensor as a vector.
  VectorF vector(std::string_view name) const;
  /// Rank-3 H x W x C (or rank-2 H x W as one channel) tensor.
  FeatureMap feature_map(std::string_view name) const;

  bool operator==(const TensorFile&) const = default;

 private:
  std::vector<Tensor> entries_;
};

std::vector<uint8_t> serialize_tensor_file(const TensorFile& file);
TensorFile parse_tensor_file(std::span<const uint8_t> bytes);
TensorFile read_tensor_file(const std::filesystem::path& path);
void write_tensor_file(const TensorFile& file, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// 3DGS binary PLY.
// ---------------------------------------------------------------------------

/// One vertex of a standard 3DGS PLY, in file property order.
struct RawGaussianRecord {
  std::array<float, 3> position{};
  std::array<float, 3> normal{};
  std::array<float, 3> f_dc{};
  std::array<float, 45> f_rest{};  // channel-major: 15 coefficients for R, then G, then B
  float opacity_logit = 0.0f;
  std::array<float, 3> log_scale{};
  std::array<float, 4> rotation{};  // (w, x, y, z), not necessarily normalized

  bool operator==(const RawGaussianRecord&) const = default;
};
static_assert(sizeof(RawGaussianRecord) == 62 * sizeof(float));

inline constexpr int kPlyFloatProperties = 62;

/// Canonical property names in file order for a degree-3 scene.
const std::vector<std::string>& canonical_ply_properties();

std::vector<uint8_t> serialize_gaussian_ply(std::span<const RawGaussianRecord> records);
/// Accepts the canonical layout, or the same layout with 0, 9 or 24 f_rest properties,
/// which are zero-padded to 45 per record.
std::vector<RawGaussianRecord> parse_gaussian_ply(std::span<const uint8_t> bytes);
std::vector<RawGaussianRecord> read_gaussian_ply(const std::filesystem::path& path);
void write_gaussian_ply(std::span<const RawGaussianRecord> records, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// 8-bit RGB PNG <-> H x W x 3 floats in [0, 1].
// ---------------------------------------------------------------------------

/// Decoded values are v / 255.
FeatureMap decode_png(std::span<const uint8_t> bytes);
/// Quantizes with round-half-up after clamping to [0, 1]. Accepts 1 or 3 channels
/// (one channel is replicated to gray).
std::vector<uint8_t> encode_png(const FeatureMap& image);
FeatureMap read_image(const std::filesystem::path& path);
void write_image(const FeatureMap& image, const std::filesystem::path& path);
uint8_t quantize_unit(float v);

// ---------------------------------------------------------------------------
// Flow fields, stored as TensorFile tensors "flow" (H x W x 2) and "mask" (H x W).
// ---------------------------------------------------------------------------

struct FlowField {
  FeatureMap flow;  // H x W x 2, pixel displacement (+x right, +y down)
  FeatureMap mask;  // H x W x 1, values in {0, 1}

  void validate() const;
};

TensorFile flow_to_tensors(const FlowField& flow);
FlowField flow_from_tensors(const TensorFile& file);

}  // namespace fpgs
