#include "fpgs/common.h"

#include <algorithm>
#include <fstream>
#include <random>
#include <system_error>

namespace fpgs {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::kIo: return "io";
    case Errc::kBadMagic: return "bad magic";
    case Errc::kUnsupportedVersion: return "unsupported version";
    case Errc::kTruncated: return "truncated data";
    case Errc::kDuplicateName: return "duplicate name";
    case Errc::kShapeMismatch: return "shape/data mismatch";
    case Errc::kBadDtype: return "unsupported dtype";
    case Errc::kBadHeader: return "malformed header";
    case Errc::kAsciiPly: return "ascii ply";
    case Errc::kMissingProperty: return "missing property";
    case Errc::kUnexpectedProperty: return "unexpected property";
    case Errc::kWrongPropertyType: return "wrong property type";
    case Errc::kNotRgb: return "not 8-bit rgb";
    case Errc::kDecodeFailure: return "decode failure";
  }
  return "unknown";
}

FormatError::FormatError(Errc code, const std::string& what)
    : Error(std::string(errc_name(code)) + ": " + what), code_(code) {}

FeatureMap::FeatureMap(int h, int w, int c, float fill)
    : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {
  if (h < 0 || w < 0 || c < 0) throw ValidationError("FeatureMap: negative dimension");
}

FeatureMap FeatureMap::from_matrix(const MatrixRM& rows, int h, int w) {
  if (rows.rows() != static_cast<Eigen::Index>(h) * w) {
    throw ValidationError("FeatureMap::from_matrix: row count does not match H*W");
  }
  FeatureMap out(h, w, static_cast<int>(rows.cols()));
  out.matrix() = rows;
  return out;
}

FeatureMap resize_bilinear(const FeatureMap& src, int height, int width) {
  if (src.height == height && src.width == width) return src;
  if (src.empty()) throw ValidationError("resize_bilinear: empty source");
  FeatureMap out(height, width, src.channels);
  const float sy = static_cast<float>(src.height) / height;
  const float sx = static_cast<float>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const float wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const float wx = fx - x0;
      float* o = out.pixel(y, x);
      const float* a = src.pixel(y0, x0);
      const float* b = src.pixel(y0, x1);
      const float* c = src.pixel(y1, x0);
      const float* d = src.pixel(y1, x1);
      for (int k = 0; k < src.channels; ++k) {
        const float top = a[k] + (b[k] - a[k]) * wx;
        const float bottom = c[k] + (d[k] - c[k]) * wx;
        o[k] = top + (bottom - top) * wy;
      }
    }
  }
  return out;
}

FeatureMap resize_nearest(const FeatureMap& src, int height, int width) {
  if (src.height == height && src.width == width) return src;
  if (src.empty()) throw ValidationError("resize_nearest: empty source");
  FeatureMap out(height, width, src.channels);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(src.height - 1, static_cast<int>((y + 0.5) * src.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(src.width - 1, static_cast<int>((x + 0.5) * src.width / width));
      std::copy_n(src.pixel(sy, sx), src.channels, out.pixel(y, x));
    }
  }
  return out;
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Errc::kIo, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw FormatError(Errc::kIo, "cannot read " + path.string());
  }
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  std::random_device rd;
  auto tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("rename to " + path.string() + " failed: " + ec.message());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace fpgs
