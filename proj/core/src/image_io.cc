#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>

#include "fpgs/tensor_io.h"

namespace fpgs {
namespace {

struct MemorySource {
  const uint8_t* data;
  size_t size;
  size_t pos;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* src = static_cast<MemorySource*>(png_get_io_ptr(png));
  if (src->size - src->pos < n) png_error(png, "unexpected end of png data");
  std::memcpy(out, src->data + src->pos, n);
  src->pos += n;
}

void warn_silently(png_structp, png_const_charp) {}

struct ReadState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~ReadState() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

enum class DecodeStatus { kOk, kNotPng, kNotRgb, kFailed };

// Kept free of objects with non-trivial destructors between setjmp and the libpng calls.
DecodeStatus decode_rgb8(ReadState& st, MemorySource& src, std::vector<uint8_t>& pixels, uint32_t& width,
                         uint32_t& height, char* message, size_t message_len) {
  if (src.size < 8 || png_sig_cmp(src.data, 0, 8) != 0) return DecodeStatus::kNotPng;
  st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warn_silently);
  if (!st.png) return DecodeStatus::kFailed;
  st.info = png_create_info_struct(st.png);
  if (!st.info) return DecodeStatus::kFailed;
  if (setjmp(png_jmpbuf(st.png))) {
    std::snprintf(message, message_len, "libpng error");
    return DecodeStatus::kFailed;
  }
  png_set_read_fn(st.png, &src, read_from_memory);
  png_read_info(st.png, st.info);
  width = png_get_image_width(st.png, st.info);
  height = png_get_image_height(st.png, st.info);
  const int color = png_get_color_type(st.png, st.info);
  const int depth = png_get_bit_depth(st.png, st.info);
  if (color != PNG_COLOR_TYPE_RGB || depth != 8) {
    std::snprintf(message, message_len, "color type %d, bit depth %d", color, depth);
    return DecodeStatus::kNotRgb;
  }
  png_set_interlace_handling(st.png);
  png_read_update_info(st.png, st.info);
  if (png_get_rowbytes(st.png, st.info) != static_cast<png_size_t>(width) * 3) return DecodeStatus::kFailed;
  pixels.resize(static_cast<size_t>(width) * height * 3);
  std::vector<png_bytep> rows(height);
  for (uint32_t y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * width * 3;
  png_read_image(st.png, rows.data());
  png_read_end(st.png, nullptr);
  return DecodeStatus::kOk;
}

}  // namespace

uint8_t quantize_unit(float v) {
  if (!(v > 0.0f)) return 0;
  if (v >= 1.0f) return 255;
  return static_cast<uint8_t>(std::floor(v * 255.0f + 0.5f));
}

FeatureMap decode_png(std::span<const uint8_t> bytes) {
  ReadState st;
  MemorySource src{bytes.data(), bytes.size(), 0};
  std::vector<uint8_t> pixels;
  uint32_t width = 0, height = 0;
  char message[128] = {};
  switch (decode_rgb8(st, src, pixels, width, height, message, sizeof(message))) {
    case DecodeStatus::kOk: break;
    case DecodeStatus::kNotPng: throw FormatError(Errc::kDecodeFailure, "not a png stream");
    case DecodeStatus::kNotRgb: throw FormatError(Errc::kNotRgb, message);
    case DecodeStatus::kFailed: throw FormatError(Errc::kDecodeFailure, message[0] ? message : "libpng failure");
  }
  FeatureMap image(static_cast<int>(height), static_cast<int>(width), 3);
  for (size_t i = 0; i < pixels.size(); ++i) image.data[i] = static_cast<float>(pixels[i]) / 255.0f;
  return image;
}

std::vector<uint8_t> encode_png(const FeatureMap& image) {
  if (image.channels != 3 && image.channels != 1) {
    throw ValidationError("encode_png: expected 1 or 3 channels, got " + std::to_string(image.channels));
  }
  if (image.height <= 0 || image.width <= 0) throw ValidationError("encode_png: empty image");
  std::vector<uint8_t> pixels(image.pixel_count() * 3);
  for (size_t p = 0; p < image.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const float v = image.data[p * image.channels + (image.channels == 3 ? c : 0)];
      pixels[p * 3 + c] = quantize_unit(v);
    }
  }

  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw FormatError(Errc::kIo, std::string("png encode: ") + img.message);
  }
  std::vector<uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw FormatError(Errc::kIo, std::string("png encode: ") + img.message);
  }
  out.resize(size);
  png_image_free(&img);
  return out;
}

FeatureMap read_image(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

void write_image(const FeatureMap& image, const std::filesystem::path& path) {
  write_file_atomic(path, encode_png(image));
}

}  // namespace fpgs
