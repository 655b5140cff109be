#include <charconv>
#include <cstring>
#include <sstream>

#include "fpgs/tensor_io.h"

namespace fpgs {
namespace {

std::vector<std::string> properties_for_rest_count(int rest_count) {
  std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  for (int i = 0; i < rest_count; ++i) names.push_back("f_rest_" + std::to_string(i));
  names.insert(names.end(), {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"});
  return names;
}

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> words;
  std::istringstream in{std::string(line)};
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

struct Header {
  size_t vertex_count = 0;
  std::vector<std::string> properties;
  size_t data_offset = 0;
};

Header parse_header(std::span<const uint8_t> bytes) {
  constexpr std::string_view kEnd = "end_header";
  Header h;
  size_t pos = 0;
  bool saw_format = false;
  bool saw_vertex = false;
  bool in_vertex = false;
  int line_no = 0;
  for (;;) {
    const auto* begin = bytes.data() + pos;
    const auto* nl = static_cast<const uint8_t*>(std::memchr(begin, '\n', bytes.size() - pos));
    if (!nl) throw FormatError(Errc::kTruncated, "ply header has no end_header line");
    std::string_view line(reinterpret_cast<const char*>(begin), static_cast<size_t>(nl - begin));
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = static_cast<size_t>(nl - bytes.data()) + 1;
    ++line_no;

    if (line_no == 1) {
      if (line != "ply") throw FormatError(Errc::kBadHeader, "missing 'ply' signature");
      continue;
    }
    if (line == kEnd) break;
    const auto words = split_words(line);
    if (words.empty() || words[0] == "comment" || words[0] == "obj_info") continue;

    if (words[0] == "format") {
      if (words.size() != 3) throw FormatError(Errc::kBadHeader, "malformed format line");
      if (words[1] == "ascii") throw FormatError(Errc::kAsciiPly, "only binary_little_endian is supported");
      if (words[1] != "binary_little_endian" || words[2] != "1.0") {
        throw FormatError(Errc::kBadHeader, "unsupported format '" + words[1] + " " + words[2] + "'");
      }
      saw_format = true;
    } else if (words[0] == "element") {
      if (words.size() != 3) throw FormatError(Errc::kBadHeader, "malformed element line");
      uint64_t count = 0;
      const auto& c = words[2];
      if (std::from_chars(c.data(), c.data() + c.size(), count).ec != std::errc()) {
        throw FormatError(Errc::kBadHeader, "bad element count '" + c + "'");
      }
      if (words[1] == "vertex" && !saw_vertex) {
        saw_vertex = true;
        in_vertex = true;
        h.vertex_count = count;
      } else {
        throw FormatError(Errc::kBadHeader, "unsupported element '" + words[1] + "'");
      }
    } else if (words[0] == "property") {
      if (!in_vertex) throw FormatError(Errc::kBadHeader, "property outside vertex element");
      if (words.size() != 3) {
        throw FormatError(Errc::kWrongPropertyType, "property line '" + std::string(line) + "'");
      }
      if (words[1] != "float" && words[1] != "float32") {
        throw FormatError(Errc::kWrongPropertyType, "property '" + words[2] + "' has type " + words[1]);
      }
      h.properties.push_back(words[2]);
    } else {
      throw FormatError(Errc::kBadHeader, "unrecognized header line '" + std::string(line) + "'");
    }
  }
  if (!saw_format) throw FormatError(Errc::kBadHeader, "missing format line");
  if (!saw_vertex) throw FormatError(Errc::kBadHeader, "missing vertex element");
  h.data_offset = pos;
  return h;
}

}  // namespace

const std::vector<std::string>& canonical_ply_properties() {
  static const std::vector<std::string> names = properties_for_rest_count(45);
  return names;
}

std::vector<uint8_t> serialize_gaussian_ply(std::span<const RawGaussianRecord> records) {
  std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(records.size()) + "\n";
  for (const auto& name : canonical_ply_properties()) header += "property float " + name + "\n";
  header += "end_header\n";

  std::vector<uint8_t> out(header.size() + records.size_bytes());
  std::memcpy(out.data(), header.data(), header.size());
  if (!records.empty()) std::memcpy(out.data() + header.size(), records.data(), records.size_bytes());
  return out;
}

std::vector<RawGaussianRecord> parse_gaussian_ply(std::span<const uint8_t> bytes) {
  const Header h = parse_header(bytes);

  int rest_count = 0;
  for (const auto& p : h.properties) {
    if (p.starts_with("f_rest_")) ++rest_count;
  }
  if (rest_count != 0 && rest_count != 9 && rest_count != 24 && rest_count != 45) {
    throw FormatError(Errc::kMissingProperty, "f_rest count " + std::to_string(rest_count) +
                                                  " is not a complete SH degree");
  }
  const auto expected = properties_for_rest_count(rest_count);
  for (size_t i = 0; i < expected.size(); ++i) {
    if (i >= h.properties.size()) throw FormatError(Errc::kMissingProperty, "'" + expected[i] + "'");
    if (h.properties[i] != expected[i]) {
      throw FormatError(Errc::kMissingProperty,
                        "expected '" + expected[i] + "' at position " + std::to_string(i) + ", found '" +
                            h.properties[i] + "'");
    }
  }
  if (h.properties.size() > expected.size()) {
    throw FormatError(Errc::kUnexpectedProperty, "'" + h.properties[expected.size()] + "'");
  }

  const size_t stride = expected.size() * sizeof(float);
  const size_t available = bytes.size() - h.data_offset;
  if (h.vertex_count > available / stride) {
    throw FormatError(Errc::kTruncated, "header declares " + std::to_string(h.vertex_count) +
                                            " vertices, payload holds " + std::to_string(available / stride));
  }
  if (available != h.vertex_count * stride) {
    throw FormatError(Errc::kBadHeader, std::to_string(available - h.vertex_count * stride) +
                                            " trailing bytes after vertex data");
  }

  std::vector<RawGaussianRecord> records(h.vertex_count);
  const uint8_t* src = bytes.data() + h.data_offset;
  if (rest_count == 45) {
    if (!records.empty()) std::memcpy(records.data(), src, records.size() * sizeof(RawGaussianRecord));
    return records;
  }

  const int per_channel = rest_count / 3;
  std::vector<float> row(expected.size());
  for (auto& rec : records) {
    std::memcpy(row.data(), src, stride);
    src += stride;
    const float* v = row.data();
    std::memcpy(rec.position.data(), v, 3 * sizeof(float));
    std::memcpy(rec.normal.data(), v + 3, 3 * sizeof(float));
    std::memcpy(rec.f_dc.data(), v + 6, 3 * sizeof(float));
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < per_channel; ++k) rec.f_rest[c * 15 + k] = v[9 + c * per_channel + k];
    }
    const float* tail = v + 9 + rest_count;
    rec.opacity_logit = tail[0];
    std::memcpy(rec.log_scale.data(), tail + 1, 3 * sizeof(float));
    std::memcpy(rec.rotation.data(), tail + 4, 4 * sizeof(float));
  }
  return records;
}

std::vector<RawGaussianRecord> read_gaussian_ply(const std::filesystem::path& path) {
  return parse_gaussian_ply(read_file_bytes(path));
}

void write_gaussian_ply(std::span<const RawGaussianRecord> records, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_gaussian_ply(records));
}

}  // namespace fpgs
