#include <bit>
#include <cstring>
#include <limits>
#include <unordered_set>

#include "fpgs/tensor_io.h"

namespace fpgs {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'P', 'G', 'S'};
constexpr uint32_t kDtypeF32 = 0;

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* dst, size_t n, const char* what) {
    need(n, what);
    if (n > 0) std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(size_t n, const char* what) {
    if (remaining() < n) {
      throw FormatError(Errc::kTruncated, std::string("tensor file ends inside ") + what);
    }
  }
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

uint64_t checked_product(const std::vector<uint64_t>& shape) {
  uint64_t n = 1;
  for (uint64_t d : shape) {
    if (d != 0 && n > std::numeric_limits<uint64_t>::max() / d) {
      throw FormatError(Errc::kShapeMismatch, "shape product overflows");
    }
    n *= d;
  }
  return n;
}

}  // namespace

uint64_t Tensor::element_count() const { return checked_product(shape); }

void TensorFile::add(Tensor tensor) {
  if (tensor.shape.empty()) throw FormatError(Errc::kShapeMismatch, "tensor '" + tensor.name + "' has rank 0");
  if (tensor.element_count() != tensor.data.size()) {
    throw FormatError(Errc::kShapeMismatch, "tensor '" + tensor.name + "' shape does not match data length");
  }
  if (find(tensor.name)) throw FormatError(Errc::kDuplicateName, "tensor '" + tensor.name + "'");
  entries_.push_back(std::move(tensor));
}

void TensorFile::add(std::string name, std::vector<uint64_t> shape, std::vector<float> data) {
  add(Tensor{std::move(name), std::move(shape), std::move(data)});
}

void TensorFile::add(std::string name, const MatrixRM& matrix) {
  std::vector<float> data(matrix.data(), matrix.data() + matrix.size());
  add(std::move(name), {static_cast<uint64_t>(matrix.rows()), static_cast<uint64_t>(matrix.cols())},
      std::move(data));
}

void TensorFile::add(std::string name, const FeatureMap& map) {
  add(std::move(name),
      {static_cast<uint64_t>(map.height), static_cast<uint64_t>(map.width), static_cast<uint64_t>(map.channels)},
      map.data);
}

const Tensor* TensorFile::find(std::string_view name) const {
  for (const auto& t : entries_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const Tensor& TensorFile::get(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw ValidationError("tensor '" + std::string(name) + "' not found");
  return *t;
}

MatrixRM TensorFile::matrix(std::string_view name) const {
  const Tensor& t = get(name);
  Eigen::Index rows = 0, cols = 0;
  if (t.shape.size() == 1) {
    rows = static_cast<Eigen::Index>(t.shape[0]);
    cols = 1;
  } else if (t.shape.size() == 2) {
    rows = static_cast<Eigen::Index>(t.shape[0]);
    cols = static_cast<Eigen::Index>(t.shape[1]);
  } else {
    throw ValidationError("tensor '" + t.name + "' is not rank 1 or 2");
  }
  return Eigen::Map<const MatrixRM>(t.data.data(), rows, cols);
}

VectorF TensorFile::vector(std::string_view name) const {
  const Tensor& t = get(name);
  if (t.shape.size() != 1) throw ValidationError("tensor '" + t.name + "' is not rank 1");
  return Eigen::Map<const VectorF>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

FeatureMap TensorFile::feature_map(std::string_view name) const {
  const Tensor& t = get(name);
  if (t.shape.size() != 2 && t.shape.size() != 3) {
    throw ValidationError("tensor '" + t.name + "' is not an H x W [x C] map");
  }
  FeatureMap m;
  m.height = static_cast<int>(t.shape[0]);
  m.width = static_cast<int>(t.shape[1]);
  m.channels = t.shape.size() == 3 ? static_cast<int>(t.shape[2]) : 1;
  m.data = t.data;
  return m;
}

std::vector<uint8_t> serialize_tensor_file(const TensorFile& file) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<uint32_t>(kTensorFileVersion);
  w.put<uint32_t>(static_cast<uint32_t>(file.size()));
  w.put<uint32_t>(0);
  for (const Tensor& t : file.entries()) {
    w.put<uint32_t>(static_cast<uint32_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<uint32_t>(kDtypeF32);
    w.put<uint32_t>(static_cast<uint32_t>(t.shape.size()));
    for (uint64_t d : t.shape) w.put<uint64_t>(d);
    w.put_bytes(t.data.data(), t.data.size() * sizeof(float));
  }
  return w.take();
}

TensorFile parse_tensor_file(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4, "header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(Errc::kBadMagic, "expected \"FPGS\"");
  const auto version = r.get<uint32_t>("header");
  if (version != kTensorFileVersion) {
    throw FormatError(Errc::kUnsupportedVersion, "version " + std::to_string(version));
  }
  const auto count = r.get<uint32_t>("header");
  r.get<uint32_t>("header");

  TensorFile file;
  for (uint32_t i = 0; i < count; ++i) {
    Tensor t;
    const auto name_len = r.get<uint32_t>("tensor name length");
    if (name_len > r.remaining()) throw FormatError(Errc::kTruncated, "tensor name");
    t.name.resize(name_len);
    r.get_bytes(t.name.data(), name_len, "tensor name");
    const auto dtype = r.get<uint32_t>("tensor dtype");
    if (dtype != kDtypeF32) throw FormatError(Errc::kBadDtype, "dtype code " + std::to_string(dtype));
    const auto rank = r.get<uint32_t>("tensor rank");
    if (rank == 0) throw FormatError(Errc::kShapeMismatch, "tensor '" + t.name + "' has rank 0");
    if (static_cast<uint64_t>(rank) * 8 > r.remaining()) throw FormatError(Errc::kTruncated, "tensor shape");
    t.shape.resize(rank);
    for (auto& d : t.shape) d = r.get<uint64_t>("tensor shape");
    const uint64_t n = checked_product(t.shape);
    if (n > r.remaining() / sizeof(float)) {
      throw FormatError(Errc::kTruncated, "payload of tensor '" + t.name + "'");
    }
    t.data.resize(n);
    r.get_bytes(t.data.data(), n * sizeof(float), "tensor payload");
    file.add(std::move(t));
  }
  if (r.remaining() != 0) {
    throw FormatError(Errc::kShapeMismatch, std::to_string(r.remaining()) + " bytes beyond the declared tensors");
  }
  return file;
}

TensorFile read_tensor_file(const std::filesystem::path& path) { return parse_tensor_file(read_file_bytes(path)); }

void write_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_tensor_file(file));
}

void FlowField::validate() const {
  if (flow.channels != 2) throw ValidationError("flow must have 2 channels");
  if (mask.channels != 1) throw ValidationError("mask must have 1 channel");
  if (flow.height != mask.height || flow.width != mask.width) {
    throw ValidationError("flow and mask sizes differ");
  }
  for (float m : mask.data) {
    if (m != 0.0f && m != 1.0f) throw ValidationError("mask is not binary");
  }
}

TensorFile flow_to_tensors(const FlowField& flow) {
  flow.validate();
  TensorFile file;
  file.add("flow", flow.flow);
  file.add("mask", {static_cast<uint64_t>(flow.mask.height), static_cast<uint64_t>(flow.mask.width)}, flow.mask.data);
  return file;
}

FlowField flow_from_tensors(const TensorFile& file) {
  FlowField f{file.feature_map("flow"), file.feature_map("mask")};
  f.validate();
  return f;
}

}  // namespace fpgs
