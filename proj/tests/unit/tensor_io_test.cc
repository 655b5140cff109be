#include <cstring>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "fpgs/tensor_io.h"
#include "test_support.h"

namespace fpgs {
namespace {

using testing::TempDir;

Errc error_code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a FormatError";
  return Errc::kIo;
}

// ----- tensor container -----

TEST(TensorFile, EmptyFileIsHeaderOnly) {
  const auto bytes = serialize_tensor_file(TensorFile{});
  ASSERT_EQ(bytes.size(), kTensorFileHeaderSize);
  EXPECT_EQ(std::memcmp(bytes.data(), "FPGS", 4), 0);
  EXPECT_EQ(parse_tensor_file(bytes).size(), 0u);
}

TEST(TensorFile, SingleTensorRoundTrip) {
  TensorFile f;
  f.add("w", {2, 3}, {1, 2, 3, 4, 5, 6});
  const TensorFile back = parse_tensor_file(serialize_tensor_file(f));
  EXPECT_EQ(back, f);
  const MatrixRM m = back.matrix("w");
  EXPECT_EQ(m.rows(), 2);
  EXPECT_EQ(m(1, 0), 4.0f);
}

TEST(TensorFile, RandomFilesReserializeByteIdentically) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> rank_d(1, 4), dim_d(1, 5);
  std::normal_distribution<float> val(0.0f, 10.0f);
  for (int trial = 0; trial < 100; ++trial) {
    TensorFile f;
    const int count = 1 + trial % 4;
    for (int t = 0; t < count; ++t) {
      std::vector<uint64_t> shape(rank_d(rng));
      size_t n = 1;
      for (auto& d : shape) n *= (d = dim_d(rng));
      std::vector<float> data(n);
      for (auto& v : data) v = val(rng);
      f.add("t" + std::to_string(trial) + "/" + std::to_string(t) + "\xc3\xa9", shape, data);
    }
    const auto bytes = serialize_tensor_file(f);
    const TensorFile back = parse_tensor_file(bytes);
    EXPECT_EQ(back, f);
    EXPECT_EQ(serialize_tensor_file(back), bytes);
  }
}

TEST(TensorFile, AddRejectsDuplicatesAndBadShapes) {
  TensorFile f;
  f.add("a", {2}, {1, 2});
  EXPECT_EQ(error_code_of([&] { f.add("a", {1}, {3}); }), Errc::kDuplicateName);
  EXPECT_EQ(error_code_of([&] { f.add("b", {3}, {1, 2}); }), Errc::kShapeMismatch);
  EXPECT_EQ(error_code_of([&] { f.add("c", {}, {}); }), Errc::kShapeMismatch);
}

TEST(TensorFile, ParserRejectsCorruptInput) {
  TensorFile f;
  f.add("x", {4}, {1, 2, 3, 4});
  const auto good = serialize_tensor_file(f);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(error_code_of([&] { parse_tensor_file(magic); }), Errc::kBadMagic);

  auto version = good;
  version[4] = 9;
  EXPECT_EQ(error_code_of([&] { parse_tensor_file(version); }), Errc::kUnsupportedVersion);

  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_EQ(error_code_of([&] { parse_tensor_file(truncated); }), Errc::kTruncated);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(error_code_of([&] { parse_tensor_file(trailing); }), Errc::kShapeMismatch);

  // dtype field follows the u32 name length and the 1-byte name
  auto dtype = good;
  dtype[kTensorFileHeaderSize + 4 + 1] = 7;
  EXPECT_EQ(error_code_of([&] { parse_tensor_file(dtype); }), Errc::kBadDtype);

  TensorFile two;
  two.add("x", {1}, {1});
  two.add("y", {1}, {2});
  auto dup = serialize_tensor_file(two);
  const auto pos = std::string(dup.begin(), dup.end()).rfind('y');
  dup[pos] = 'x';
  EXPECT_EQ(error_code_of([&] { parse_tensor_file(dup); }), Errc::kDuplicateName);
}

TEST(TensorFile, FeatureMapAccessor) {
  FeatureMap m(2, 3, 4);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = float(i);
  TensorFile f;
  f.add("map", m);
  EXPECT_EQ(f.get("map").shape, (std::vector<uint64_t>{2, 3, 4}));
  EXPECT_EQ(f.feature_map("map"), m);
  EXPECT_THROW(f.get("missing"), ValidationError);
}

TEST(TensorFile, DiskRoundTrip) {
  TempDir dir;
  TensorFile f;
  f.add("v", {3}, {1.5f, -2.0f, 0.25f});
  write_tensor_file(f, dir / "a.tf");
  EXPECT_EQ(read_tensor_file(dir / "a.tf"), f);
  EXPECT_EQ(error_code_of([&] { read_tensor_file(dir / "missing.tf"); }), Errc::kIo);
}

// ----- PLY -----

std::vector<RawGaussianRecord> random_records(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> val(0.0f, 2.0f);
  std::vector<RawGaussianRecord> recs(n);
  for (auto& r : recs) {
    auto* f = reinterpret_cast<float*>(&r);
    for (int i = 0; i < kPlyFloatProperties; ++i) f[i] = val(rng);
  }
  return recs;
}

std::string ply_text(const std::vector<uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }
std::vector<uint8_t> ply_bytes(const std::string& s) { return {s.begin(), s.end()}; }

TEST(Ply, SingleZeroRecord) {
  const std::vector<RawGaussianRecord> one(1);
  const auto back = parse_gaussian_ply(serialize_gaussian_ply(one));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], RawGaussianRecord{});
}

TEST(Ply, CanonicalPropertyOrder) {
  const auto& names = canonical_ply_properties();
  ASSERT_EQ(names.size(), 62u);
  EXPECT_EQ(names.front(), "x");
  EXPECT_EQ(names[6], "f_dc_0");
  EXPECT_EQ(names[9], "f_rest_0");
  EXPECT_EQ(names[53], "f_rest_44");
  EXPECT_EQ(names[54], "opacity");
  EXPECT_EQ(names.back(), "rot_3");
}

TEST(Ply, TenThousandRecordsRoundTripByteIdentically) {
  const auto recs = random_records(10000, 3);
  const auto bytes = serialize_gaussian_ply(recs);
  const auto back = parse_gaussian_ply(bytes);
  EXPECT_EQ(back, recs);
  EXPECT_EQ(serialize_gaussian_ply(back), bytes);
}

TEST(Ply, ReorderedPropertiesAreMissing) {
  std::string s = ply_text(serialize_gaussian_ply(random_records(2, 1)));
  const auto px = s.find("property float x\n");
  const auto py = s.find("property float y\n");
  ASSERT_NE(px, std::string::npos);
  s.replace(py, 17, "property float x\n");
  s.replace(px, 17, "property float y\n");
  EXPECT_EQ(error_code_of([&] { parse_gaussian_ply(ply_bytes(s)); }), Errc::kMissingProperty);
}

TEST(Ply, RejectsAsciiAndWrongTypes) {
  const std::string good = ply_text(serialize_gaussian_ply(random_records(2, 1)));

  std::string ascii = good;
  ascii.replace(ascii.find("binary_little_endian"), 20, "ascii");
  EXPECT_EQ(error_code_of([&] { parse_gaussian_ply(ply_bytes(ascii)); }), Errc::kAsciiPly);

  std::string dbl = good;
  dbl.replace(dbl.find("property float opacity"), 14, "property double");
  EXPECT_EQ(error_code_of([&] { parse_gaussian_ply(ply_bytes(dbl)); }), Errc::kWrongPropertyType);

  std::string truncated = good;
  truncated.resize(truncated.size() - 5);
  EXPECT_EQ(error_code_of([&] { parse_gaussian_ply(ply_bytes(truncated)); }), Errc::kTruncated);
}

TEST(Ply, LowerDegreeScenesAreZeroPadded) {
  // Degree-1 layout: 3 f_rest per channel. Build it by hand from the canonical names.
  const auto& names = canonical_ply_properties();
  std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex 1\n";
  std::vector<std::string> props(names.begin(), names.begin() + 9);
  for (int i = 0; i < 9; ++i) props.push_back("f_rest_" + std::to_string(i));
  props.insert(props.end(), names.begin() + 54, names.end());
  for (const auto& p : props) header += "property float " + p + "\n";
  header += "end_header\n";
  std::vector<float> values(props.size());
  for (size_t i = 0; i < values.size(); ++i) values[i] = float(i + 1);
  std::string s = header;
  s.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));

  const auto recs = parse_gaussian_ply(ply_bytes(s));
  ASSERT_EQ(recs.size(), 1u);
  const auto& r = recs[0];
  EXPECT_EQ(r.f_dc[2], 9.0f);
  // channel R gets rest 0..2 at slots 0..2, channel G at 15..17, channel B at 30..32
  EXPECT_EQ(r.f_rest[0], 10.0f);
  EXPECT_EQ(r.f_rest[2], 12.0f);
  EXPECT_EQ(r.f_rest[3], 0.0f);
  EXPECT_EQ(r.f_rest[15], 13.0f);
  EXPECT_EQ(r.f_rest[30], 16.0f);
  EXPECT_EQ(r.f_rest[44], 0.0f);
  EXPECT_EQ(r.opacity_logit, 19.0f);
  EXPECT_EQ(r.rotation[3], 26.0f);
}

// ----- PNG -----

TEST(Png, SinglePixelScaling) {
  FeatureMap px(1, 1, 3);
  px.data = {1.0f, 0.0f, 128.0f / 255.0f};
  const FeatureMap back = decode_png(encode_png(px));
  EXPECT_EQ(back.data[0], 1.0f);
  EXPECT_EQ(back.data[1], 0.0f);
  EXPECT_EQ(back.data[2], 128.0f / 255.0f);
}

TEST(Png, WriteOfReadIsFixedPoint) {
  std::mt19937_64 rng(11);
  const auto first = encode_png(testing::random_map(17, 23, 3, rng));
  const FeatureMap decoded = decode_png(first);
  EXPECT_EQ(encode_png(decoded), first);
  EXPECT_EQ(decode_png(encode_png(decoded)), decoded);
}

TEST(Png, QuantizationErrorBound) {
  std::mt19937_64 rng(12);
  const FeatureMap img = testing::random_map(32, 32, 3, rng);
  const FeatureMap back = decode_png(encode_png(img));
  EXPECT_LE(testing::max_abs_diff(img, back), 1.0 / 510.0 + 1e-7);
}

TEST(Png, GrayIsReplicated) {
  FeatureMap g(2, 2, 1, 0.5f);
  const FeatureMap back = decode_png(encode_png(g));
  ASSERT_EQ(back.channels, 3);
  for (float v : back.data) EXPECT_EQ(v, 128.0f / 255.0f);
}

TEST(Png, RejectsGarbage) {
  const std::vector<uint8_t> junk = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_THROW(decode_png(junk), FormatError);
  EXPECT_THROW(encode_png(FeatureMap(2, 2, 2)), ValidationError);
}

// ----- flow -----

TEST(Flow, TensorRoundTripAndValidation) {
  FlowField f{FeatureMap(3, 4, 2, 0.25f), FeatureMap(3, 4, 1, 1.0f)};
  f.mask.at(1, 1, 0) = 0.0f;
  const FlowField back = flow_from_tensors(parse_tensor_file(serialize_tensor_file(flow_to_tensors(f))));
  EXPECT_EQ(back.flow, f.flow);
  EXPECT_EQ(back.mask, f.mask);

  FlowField bad = f;
  bad.mask.at(0, 0, 0) = 0.5f;
  EXPECT_THROW(bad.validate(), ValidationError);
  FlowField shape = f;
  shape.mask = FeatureMap(2, 4, 1, 1.0f);
  EXPECT_THROW(shape.validate(), ValidationError);
}

// ----- resampling -----

TEST(Resize, IdentityAndConstant) {
  std::mt19937_64 rng(5);
  const FeatureMap m = testing::random_map(6, 5, 2, rng);
  EXPECT_EQ(resize_bilinear(m, 6, 5), m);
  EXPECT_EQ(resize_nearest(m, 6, 5), m);
  const FeatureMap c(4, 4, 3, 0.3f);
  EXPECT_LE(testing::max_abs_diff(resize_bilinear(c, 9, 7), FeatureMap(9, 7, 3, 0.3f)), 1e-7);
  // 2x nearest downsample of a 4x4 picks one of each 2x2 block's pixels
  FeatureMap ramp(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) ramp.at(y, x, 0) = float(y * 4 + x);
  const FeatureMap half = resize_nearest(ramp, 2, 2);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      const float v = half.at(y, x, 0);
      const int sy = int(v) / 4, sx = int(v) % 4;
      EXPECT_EQ(sy / 2, y);
      EXPECT_EQ(sx / 2, x);
    }
  }
}

TEST(Seeds, MixSeedIsDeterministicAndSpreads) {
  EXPECT_EQ(mix_seed(1, 2), mix_seed(1, 2));
  EXPECT_NE(mix_seed(1, 2), mix_seed(1, 3));
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 2));
}

}  // namespace
}  // namespace fpgs
