#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"

using namespace cgistereo;
namespace fs = std::filesystem;

namespace {

FloatField random_field(std::uint64_t seed) {
  std::uint64_t state = mix_seed(seed, "field");
  FloatField f;
  f.height = 1 + static_cast<std::int64_t>(unit_uniform(state) * 20);
  f.width = 1 + static_cast<std::int64_t>(unit_uniform(state) * 20);
  for (std::int64_t i = 0; i < f.height * f.width; ++i) {
    // arbitrary bit patterns, including subnormals, infinities and NaNs
    const auto bits = static_cast<std::uint32_t>(unit_uniform(state) * 4294967296.0);
    float v;
    std::memcpy(&v, &bits, sizeof v);
    f.values.push_back(v);
  }
  return f;
}

bool same_bits(const FloatField& a, const FloatField& b) {
  return a.height == b.height && a.width == b.width && a.values.size() == b.values.size() &&
         std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cgistereo_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("PFM roundtrip is bit-exact") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const FloatField f = random_field(seed);
    const auto back = read_pfm(write_pfm(f));
    CHECK(same_bits(f, back.field));
    CHECK(back.scale == -1.0);
  }
}

TEST_CASE("PFM rows run bottom to top on disk") {
  FloatField f{2, 1, {1.0f, 2.0f}};
  const std::string bytes = write_pfm(f);
  float first;
  std::memcpy(&first, bytes.data() + bytes.size() - 8, 4);
  CHECK(first == 2.0f);
}

TEST_CASE("PFM reads big-endian payloads") {
  std::string bytes = "Pf\n1 1\n1.0\n";
  const float v = 3.5f;
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 3; i >= 0; --i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  const auto d = read_pfm(bytes);
  CHECK(d.field.values[0] == 3.5f);
  CHECK(d.scale == 1.0);
}

TEST_CASE("malformed PFM is rejected") {
  CHECK_THROWS_AS(read_pfm(""), FormatError);
  CHECK_THROWS_AS(read_pfm("PF\n1 1\n-1\n0000"), FormatError);  // colour PFM unsupported
  CHECK_THROWS_AS(read_pfm("Pf\n2 2\n-1\n0000"), FormatError);  // truncated payload
  CHECK_THROWS_AS(read_pfm("Pf\nx 2\n-1\n"), FormatError);
  CHECK_THROWS_AS(read_pfm("Pf\n1 1\n0\n0000"), FormatError);   // zero scale
  CHECK_THROWS_AS(read_pfm_file("/nonexistent/disp.pfm"), IoError);
}

TEST_CASE("PNM roundtrip and errors") {
  Image8 img{3, 4, 3, {}};
  for (int i = 0; i < 36; ++i) img.data.push_back(static_cast<std::uint8_t>(i * 7));
  const auto back = read_pnm(write_pnm(img));
  CHECK(back.data == img.data);
  CHECK(back.channels == 3);
  Image8 gray{2, 2, 1, {0, 64, 128, 255}};
  const Tensor t = image_to_tensor(read_pnm(write_pnm(gray)));
  CHECK(t.shape() == Shape{1, 3, 2, 2});
  CHECK(t.values()[3] == 1.0);
  CHECK(t.values()[4 + 3] == 1.0);
  CHECK_THROWS_AS(read_pnm("P3\n1 1\n255\n0 0 0"), FormatError);
  CHECK_THROWS_AS(read_pnm("P5\n2 2\n65535\n"), FormatError);
  CHECK_THROWS_AS(read_pnm("P5\n2 2\n255\n\x01"), FormatError);
}

TEST_CASE("synthetic stereo is deterministic") {
  const auto a = synth_stereo(11, 32, 64, 16, {});
  const auto b = synth_stereo(11, 32, 64, 16, {});
  const auto c = synth_stereo(12, 32, 64, 16, {});
  CHECK(oracle::max_abs_diff(a.left, b.left) == 0.0);
  CHECK(oracle::max_abs_diff(a.disparity, b.disparity) == 0.0);
  CHECK(oracle::max_abs_diff(a.left, c.left) > 0.0);
}

TEST_CASE("constant disparity modes") {
  const auto zero = synth_stereo(3, 32, 64, 16, SynthSpec::parse("constant:0"));
  CHECK(oracle::max_abs_diff(zero.left, zero.right) == 0.0);
  for (double o : zero.occlusion.values()) CHECK(o == 0.0);

  const std::int64_t k = 5, H = 32, W = 64;
  const auto shifted = synth_stereo(3, H, W, 16, SynthSpec::parse("constant:5"));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const auto i = (c * H + y) * W + x;
        if (x >= k) CHECK(shifted.left.values()[i] == shifted.right.values()[i - k]);
        if (c == 0) CHECK(shifted.occlusion.values()[y * W + x] == (x < k ? 1.0 : 0.0));
      }
  CHECK(SynthSpec::parse("constant:2.5").str() == "constant:2.5");
  CHECK_THROWS(SynthSpec::parse("stripes"));
  CHECK_THROWS_AS(synth_stereo(1, 32, 64, 16, SynthSpec::parse("constant:16")), ShapeError);
}

TEST_CASE("re-warping the right view by ground truth reproduces the left view") {
  for (const char* mode : {"slanted_planes", "blobs"}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const std::int64_t H = 64, W = 128;
      const auto s = synth_stereo(seed, H, W, 32, SynthSpec::parse(mode));
      double worst = 0, valid = 0;
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          valid += s.valid.values()[y * W + x];
          if (s.occlusion.values()[y * W + x] != 0.0) continue;
          const double u = static_cast<double>(x) - s.disparity.values()[y * W + x];
          const auto lo = static_cast<std::int64_t>(std::floor(u));
          const double t = u - static_cast<double>(lo);
          for (std::int64_t c = 0; c < 3; ++c) {
            const double* r = s.right.values().data() + (c * H + y) * W;
            const double warped = (1 - t) * r[lo] + t * r[std::min(lo + 1, W - 1)];
            worst = std::max(worst, std::abs(warped - s.left.values()[(c * H + y) * W + x]));
          }
        }
      INFO(mode);
      CHECK(worst <= 1e-6);
      CHECK(valid > 0);
      if (std::string(mode) == "blobs") CHECK(worst == 0.0);
    }
  }
}

TEST_CASE("sample bundle roundtrip") {
  const auto dir = scratch("bundle");
  const auto s = synth_stereo(4, 32, 64, 16, {});
  write_sample_bundle(dir, s);
  const auto back = read_sample_bundle(dir);
  CHECK(oracle::max_abs_diff(s.disparity, back.disparity) <= 1e-6);  // float32 on disk
  CHECK(oracle::max_abs_diff(s.valid, back.valid) == 0.0);
  CHECK(oracle::max_abs_diff(s.left, back.left) <= 0.5 / 255.0 + 1e-12);  // 8-bit on disk
  fs::remove_all(dir);
}

TEST_CASE("atomic writes leave no temporary files") {
  const auto dir = scratch("atomic");
  fs::create_directories(dir);
  write_file_atomic(dir / "a.txt", "one");
  write_file_atomic(dir / "a.txt", "two");
  CHECK(read_file(dir / "a.txt") == "two");
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}) == 1);
  CHECK_THROWS_AS(write_file_atomic(dir / "missing" / "a.txt", "x"), IoError);
  fs::remove_all(dir);
}
