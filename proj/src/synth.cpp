#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "cgistereo/data_io.hpp"
#include "cgistereo/nn.hpp"

namespace cgistereo {

SynthSpec SynthSpec::parse(const std::string& text) {
  SynthSpec s;
  if (text == "slanted_planes") {
    s.mode = SynthMode::slanted_planes;
  } else if (text == "blobs") {
    s.mode = SynthMode::blobs;
  } else if (text.rfind("constant:", 0) == 0) {
    s.mode = SynthMode::constant;
    try {
      s.constant_disparity = std::stod(text.substr(9));
    } catch (const std::exception&) {
      throw std::invalid_argument("synth: bad constant disparity in '" + text + "'");
    }
  } else {
    throw std::invalid_argument("synth: unknown mode '" + text + "' (constant:K, slanted_planes, blobs)");
  }
  return s;
}

std::string SynthSpec::str() const {
  switch (mode) {
    case SynthMode::constant: {
      std::ostringstream os;
      os << std::setprecision(17) << constant_disparity;
      return "constant:" + os.str();
    }
    case SynthMode::slanted_planes: return "slanted_planes";
    case SynthMode::blobs: return "blobs";
  }
  return "";
}

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix_seed(seed, "synth")) {}
  double uniform() { return unit_uniform(state_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {  // inclusive
    return lo + static_cast<std::int64_t>(uniform() * static_cast<double>(hi - lo + 1));
  }

 private:
  std::uint64_t state_;
};

double quantize_quarter(double v) { return std::round(v * 4.0) / 4.0; }

// Disparity field on the left grid.
std::vector<double> make_disparity(Rng& rng, std::int64_t H, std::int64_t W, double max_d, const SynthSpec& spec) {
  std::vector<double> d(static_cast<std::size_t>(H * W));
  auto at = [&](std::int64_t y, std::int64_t x) -> double& { return d[static_cast<std::size_t>(y * W + x)]; };

  if (spec.mode == SynthMode::constant) {
    std::fill(d.begin(), d.end(), spec.constant_disparity);
    return d;
  }

  if (spec.mode == SynthMode::slanted_planes) {
    // Background plane in the far half of the range, then nearer slanted patches.
    const double base = rng.uniform(0.1, 0.3) * max_d;
    const double gx = rng.uniform(-0.15, 0.15) * max_d / static_cast<double>(W);
    const double gy = rng.uniform(-0.15, 0.15) * max_d / static_cast<double>(H);
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        at(y, x) = base + gx * static_cast<double>(x - W / 2) + gy * static_cast<double>(y - H / 2);
      }
    }
    const auto patches = rng.integer(1, 3);
    for (std::int64_t p = 0; p < patches; ++p) {
      const auto pw = rng.integer(W / 8, W / 3);
      const auto ph = rng.integer(H / 6, H / 2);
      const auto x0 = rng.integer(0, W - pw);
      const auto y0 = rng.integer(0, H - ph);
      const double centre = rng.uniform(0.45, 0.8) * max_d;
      const double sx = rng.uniform(-0.1, 0.1);
      const double sy = rng.uniform(-0.1, 0.1);
      for (std::int64_t y = y0; y < y0 + ph; ++y) {
        for (std::int64_t x = x0; x < x0 + pw; ++x) {
          at(y, x) = centre + sx * static_cast<double>(x - x0 - pw / 2) + sy * static_cast<double>(y - y0 - ph / 2);
        }
      }
    }
    for (auto& v : d) v = std::clamp(quantize_quarter(v), 1.0, max_d - 1.0);
    return d;
  }

  // blobs: integer-disparity background and elliptical foreground blobs
  const double background = std::round(rng.uniform(0.1, 0.35) * max_d);
  std::fill(d.begin(), d.end(), std::max(1.0, background));
  const auto blobs = rng.integer(2, 4);
  for (std::int64_t b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0.0, static_cast<double>(W));
    const double cy = rng.uniform(0.0, static_cast<double>(H));
    const double rx = rng.uniform(0.06, 0.2) * static_cast<double>(W);
    const double ry = rng.uniform(0.1, 0.3) * static_cast<double>(H);
    const double value = std::round(rng.uniform(0.4, 0.9) * max_d);
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const double ex = (static_cast<double>(x) - cx) / rx;
        const double ey = (static_cast<double>(y) - cy) / ry;
        if (ex * ex + ey * ey <= 1.0) at(y, x) = std::max(at(y, x), value);
      }
    }
  }
  for (auto& v : d) v = std::clamp(v, 1.0, max_d - 1.0);
  return d;
}

struct Texture {
  std::array<double, 3> gain{};
  double sample(Rng& rng, int channel, double dot) const {
    const double v = 0.5 + gain[static_cast<std::size_t>(channel)] * (dot - 0.5) + 0.05 * (rng.uniform() - 0.5);
    return std::clamp(v, 0.0, 1.0);
  }
};

}  // namespace

StereoSample synth_stereo(std::uint64_t seed, std::int64_t H, std::int64_t W, std::int64_t max_disparity,
                          const SynthSpec& spec) {
  if (H <= 0 || W <= 0 || H % 32 != 0 || W % 32 != 0) {
    throw ShapeError("synth: height and width must be positive multiples of 32, got " + std::to_string(H) + "x" +
                     std::to_string(W));
  }
  if (max_disparity <= 0 || max_disparity % 4 != 0) {
    throw ShapeError("synth: max_disparity must be a positive multiple of 4");
  }
  const double max_d = static_cast<double>(max_disparity);
  if (spec.mode == SynthMode::constant &&
      (spec.constant_disparity < 0.0 || spec.constant_disparity >= max_d)) {
    throw ShapeError("synth: constant disparity " + std::to_string(spec.constant_disparity) +
                     " outside [0, max_disparity)");
  }

  Rng rng(seed);
  const std::vector<double> disp = make_disparity(rng, H, W, max_d, spec);
  for (double v : disp) {
    if (v < 0.0 || v >= max_d) throw ShapeError("synth: disparity field exceeds max_disparity");
  }

  Texture tex;
  for (auto& g : tex.gain) g = rng.uniform(0.6, 1.0);
  const std::int64_t plane = H * W;
  std::vector<double> right(static_cast<std::size_t>(3 * plane));
  for (std::int64_t p = 0; p < plane; ++p) {
    const double dot = rng.uniform();
    for (int c = 0; c < 3; ++c) right[static_cast<std::size_t>(c * plane + p)] = tex.sample(rng, c, dot);
  }

  std::vector<double> left(right.size());
  std::vector<double> occlusion(static_cast<std::size_t>(plane), 0.0);
  for (std::int64_t y = 0; y < H; ++y) {
    const double* drow = disp.data() + y * W;
    for (std::int64_t x = 0; x < W; ++x) {
      const double u = static_cast<double>(x) - drow[x];
      bool occluded = u < 0.0;
      // A nearer surface to the right that lands on the same right-image
      // neighbourhood hides this pixel.
      for (std::int64_t x2 = x + 1; x2 < W && !occluded; ++x2) {
        if (drow[x2] > drow[x] + 0.5 && static_cast<double>(x2) - drow[x2] < u + 1.0) occluded = true;
      }
      const auto p = y * W + x;
      if (occluded) {
        occlusion[static_cast<std::size_t>(p)] = 1.0;
        const double dot = rng.uniform();
        for (int c = 0; c < 3; ++c) left[static_cast<std::size_t>(c * plane + p)] = tex.sample(rng, c, dot);
        continue;
      }
      const auto lo = static_cast<std::int64_t>(std::floor(u));
      const double frac = u - static_cast<double>(lo);
      const std::int64_t hi = std::min(lo + 1, W - 1);
      for (int c = 0; c < 3; ++c) {
        const double* rrow = right.data() + c * plane + y * W;
        left[static_cast<std::size_t>(c * plane + p)] = (1.0 - frac) * rrow[lo] + frac * rrow[hi];
      }
    }
  }

  StereoSample s;
  s.left = Tensor::from({1, 3, H, W}, std::move(left));
  s.right = Tensor::from({1, 3, H, W}, std::move(right));
  s.disparity = Tensor::from({1, 1, H, W}, disp);
  std::vector<double> valid(disp.size());
  for (std::size_t k = 0; k < disp.size(); ++k) valid[k] = (disp[k] > 0.0 && disp[k] < max_d) ? 1.0 : 0.0;
  s.valid = Tensor::from({1, 1, H, W}, std::move(valid));
  s.occlusion = Tensor::from({1, 1, H, W}, std::move(occlusion));
  return s;
}

// ---------------------------------------------------------------------------

Tensor image_to_tensor(const Image8& image) {
  const std::int64_t H = image.height, W = image.width, plane = H * W;
  std::vector<double> v(static_cast<std::size_t>(3 * plane));
  for (std::int64_t p = 0; p < plane; ++p) {
    for (std::int64_t c = 0; c < 3; ++c) {
      const auto src = image.channels == 3 ? p * 3 + c : p;
      v[static_cast<std::size_t>(c * plane + p)] = static_cast<double>(image.data[static_cast<std::size_t>(src)]) / 255.0;
    }
  }
  return Tensor::from({1, 3, H, W}, std::move(v));
}

Image8 tensor_to_image(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || (t.dim(1) != 3 && t.dim(1) != 1)) {
    throw ShapeError("image: expected [1,3,H,W] or [1,1,H,W], got " + shape_str(t.shape()));
  }
  Image8 img;
  img.channels = t.dim(1);
  img.height = t.dim(2);
  img.width = t.dim(3);
  const std::int64_t plane = img.height * img.width;
  img.data.resize(static_cast<std::size_t>(plane * img.channels));
  const auto v = t.values();
  for (std::int64_t p = 0; p < plane; ++p) {
    for (std::int64_t c = 0; c < img.channels; ++c) {
      const double x = std::clamp(v[static_cast<std::size_t>(c * plane + p)], 0.0, 1.0);
      img.data[static_cast<std::size_t>(p * img.channels + c)] = static_cast<std::uint8_t>(std::lround(x * 255.0));
    }
  }
  return img;
}

Tensor field_to_tensor(const FloatField& field) {
  std::vector<double> v(field.values.begin(), field.values.end());
  return Tensor::from({1, 1, field.height, field.width}, std::move(v));
}

FloatField tensor_to_field(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
    throw ShapeError("field: expected [1,1,H,W], got " + shape_str(t.shape()));
  }
  FloatField f;
  f.height = t.dim(2);
  f.width = t.dim(3);
  f.values.reserve(static_cast<std::size_t>(t.numel()));
  for (double v : t.values()) f.values.push_back(static_cast<float>(v));
  return f;
}

void write_sample_bundle(const std::filesystem::path& dir, const StereoSample& sample) {
  std::filesystem::create_directories(dir);
  write_pnm_file(dir / "left.ppm", tensor_to_image(sample.left));
  write_pnm_file(dir / "right.ppm", tensor_to_image(sample.right));
  write_pfm_file(dir / "disp.pfm", tensor_to_field(sample.disparity));
  write_pnm_file(dir / "mask.pgm", tensor_to_image(sample.valid));
  if (sample.occlusion.defined()) write_pnm_file(dir / "occlusion.pgm", tensor_to_image(sample.occlusion));
}

StereoSample read_sample_bundle(const std::filesystem::path& dir) {
  StereoSample s;
  s.left = image_to_tensor(read_pnm_file(dir / "left.ppm"));
  s.right = image_to_tensor(read_pnm_file(dir / "right.ppm"));
  s.disparity = field_to_tensor(read_pfm_file(dir / "disp.pfm").field);
  auto binary = [](const Image8& img) {
    if (img.channels != 1) throw FormatError("mask images must be single-channel PGM");
    std::vector<double> v;
    v.reserve(img.data.size());
    for (auto b : img.data) v.push_back(b >= 128 ? 1.0 : 0.0);
    return Tensor::from({1, 1, img.height, img.width}, std::move(v));
  };
  s.valid = binary(read_pnm_file(dir / "mask.pgm"));
  if (std::filesystem::exists(dir / "occlusion.pgm")) {
    s.occlusion = binary(read_pnm_file(dir / "occlusion.pgm"));
  } else {
    s.occlusion = Tensor::zeros(s.valid.shape());
  }
  if (s.left.shape() != s.right.shape() || s.disparity.dim(2) != s.left.dim(2) ||
      s.disparity.dim(3) != s.left.dim(3) || s.valid.shape() != s.disparity.shape()) {
    throw ShapeError("bundle " + dir.string() + ": image, disparity and mask sizes disagree");
  }
  return s;
}

}  // namespace cgistereo
