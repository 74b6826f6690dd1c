#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgistereo/tensor.hpp"

namespace cgistereo {

/// Malformed or unsupported file content; the message carries the byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-channel float image, rows stored top to bottom.
struct FloatField {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> values;

  float at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * width + x)]; }
};

struct PfmData {
  FloatField field;
  double scale = -1.0;
};

/// Grayscale "Pf" only. Rows on disk run bottom to top; a negative scale means
/// little-endian payload.
PfmData read_pfm(const std::string& bytes);
std::string write_pfm(const FloatField& field, double scale = -1.0);

PfmData read_pfm_file(const std::filesystem::path& path);
void write_pfm_file(const std::filesystem::path& path, const FloatField& field, double scale = -1.0);

/// 8-bit binary PGM (P5, 1 channel) or PPM (P6, 3 channels), maxval 255.
struct Image8 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
  std::vector<std::uint8_t> data;  // interleaved, row-major
};

Image8 read_pnm(const std::string& bytes);
std::string write_pnm(const Image8& image);
Image8 read_pnm_file(const std::filesystem::path& path);
void write_pnm_file(const std::filesystem::path& path, const Image8& image);

/// [1,3,H,W] in [0,1] (PGM inputs are replicated to three channels).
Tensor image_to_tensor(const Image8& image);
Image8 tensor_to_image(const Tensor& t);

/// [1,1,H,W] <-> field conversions.
Tensor field_to_tensor(const FloatField& field);
FloatField tensor_to_field(const Tensor& t);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

struct StereoSample {
  Tensor left;       // [1,3,H,W] in [0,1]
  Tensor right;      // [1,3,H,W] in [0,1]
  Tensor disparity;  // [1,1,H,W] ground truth on the left grid, full-resolution pixels
  Tensor valid;      // [1,1,H,W] 0/1
  Tensor occlusion;  // [1,1,H,W] 1 = left pixel not visible in the right view
};

enum class SynthMode { constant, slanted_planes, blobs };

struct SynthSpec {
  SynthMode mode = SynthMode::slanted_planes;
  double constant_disparity = 0.0;  // constant mode only

  static SynthSpec parse(const std::string& text);  // "constant:K", "slanted_planes", "blobs"
  std::string str() const;
};

/// Random-dot stereo pair with exact ground truth. The right view is a random
/// dot texture; each visible left pixel samples it at x - d(x, y) (linear
/// interpolation along the row for fractional disparities), so re-warping the
/// right image by the ground truth reproduces the left image on non-occluded
/// pixels. Occluded left pixels get fresh noise.
StereoSample synth_stereo(std::uint64_t seed, std::int64_t height, std::int64_t width, std::int64_t max_disparity,
                          const SynthSpec& spec);

/// Bundle layout: left.ppm, right.ppm, disp.pfm, mask.pgm (255 = valid).
void write_sample_bundle(const std::filesystem::path& dir, const StereoSample& sample);
StereoSample read_sample_bundle(const std::filesystem::path& dir);

}  // namespace cgistereo
