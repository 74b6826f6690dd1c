#pragma once

#include <array>

#include "cgistereo/nn.hpp"

namespace cgistereo {

struct BackboneConfig {
  std::int64_t stem_channels = 16;
  // Channel counts at 1/4, 1/8, 1/16, 1/32 resolution.
  std::array<std::int64_t, 4> channels{32, 48, 64, 96};
  std::int64_t blocks_per_stage = 1;
  double leaky_slope = 0.1;
  std::uint64_t seed = 1;
  // Circular instead of zero padding in every 2D conv. Used to test
  // translation consistency; not for training.
  bool circular_padding = false;

  void validate() const;
};

/// Context features at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
struct FeaturePyramid {
  Tensor f4;
  Tensor f8;
  Tensor f16;
  Tensor f32;

  const Tensor& level(int index) const;  // 0 -> f4 ... 3 -> f32
};

/// Micro-backbone of strided conv stages plus the coarse-to-fine merge path.
/// Parameters are registered as "<prefix>.stem", "<prefix>.stage{1..4}" and
/// "<prefix>.merge".
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ParamRegistry& reg, const std::string& prefix = "backbone");

  /// image [B,3,H,W] with H, W divisible by 32.
  FeaturePyramid extract(const Tensor& image, NormMode mode);
  /// Each coarser refined map is upsampled (transposed conv k=4, s=2),
  /// concatenated with the skip at the next finer scale and merged by a 3x3
  /// conv. All four refined levels are returned.
  FeaturePyramid merge_upsample(const FeaturePyramid& p, NormMode mode);

  FeaturePyramid operator()(const Tensor& image, NormMode mode) { return merge_upsample(extract(image, mode), mode); }

  const BackboneConfig& config() const { return cfg_; }

 private:
  struct UpBlock {
    ConvTranspose2d deconv;
    BatchNorm bn;
  };

  BackboneConfig cfg_;
  ConvBnAct2d stem_;
  std::array<std::vector<ConvBnAct2d>, 4> stages_;
  ConvBnAct2d merge32_;
  std::array<UpBlock, 3> up_;         // 32->16, 16->8, 8->4
  std::array<ConvBnAct2d, 3> merge_;  // at 16, 8, 4
};

}  // namespace cgistereo
