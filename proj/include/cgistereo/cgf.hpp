#pragma once

#include <array>

#include "cgistereo/backbone.hpp"
#include "cgistereo/cost_volume.hpp"

namespace cgistereo {

struct CgfConfig {
  bool in_encoder = false;
  bool in_decoder = true;
  bool detach_context = false;
  std::int64_t fusion_kernel = 5;

  void validate() const;
  /// "none", "encoder", "decoder" or "encoder,decoder"
  std::string positions_str() const;
  void set_positions(const std::string& text);
};

/// Context and Geometry Fusion:
///   C_expand = proj(c) repeated over disparity
///   A_s      = sigmoid(f_att(G + C_expand))
///   G_fused  = lrelu(BN(f_fuse(G + A_s * C_expand)))
/// where f_att and f_fuse are separate 1 x k x k 3D convolutions.
class CgfBlock {
 public:
  CgfBlock(std::int64_t context_channels, std::int64_t geometry_channels, std::int64_t kernel, double slope,
           ParamRegistry& reg, std::uint64_t seed, const std::string& prefix);

  struct Output {
    CostVolume fused;
    Tensor attention;  // A_s
  };
  Output forward(const CostVolume& g, const Tensor& context, bool detach_context, NormMode mode);
  CostVolume operator()(const CostVolume& g, const Tensor& context, bool detach_context, NormMode mode) {
    return forward(g, context, detach_context, mode).fused;
  }

  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  Conv2d proj_;
  Conv3d att_conv_;
  Conv3d fuse_conv_;
  BatchNorm fuse_bn_;
  double slope_;
};

/// Geometry features at 1/4 (input volume), 1/8, 1/16 and 1/32 resolution with
/// channel plan C, 2C, 4C, 6C.
struct GeometryPyramid {
  CostVolume g4;
  CostVolume g8;
  CostVolume g16;
  CostVolume g32;
};

/// Three-stage 3D encoder and CGF-interleaved decoder.
class CostAggregation {
 public:
  /// context_channels: merged context channels at 1/8, 1/16, 1/32.
  CostAggregation(std::int64_t volume_channels, std::array<std::int64_t, 3> context_channels, const CgfConfig& cfg,
                  double slope, ParamRegistry& reg, std::uint64_t seed, const std::string& prefix = "agg");

  GeometryPyramid encode(const CostVolume& v_af, const FeaturePyramid& ctx, NormMode mode);
  /// Returns the 1-channel pre-softmax matching cost at quarter resolution.
  CostVolume decode(const GeometryPyramid& pyr, const FeaturePyramid& ctx, NormMode mode);
  CostVolume operator()(const CostVolume& v_af, const FeaturePyramid& ctx, NormMode mode) {
    return decode(encode(v_af, ctx, mode), ctx, mode);
  }

  const CgfConfig& config() const { return cfg_; }
  std::int64_t volume_channels() const { return channels_[0]; }

 private:
  struct DownStage {
    ConvBnAct3d down;  // k3 s2
    ConvBnAct3d conv;  // k3 s1
  };
  struct UpStage {
    ConvTranspose3d deconv;  // k4 s2 p1
    BatchNorm bn;
    ConvBnAct3d conv_a;
    ConvBnAct3d conv_b;
  };

  CgfConfig cfg_;
  double slope_;
  std::array<std::int64_t, 4> channels_;  // C, 2C, 4C, 6C
  std::array<DownStage, 3> down_;         // 4->8, 8->16, 16->32
  std::array<UpStage, 3> up_;             // 32->16, 16->8, 8->4
  std::vector<CgfBlock> encoder_cgf_;     // at 8, 16, 32 when enabled
  std::vector<CgfBlock> decoder_cgf_;     // at 32, 16, 8 when enabled
  Conv3d head_;
};

}  // namespace cgistereo
