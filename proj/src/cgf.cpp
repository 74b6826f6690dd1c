#include "cgistereo/cgf.hpp"

namespace cgistereo {

void CgfConfig::validate() const {
  if (fusion_kernel < 3 || fusion_kernel % 2 == 0) {
    throw ShapeError("cgf: fusion kernel must be odd and >= 3, got " + std::to_string(fusion_kernel));
  }
}

std::string CgfConfig::positions_str() const {
  if (in_encoder && in_decoder) return "encoder,decoder";
  if (in_encoder) return "encoder";
  if (in_decoder) return "decoder";
  return "none";
}

void CgfConfig::set_positions(const std::string& text) {
  in_encoder = in_decoder = false;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find(',', start);
    const std::string item = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (item == "encoder") {
      in_encoder = true;
    } else if (item == "decoder") {
      in_decoder = true;
    } else if (item != "none" && !item.empty()) {
      throw ShapeError("cgf: unknown position '" + item + "' (expected encoder, decoder or none)");
    }
    if (end == std::string::npos) break;
    start = end + 1;
  }
}

CgfBlock::CgfBlock(std::int64_t context_channels, std::int64_t geometry_channels, std::int64_t kernel, double slope,
                   ParamRegistry& reg, std::uint64_t seed, const std::string& prefix)
    : prefix_(prefix), slope_(slope) {
  if (kernel < 3 || kernel % 2 == 0) throw ShapeError("cgf: fusion kernel must be odd and >= 3");
  proj_ = make_conv2d(reg, prefix + ".context_proj", context_channels, geometry_channels, 1, 1, true, seed);
  att_conv_ = make_conv3d(reg, prefix + ".attention", geometry_channels, geometry_channels, {1, kernel, kernel},
                          {1, 1, 1}, true, seed);
  fuse_conv_ = make_conv3d(reg, prefix + ".fuse.conv", geometry_channels, geometry_channels, {1, kernel, kernel},
                           {1, 1, 1}, false, seed);
  fuse_bn_ = make_batch_norm(reg, prefix + ".fuse.bn", geometry_channels);
}

CgfBlock::Output CgfBlock::forward(const CostVolume& g, const Tensor& context, bool detach_context, NormMode mode) {
  const Tensor& geo = g.data;
  if (geo.rank() != 5 || context.rank() != 4) {
    throw ShapeError("cgf: expected [B,C,D,H,W] geometry and [B,C,H,W] context");
  }
  if (geo.dim(0) != context.dim(0) || geo.dim(3) != context.dim(2) || geo.dim(4) != context.dim(3)) {
    throw ShapeError("cgf: spatial mismatch between geometry " + shape_str(geo.shape()) + " and context " +
                     shape_str(context.shape()));
  }
  if (geo.dim(1) != proj_.weight.dim(0) || context.dim(1) != proj_.weight.dim(1)) {
    throw ShapeError("cgf: channel mismatch (geometry " + std::to_string(geo.dim(1)) + ", context " +
                     std::to_string(context.dim(1)) + ")");
  }
  Tensor projected = proj_(context);
  if (detach_context) projected = detach(projected);
  Tensor c_expand = expand(expand(projected, 2, 1, true), 2, geo.dim(2));
  Tensor attention = sigmoid(att_conv_(add(geo, c_expand)));
  Tensor fused = leaky_relu(fuse_bn_(fuse_conv_(add(geo, mul(attention, c_expand))), mode), slope_);
  return {{fused, g.disparity_stride, g.resolution}, attention};
}

namespace {

// Transposed convs can overshoot odd extents; crop back to the skip's shape.
Tensor crop_to(const Tensor& x, const Shape& target) {
  Tensor out = x;
  for (int axis = 2; axis < 5; ++axis) {
    const auto want = target[static_cast<std::size_t>(axis)];
    if (out.dim(axis) < want) {
      throw ShapeError("decoder: upsampled extent " + std::to_string(out.dim(axis)) + " smaller than skip extent " +
                       std::to_string(want) + " on axis " + std::to_string(axis));
    }
    if (out.dim(axis) > want) out = narrow(out, axis, 0, want);
  }
  return out;
}

const Resolution kLevels[] = {Resolution::quarter, Resolution::eighth, Resolution::sixteenth,
                              Resolution::thirtysecond};

}  // namespace

CostAggregation::CostAggregation(std::int64_t volume_channels, std::array<std::int64_t, 3> context_channels,
                                 const CgfConfig& cfg, double slope, ParamRegistry& reg, std::uint64_t seed,
                                 const std::string& prefix)
    : cfg_(cfg), slope_(slope) {
  cfg_.validate();
  if (volume_channels < 1) throw ShapeError("aggregation: volume channel count must be >= 1");
  const auto C = volume_channels;
  channels_ = {C, 2 * C, 4 * C, 6 * C};
  for (int i = 0; i < 3; ++i) {
    const std::string name = prefix + ".down" + std::to_string(i + 1);
    down_[i].down = make_conv_bn_act3d(reg, name + ".stride2", channels_[i], channels_[i + 1], {3, 3, 3}, {2, 2, 2},
                                       slope, seed);
    down_[i].conv = make_conv_bn_act3d(reg, name + ".conv", channels_[i + 1], channels_[i + 1], {3, 3, 3},
                                       {1, 1, 1}, slope, seed);
  }
  if (cfg_.in_encoder) {
    const char* names[] = {"8", "16", "32"};
    for (int i = 0; i < 3; ++i) {
      encoder_cgf_.emplace_back(context_channels[i], channels_[i + 1], cfg_.fusion_kernel, slope, reg, seed,
                                prefix + ".encoder_cgf" + names[i]);
    }
  }
  const char* up_names[] = {"32", "16", "8"};
  for (int i = 0; i < 3; ++i) {
    const auto from = channels_[3 - i];
    const auto to = channels_[2 - i];
    if (cfg_.in_decoder) {
      decoder_cgf_.emplace_back(context_channels[2 - i], from, cfg_.fusion_kernel, slope, reg, seed,
                                prefix + ".decoder_cgf" + up_names[i]);
    }
    const std::string name = prefix + ".up" + up_names[i];
    up_[i].deconv = make_conv_transpose3d(reg, name + ".deconv", from, to, 4, 2, 1, false, seed);
    up_[i].bn = make_batch_norm(reg, name + ".bn", to);
    up_[i].conv_a = make_conv_bn_act3d(reg, name + ".conv_a", to, to, {3, 3, 3}, {1, 1, 1}, slope, seed);
    up_[i].conv_b = make_conv_bn_act3d(reg, name + ".conv_b", to, to, {3, 3, 3}, {1, 1, 1}, slope, seed);
  }
  head_ = make_conv3d(reg, prefix + ".head", C, 1, {3, 3, 3}, {1, 1, 1}, true, seed);
}

GeometryPyramid CostAggregation::encode(const CostVolume& v_af, const FeaturePyramid& ctx, NormMode mode) {
  const Tensor& v = v_af.data;
  if (v.rank() != 5 || v.dim(1) != channels_[0]) {
    throw ShapeError("encoder: expected a " + std::to_string(channels_[0]) + "-channel [B,C,D,H,W] volume, got " +
                     shape_str(v.shape()));
  }
  if (v.dim(3) % 8 != 0 || v.dim(4) % 8 != 0) {
    throw ShapeError("encoder: quarter-resolution height and width must be divisible by 8, got " +
                     std::to_string(v.dim(3)) + "x" + std::to_string(v.dim(4)));
  }
  std::array<CostVolume, 4> levels;
  levels[0] = v_af;
  Tensor x = v;
  for (int i = 0; i < 3; ++i) {
    x = down_[i].conv(down_[i].down(x, mode), mode);
    CostVolume level{x, v_af.disparity_stride * (2 << i), kLevels[i + 1]};
    if (cfg_.in_encoder) level = encoder_cgf_[i](level, ctx.level(i + 1), cfg_.detach_context, mode);
    levels[i + 1] = level;
    x = level.data;
  }
  return {levels[0], levels[1], levels[2], levels[3]};
}

CostVolume CostAggregation::decode(const GeometryPyramid& pyr, const FeaturePyramid& ctx, NormMode mode) {
  const std::array<const CostVolume*, 4> skips{&pyr.g4, &pyr.g8, &pyr.g16, &pyr.g32};
  for (int i = 0; i < 4; ++i) {
    if (skips[i]->data.rank() != 5 || skips[i]->data.dim(1) != channels_[i]) {
      throw ShapeError("decoder: pyramid level " + std::to_string(i) + " has shape " +
                       shape_str(skips[i]->data.shape()) + ", expected " + std::to_string(channels_[i]) +
                       " channels");
    }
  }
  CostVolume x = pyr.g32;
  for (int i = 0; i < 3; ++i) {
    if (cfg_.in_decoder) x = decoder_cgf_[i](x, ctx.level(3 - i), cfg_.detach_context, mode);
    const CostVolume& skip = *skips[2 - i];
    Tensor up = leaky_relu(up_[i].bn(crop_to(up_[i].deconv(x.data), skip.data.shape()), mode), slope_);
    Tensor y = add(up, skip.data);
    y = up_[i].conv_b(up_[i].conv_a(y, mode), mode);
    x = {y, skip.disparity_stride, skip.resolution};
  }
  return {head_(x.data), pyr.g4.disparity_stride, Resolution::quarter};
}

}  // namespace cgistereo
