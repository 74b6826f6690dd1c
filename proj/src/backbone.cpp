#include "cgistereo/backbone.hpp"

namespace cgistereo {

void BackboneConfig::validate() const {
  if (stem_channels < 1) throw ShapeError("backbone: stem_channels must be >= 1");
  for (auto c : channels) {
    if (c < 1) throw ShapeError("backbone: channel counts must be >= 1");
  }
  if (blocks_per_stage < 1) throw ShapeError("backbone: blocks_per_stage must be >= 1");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ShapeError("backbone: leaky slope must lie in (0,1)");
}

const Tensor& FeaturePyramid::level(int index) const {
  switch (index) {
    case 0: return f4;
    case 1: return f8;
    case 2: return f16;
    case 3: return f32;
    default: throw ShapeError("pyramid level out of range");
  }
}

Backbone::Backbone(const BackboneConfig& cfg, ParamRegistry& reg, const std::string& prefix) : cfg_(cfg) {
  cfg_.validate();
  const auto pad = cfg_.circular_padding ? PadMode::circular : PadMode::zeros;
  const double slope = cfg_.leaky_slope;
  const auto seed = cfg_.seed;
  stem_ = make_conv_bn_act2d(reg, prefix + ".stem", 3, cfg_.stem_channels, 3, 2, slope, seed, pad);
  std::int64_t cin = cfg_.stem_channels;
  for (int s = 0; s < 4; ++s) {
    const std::string name = prefix + ".stage" + std::to_string(s + 1);
    const auto cout = cfg_.channels[static_cast<std::size_t>(s)];
    stages_[s].push_back(make_conv_bn_act2d(reg, name + ".down", cin, cout, 3, 2, slope, seed, pad));
    for (std::int64_t b = 1; b < cfg_.blocks_per_stage; ++b) {
      stages_[s].push_back(
          make_conv_bn_act2d(reg, name + ".res" + std::to_string(b), cout, cout, 3, 1, slope, seed, pad));
    }
    cin = cout;
  }

  const auto& ch = cfg_.channels;
  merge32_ = make_conv_bn_act2d(reg, prefix + ".merge.refine32", ch[3], ch[3], 3, 1, slope, seed, pad);
  const char* scale_names[] = {"16", "8", "4"};
  for (int i = 0; i < 3; ++i) {
    const auto coarse = ch[static_cast<std::size_t>(3 - i)];
    const auto fine = ch[static_cast<std::size_t>(2 - i)];
    const std::string name = prefix + ".merge.up" + scale_names[i];
    up_[i].deconv = make_conv_transpose2d(reg, name + ".deconv", coarse, fine, 4, 2, 1, false, seed);
    up_[i].bn = make_batch_norm(reg, name + ".bn", fine);
    merge_[i] = make_conv_bn_act2d(reg, prefix + ".merge.refine" + scale_names[i], 2 * fine, fine, 3, 1, slope,
                                   seed, pad);
  }
}

FeaturePyramid Backbone::extract(const Tensor& image, NormMode mode) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("backbone: expected image of shape [B,3,H,W], got " + shape_str(image.shape()));
  }
  const auto h = image.dim(2);
  const auto w = image.dim(3);
  if (h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0) {
    throw ShapeError("backbone: image height and width must be multiples of 32 (at least 32), got " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor x = stem_(image, mode);
  std::array<Tensor, 4> levels;
  for (int s = 0; s < 4; ++s) {
    auto& blocks = stages_[s];
    x = blocks.front()(x, mode);
    for (std::size_t b = 1; b < blocks.size(); ++b) x = add(x, blocks[b](x, mode));
    levels[s] = x;
  }
  return {levels[0], levels[1], levels[2], levels[3]};
}

FeaturePyramid Backbone::merge_upsample(const FeaturePyramid& p, NormMode mode) {
  const auto& ch = cfg_.channels;
  for (int i = 0; i < 4; ++i) {
    const Tensor& t = p.level(i);
    if (t.rank() != 4 || t.dim(1) != ch[static_cast<std::size_t>(i)]) {
      throw ShapeError("backbone merge: level " + std::to_string(i) + " has shape " + shape_str(t.shape()) +
                       ", expected " + std::to_string(ch[static_cast<std::size_t>(i)]) + " channels");
    }
  }
  FeaturePyramid out;
  out.f32 = merge32_(p.f32, mode);
  Tensor coarse = out.f32;
  std::array<Tensor*, 3> targets{&out.f16, &out.f8, &out.f4};
  for (int i = 0; i < 3; ++i) {
    const Tensor& skip = p.level(2 - i);
    Tensor up = leaky_relu(up_[i].bn(up_[i].deconv(coarse), mode), cfg_.leaky_slope);
    *targets[i] = merge_[i](concat({up, skip}, 1), mode);
    coarse = *targets[i];
  }
  return out;
}

}  // namespace cgistereo
