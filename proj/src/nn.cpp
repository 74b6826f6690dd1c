#include "cgistereo/nn.hpp"

#include <cmath>

namespace cgistereo {

std::uint64_t mix_seed(std::uint64_t seed, const std::string& salt) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9e3779b97f4a7c15ULL);
  for (unsigned char c : salt) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double unit_uniform(std::uint64_t& state) {
  // splitmix64
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

Tensor random_uniform(Shape shape, std::uint64_t seed, double lo, double hi) {
  std::uint64_t state = mix_seed(seed, "random_uniform");
  std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = lo + (hi - lo) * unit_uniform(state);
  return Tensor::from(std::move(shape), std::move(values));
}

Tensor ParamRegistry::add(const std::string& name, Tensor t, ParamKind kind) {
  if (find(name) != nullptr) throw std::logic_error("duplicate parameter name: " + name);
  if (kind == ParamKind::parameter) t.set_requires_grad(true);
  entries_.push_back({name, t, kind});
  return t;
}

Tensor ParamRegistry::uniform(const std::string& name, Shape shape, std::int64_t fan_in, std::uint64_t seed) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uint64_t state = mix_seed(seed, name);
  std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = (2.0 * unit_uniform(state) - 1.0) * bound;
  return add(name, Tensor::from(std::move(shape), std::move(values)), ParamKind::parameter);
}

Tensor ParamRegistry::constant(const std::string& name, Shape shape, double value, ParamKind kind) {
  return add(name, Tensor::full(std::move(shape), value), kind);
}

std::vector<Tensor> ParamRegistry::parameters() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) {
    if (e.kind == ParamKind::parameter) out.push_back(e.tensor);
  }
  return out;
}

std::vector<NamedTensor> ParamRegistry::parameters_with_prefix(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (const auto& e : entries_) {
    if (e.kind == ParamKind::parameter && e.name.rfind(prefix, 0) == 0) out.push_back(e);
  }
  return out;
}

std::int64_t ParamRegistry::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) {
    if (e.kind == ParamKind::parameter) n += e.tensor.numel();
  }
  return n;
}

const NamedTensor* ParamRegistry::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

Conv2d make_conv2d(ParamRegistry& reg, const std::string& name, std::int64_t cin, std::int64_t cout,
                   std::int64_t k, std::int64_t stride, bool bias, std::uint64_t seed, PadMode pad_mode) {
  Conv2d c;
  const std::int64_t fan_in = cin * k * k;
  c.weight = reg.uniform(name + ".weight", {cout, cin, k, k}, fan_in, seed);
  if (bias) c.bias = reg.uniform(name + ".bias", {cout}, fan_in, seed);
  c.geom = ConvGeometry::uniform(stride, (k - 1) / 2);
  c.geom.pad_mode = pad_mode;
  return c;
}

Conv3d make_conv3d(ParamRegistry& reg, const std::string& name, std::int64_t cin, std::int64_t cout, Kernel3 k,
                   Kernel3 stride, bool bias, std::uint64_t seed) {
  Conv3d c;
  const std::int64_t fan_in = cin * k[0] * k[1] * k[2];
  c.weight = reg.uniform(name + ".weight", {cout, cin, k[0], k[1], k[2]}, fan_in, seed);
  if (bias) c.bias = reg.uniform(name + ".bias", {cout}, fan_in, seed);
  c.geom.stride = stride;
  c.geom.padding = {(k[0] - 1) / 2, (k[1] - 1) / 2, (k[2] - 1) / 2};
  return c;
}

ConvTranspose2d make_conv_transpose2d(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                                      std::int64_t cout, std::int64_t k, std::int64_t stride,
                                      std::int64_t padding, bool bias, std::uint64_t seed) {
  ConvTranspose2d c;
  // Each output receives about cin * (k / stride)^2 contributions.
  const std::int64_t fan_in = std::max<std::int64_t>(1, cin * (k / stride) * (k / stride));
  c.weight = reg.uniform(name + ".weight", {cin, cout, k, k}, fan_in, seed);
  if (bias) c.bias = reg.uniform(name + ".bias", {cout}, fan_in, seed);
  c.geom = ConvGeometry::uniform(stride, padding);
  return c;
}

ConvTranspose3d make_conv_transpose3d(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                                      std::int64_t cout, std::int64_t k, std::int64_t stride,
                                      std::int64_t padding, bool bias, std::uint64_t seed) {
  ConvTranspose3d c;
  const std::int64_t per_axis = k / stride;
  const std::int64_t fan_in = std::max<std::int64_t>(1, cin * per_axis * per_axis * per_axis);
  c.weight = reg.uniform(name + ".weight", {cin, cout, k, k, k}, fan_in, seed);
  if (bias) c.bias = reg.uniform(name + ".bias", {cout}, fan_in, seed);
  c.geom = ConvGeometry::uniform(stride, padding);
  return c;
}

BatchNorm make_batch_norm(ParamRegistry& reg, const std::string& name, std::int64_t channels) {
  BatchNorm bn;
  bn.gamma = reg.constant(name + ".gamma", {channels}, 1.0);
  bn.beta = reg.constant(name + ".beta", {channels}, 0.0);
  bn.state.running_mean = reg.constant(name + ".running_mean", {channels}, 0.0, ParamKind::buffer);
  bn.state.running_var = reg.constant(name + ".running_var", {channels}, 1.0, ParamKind::buffer);
  return bn;
}

ConvBnAct2d make_conv_bn_act2d(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                               std::int64_t cout, std::int64_t k, std::int64_t stride, double slope,
                               std::uint64_t seed, PadMode pad_mode) {
  ConvBnAct2d b;
  b.conv = make_conv2d(reg, name + ".conv", cin, cout, k, stride, false, seed, pad_mode);
  b.bn = make_batch_norm(reg, name + ".bn", cout);
  b.slope = slope;
  return b;
}

ConvBnAct3d make_conv_bn_act3d(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                               std::int64_t cout, Kernel3 k, Kernel3 stride, double slope, std::uint64_t seed) {
  ConvBnAct3d b;
  b.conv = make_conv3d(reg, name + ".conv", cin, cout, k, stride, false, seed);
  b.bn = make_batch_norm(reg, name + ".bn", cout);
  b.slope = slope;
  return b;
}

}  // namespace cgistereo
