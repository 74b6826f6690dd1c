#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cgistereo/ops.hpp"

namespace cgistereo {

enum class ParamKind { parameter, buffer };

struct NamedTensor {
  std::string name;
  Tensor tensor;
  ParamKind kind = ParamKind::parameter;
};

/// Ordered set of named model tensors. Registration order fixes checkpoint
/// layout. Each parameter is drawn from its own stream keyed by (seed, name), so
/// the value of a parameter does not depend on which other blocks exist.
class ParamRegistry {
 public:
  /// Uniform in [-b, b] with b = sqrt(1 / fan_in).
  Tensor uniform(const std::string& name, Shape shape, std::int64_t fan_in, std::uint64_t seed);
  Tensor constant(const std::string& name, Shape shape, double value, ParamKind kind = ParamKind::parameter);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<Tensor> parameters() const;
  std::vector<NamedTensor> parameters_with_prefix(const std::string& prefix) const;
  std::int64_t parameter_count() const;
  const NamedTensor* find(const std::string& name) const;

 private:
  Tensor add(const std::string& name, Tensor t, ParamKind kind);
  std::vector<NamedTensor> entries_;
};

/// Deterministic, platform-independent uniform double in [0, 1).
double unit_uniform(std::uint64_t& state);
std::uint64_t mix_seed(std::uint64_t seed, const std::string& salt);
/// Leaf tensor with entries uniform in [lo, hi).
Tensor random_uniform(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

struct Conv2d {
  Tensor weight;
  std::optional<Tensor> bias;
  ConvGeometry geom;
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, geom); }
};

struct Conv3d {
  Tensor weight;
  std::optional<Tensor> bias;
  ConvGeometry geom;
  Tensor operator()(const Tensor& x) const { return conv3d(x, weight, bias, geom); }
};

struct ConvTranspose2d {
  Tensor weight;
  std::optional<Tensor> bias;
  ConvGeometry geom;
  Tensor operator()(const Tensor& x) const { return conv_transpose2d(x, weight, bias, geom); }
};

struct ConvTranspose3d {
  Tensor weight;
  std::optional<Tensor> bias;
  ConvGeometry geom;
  Tensor operator()(const Tensor& x) const { return conv_transpose3d(x, weight, bias, geom); }
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;
  Tensor operator()(const Tensor& x, NormMode mode) { return batch_norm(x, gamma, beta, state, mode); }
};

using Kernel3 = std::array<std::int64_t, 3>;

Conv2d make_conv2d(ParamRegistry& reg, const std::string& name, std::int64_t cin, std::int64_t cout,
                   std::int64_t k, std::int64_t stride, bool bias, std::uint64_t seed,
                   PadMode pad_mode = PadMode::zeros);
/// "same" padding (k-1)/2 on every axis.
Conv3d make_conv3d(ParamRegistry& reg, const std::string& name, std::int64_t cin, std::int64_t cout,
                   Kernel3 k, Kernel3 stride, bool bias, std::uint64_t seed);
ConvTranspose2d make_conv_transpose2d(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                                      std::int64_t cout, std::int64_t k, std::int64_t stride,
                                      std::int64_t padding, bool bias, std::uint64_t seed);
ConvTranspose3d make_conv_transpose3d(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                                      std::int64_t cout, std::int64_t k, std::int64_t stride,
                                      std::int64_t padding, bool bias, std::uint64_t seed);
BatchNorm make_batch_norm(ParamRegistry& reg, const std::string& name, std::int64_t channels);

/// conv (no bias) -> BatchNorm -> leaky ReLU
struct ConvBnAct2d {
  Conv2d conv;
  BatchNorm bn;
  double slope = 0.2;
  Tensor operator()(const Tensor& x, NormMode mode) { return leaky_relu(bn(conv(x), mode), slope); }
};

struct ConvBnAct3d {
  Conv3d conv;
  BatchNorm bn;
  double slope = 0.2;
  Tensor operator()(const Tensor& x, NormMode mode) { return leaky_relu(bn(conv(x), mode), slope); }
};

ConvBnAct2d make_conv_bn_act2d(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                               std::int64_t cout, std::int64_t k, std::int64_t stride, double slope,
                               std::uint64_t seed, PadMode pad_mode = PadMode::zeros);
ConvBnAct3d make_conv_bn_act3d(ParamRegistry& reg, const std::string& name, std::int64_t cin,
                               std::int64_t cout, Kernel3 k, Kernel3 stride, double slope, std::uint64_t seed);

}  // namespace cgistereo
