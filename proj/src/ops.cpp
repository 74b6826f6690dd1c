#include <algorithm>
#include <cmath>

#include "cgistereo/ops.hpp"

namespace cgistereo {

namespace {

// For every flat index of `out`, the flat index into `in` under broadcasting.
std::vector<std::int64_t> broadcast_offsets(const Shape& out, const Shape& in) {
  const std::size_t rank = out.size();
  std::vector<std::int64_t> in_strides(rank, 0);
  std::int64_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  const std::int64_t n = shape_numel(out);
  std::vector<std::int64_t> offsets(static_cast<std::size_t>(n));
  std::vector<std::int64_t> index(rank, 0);
  std::int64_t off = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    offsets[static_cast<std::size_t>(k)] = off;
    for (std::size_t i = rank; i-- > 0;) {
      ++index[i];
      off += in_strides[i];
      if (index[i] < out[i]) break;
      off -= in_strides[i] * out[i];
      index[i] = 0;
    }
  }
  return offsets;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch between " + shape_str(a) + " and " + shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ShapeError(std::string(op) + ": incompatible extents on axis " + std::to_string(i) + " (" +
                       shape_str(a) + " vs " + shape_str(b) + ")");
    }
  }
  return out;
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

struct AxisSplit {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.extent = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* op) {
  const Shape shape = broadcast_shape(a.shape(), b.shape(), op);
  const std::int64_t n = shape_numel(shape);
  const bool same = a.shape() == b.shape();
  std::vector<std::int64_t> ia, ib;
  if (!same) {
    ia = broadcast_offsets(shape, a.shape());
    ib = broadcast_offsets(shape, b.shape());
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    const double x = av[same ? k : ia[k]];
    const double y = bv[same ? k : ib[k]];
    out[k] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
  }
  return make_result(shape, std::move(out), {a, b},
                     [a, b, kind, same, ia = std::move(ia), ib = std::move(ib)](std::span<const double> g) {
                       const auto n = static_cast<std::int64_t>(g.size());
                       if (needs_grad(a)) {
                         auto ga = grad_buffer(a);
                         const auto bv = b.values();
                         for (std::int64_t k = 0; k < n; ++k) {
                           const double d = kind == Binary::mul ? g[k] * bv[same ? k : ib[k]] : g[k];
                           ga[same ? k : ia[k]] += d;
                         }
                       }
                       if (needs_grad(b)) {
                         auto gb = grad_buffer(b);
                         const auto av = a.values();
                         for (std::int64_t k = 0; k < n; ++k) {
                           const double d = kind == Binary::mul ? g[k] * av[same ? k : ia[k]]
                                            : kind == Binary::sub ? -g[k]
                                                                  : g[k];
                           gb[same ? k : ib[k]] += d;
                         }
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a}, [a, factor](std::span<const double> g) {
    auto ga = grad_buffer(a);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += factor * g[k];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.values().size());
  const auto xv = x.values();
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double v = xv[k];
    if (v >= 0) {
      out[k] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[k] = e / (1.0 + e);
    }
  }
  auto values = out;
  return make_result(x.shape(), std::move(out), {x}, [x, s = std::move(values)](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * s[k] * (1.0 - s[k]);
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = xv[k] > 0 ? xv[k] : slope * xv[k];
  if (auto* log = BranchLog::current()) {
    std::uint64_t word = 0;
    for (std::size_t k = 0; k < xv.size(); ++k) {
      word = (word << 1) | (xv[k] > 0 ? 1u : 0u);
      if ((k & 63) == 63) log->note(word), word = 0;
    }
    log->note(word);
  }
  return make_result(x.shape(), std::move(out), {x}, [x, slope](std::span<const double> g) {
    auto gx = grad_buffer(x);
    const auto xv = x.values();
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += xv[k] > 0 ? g[k] : slope * g[k];
  });
}

Tensor expand(const Tensor& x, int axis, std::int64_t count, bool insert) {
  Shape in = x.shape();
  if (insert) {
    axis = axis < 0 ? axis + x.rank() + 1 : axis;
    if (axis < 0 || axis > x.rank()) throw ShapeError("expand: insertion axis out of range");
    in.insert(in.begin() + axis, 1);
  } else {
    axis = normalize_axis(axis, x.rank(), "expand");
  }
  if (in[static_cast<std::size_t>(axis)] != 1) {
    throw ShapeError("expand: axis " + std::to_string(axis) + " of shape " + shape_str(in) +
                     " must have extent 1");
  }
  if (count <= 0) throw ShapeError("expand: count must be positive");
  Shape out_shape = in;
  out_shape[static_cast<std::size_t>(axis)] = count;
  auto offsets = broadcast_offsets(out_shape, in);
  const auto xv = x.values();
  std::vector<double> out(offsets.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = xv[offsets[k]];
  return make_result(out_shape, std::move(out), {x}, [x, offsets = std::move(offsets)](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::size_t k = 0; k < g.size(); ++k) gx[offsets[k]] += g[k];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [x](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rank = parts.front().rank();
  axis = normalize_axis(axis, rank, "concat");
  Shape shape = parts.front().shape();
  shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && p.dim(i) != parts.front().dim(i)) {
        throw ShapeError("concat: extent mismatch on axis " + std::to_string(i) + " (" +
                         shape_str(p.shape()) + " vs " + shape_str(parts.front().shape()) + ")");
      }
    }
    shape[static_cast<std::size_t>(axis)] += p.dim(axis);
  }
  const AxisSplit total = split_at(shape, axis);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t block = p.dim(axis) * total.inner;
    const auto pv = p.values();
    for (std::int64_t o = 0; o < total.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + o * total.extent * total.inner + offset);
    }
    offset += block;
  }
  return make_result(shape, std::move(out), parts, [parts, total, axis](std::span<const double> g) {
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      const std::int64_t block = p.dim(axis) * total.inner;
      if (needs_grad(p)) {
        auto gp = grad_buffer(p);
        for (std::int64_t o = 0; o < total.outer; ++o) {
          const double* src = g.data() + o * total.extent * total.inner + offset;
          double* dst = gp.data() + o * block;
          for (std::int64_t k = 0; k < block; ++k) dst[k] += src[k];
        }
      }
      offset += block;
    }
  });
}

Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.rank(), "narrow");
  if (start < 0 || length <= 0 || start + length > x.dim(axis)) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = length;
  std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)));
  const auto xv = x.values();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.extent + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
  }
  return make_result(shape, std::move(out), {x}, [x, s, start, length](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::int64_t o = 0; o < s.outer; ++o) {
      const double* src = g.data() + o * length * s.inner;
      double* dst = gx.data() + (o * s.extent + start) * s.inner;
      for (std::int64_t k = 0; k < length * s.inner; ++k) dst[k] += src[k];
    }
  });
}

Tensor detach(const Tensor& x) {
  return Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({}, {s}, {x}, [x](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor dot_const(const Tensor& x, std::span<const double> weights) {
  if (static_cast<std::int64_t>(weights.size()) != x.numel()) throw ShapeError("dot_const: size mismatch");
  double s = 0.0;
  const auto xv = x.values();
  for (std::size_t k = 0; k < weights.size(); ++k) s += xv[k] * weights[k];
  std::vector<double> w(weights.begin(), weights.end());
  return make_result({}, {s}, {x}, [x, w = std::move(w)](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::size_t k = 0; k < w.size(); ++k) gx[k] += g[0] * w[k];
  });
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = o * s.extent * s.inner + i;
      double m = xv[base];
      for (std::int64_t k = 1; k < s.extent; ++k) m = std::max(m, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::int64_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - m);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::int64_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
    }
  }
  auto probs = out;
  return make_result(x.shape(), std::move(out), {x}, [x, s, p = std::move(probs)](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const std::int64_t base = o * s.extent * s.inner + i;
        double dotp = 0.0;
        for (std::int64_t k = 0; k < s.extent; ++k) dotp += g[base + k * s.inner] * p[base + k * s.inner];
        for (std::int64_t k = 0; k < s.extent; ++k) {
          const std::int64_t j = base + k * s.inner;
          gx[j] += p[j] * (g[j] - dotp);
        }
      }
    }
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  NormMode mode) {
  if (x.rank() < 2) throw ShapeError("batch_norm: input needs a channel axis, got " + shape_str(x.shape()));
  const std::int64_t channels = x.dim(1);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &state.running_mean, &state.running_var}) {
    if (t->rank() != 1 || t->dim(0) != channels) {
      throw ShapeError("batch_norm: channel axis extent " + std::to_string(channels) +
                       " does not match parameter shape " + shape_str(t->shape()));
    }
  }
  const AxisSplit s = split_at(x.shape(), 1);
  const std::int64_t count = s.outer * s.inner;
  const auto xv = x.values();
  std::vector<double> mean_c(static_cast<std::size_t>(channels)), inv_std(static_cast<std::size_t>(channels));

  if (mode != NormMode::eval) {
    auto rm = state.running_mean.mutable_values();
    auto rv = state.running_var.mutable_values();
    for (std::int64_t c = 0; c < channels; ++c) {
      double m = 0.0;
      for (std::int64_t o = 0; o < s.outer; ++o) {
        const double* p = xv.data() + (o * channels + c) * s.inner;
        for (std::int64_t i = 0; i < s.inner; ++i) m += p[i];
      }
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::int64_t o = 0; o < s.outer; ++o) {
        const double* p = xv.data() + (o * channels + c) * s.inner;
        for (std::int64_t i = 0; i < s.inner; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= static_cast<double>(count);
      mean_c[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + state.epsilon);
      const double unbiased = count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
      if (mode == NormMode::calibrate) {
        rm[c] = m;
        rv[c] = v;
      } else {
        rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * m;
        rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * unbiased;
      }
    }
  } else {
    for (std::int64_t c = 0; c < channels; ++c) {
      mean_c[c] = state.running_mean.values()[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var.values()[c] + state.epsilon);
    }
  }

  std::vector<double> xhat(xv.size());
  std::vector<double> out(xv.size());
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const std::int64_t base = (o * channels + c) * s.inner;
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const double h = (xv[base + i] - mean_c[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = gv[c] * h + bv[c];
      }
    }
  }

  const bool train = mode != NormMode::eval;
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, s, channels, count, train, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](std::span<const double> g) {
        std::vector<double> sum_g(static_cast<std::size_t>(channels), 0.0);
        std::vector<double> sum_gh(static_cast<std::size_t>(channels), 0.0);
        for (std::int64_t o = 0; o < s.outer; ++o) {
          for (std::int64_t c = 0; c < channels; ++c) {
            const std::int64_t base = (o * channels + c) * s.inner;
            for (std::int64_t i = 0; i < s.inner; ++i) {
              sum_g[c] += g[base + i];
              sum_gh[c] += g[base + i] * xhat[base + i];
            }
          }
        }
        if (needs_grad(gamma)) {
          auto gg = grad_buffer(gamma);
          for (std::int64_t c = 0; c < channels; ++c) gg[c] += sum_gh[c];
        }
        if (needs_grad(beta)) {
          auto gb = grad_buffer(beta);
          for (std::int64_t c = 0; c < channels; ++c) gb[c] += sum_g[c];
        }
        if (!needs_grad(x)) return;
        auto gx = grad_buffer(x);
        const auto gv = gamma.values();
        const double n = static_cast<double>(count);
        for (std::int64_t o = 0; o < s.outer; ++o) {
          for (std::int64_t c = 0; c < channels; ++c) {
            const std::int64_t base = (o * channels + c) * s.inner;
            const double k = gv[c] * inv_std[c];
            for (std::int64_t i = 0; i < s.inner; ++i) {
              if (train) {
                gx[base + i] += k * (g[base + i] - sum_g[c] / n - xhat[base + i] * sum_gh[c] / n);
              } else {
                gx[base + i] += k * g[base + i];
              }
            }
          }
        }
      });
}

}  // namespace cgistereo
