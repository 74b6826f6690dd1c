#pragma once

#include <functional>

#include "cgistereo/tensor.hpp"

namespace cgistereo {

struct GradCheckOptions {
  double step = 1e-3;
  // Coordinates checked per tensor; <= 0 checks all of them, otherwise a
  // seeded random subset.
  std::int64_t max_coords = 0;
  std::uint64_t seed = 7;
  // Skip coordinates whose +/- step evaluations cross a recorded kink
  // (activation sign flip, change in a top-k selection).
  bool skip_kinks = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;
};

/// Relative discrepancy with denominator max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

/// Compares the backward-pass gradient of the scalar program `f` with central
/// finite differences (f(x+h) - f(x-h)) / 2h for every coordinate of every
/// tensor in `wrt`. `f` must read the tensors in `wrt` by handle so in-place
/// perturbation is visible to it.
GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                           const GradCheckOptions& options = {});

inline GradCheckResult grad_check(const std::function<Tensor()>& f, const Tensor& x,
                                  const GradCheckOptions& options = {}) {
  return grad_check(f, std::vector<Tensor>{x}, options);
}

}  // namespace cgistereo
