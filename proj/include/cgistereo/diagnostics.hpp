#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cgistereo/grad_check.hpp"

namespace cgistereo {

inline constexpr double kGradCheckTolerance = 1e-4;

struct BlockCheck {
  std::string name;
  GradCheckResult result;
  double seconds = 0.0;

  bool passed() const { return result.checked > 0 && result.max_rel_error <= kGradCheckTolerance; }
};

/// Finite-difference checks of every primitive and every pipeline block on small
/// random shapes, ending with the full model on a 1x3x32x64 input with 16
/// candidate disparities at full resolution.
std::vector<BlockCheck> run_gradcheck_suite(std::uint64_t seed, double step = 1e-3,
                                            const std::function<void(const BlockCheck&)>& on_block = {});

}  // namespace cgistereo
