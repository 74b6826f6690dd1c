#include "cgistereo/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cgistereo {

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const std::function<Tensor()>& f) {
  NoGradGuard no_grad;
  BranchLog log;
  const double v = f().item();
  return {v, log.signature()};
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                           const GradCheckOptions& options) {
  std::vector<bool> previous;
  for (Tensor t : wrt) {
    previous.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::uint64_t base_signature = 0;
  {
    Tape tape;
    BranchLog log;
    Tensor loss = f();
    base_signature = log.signature();
    if (loss.requires_grad()) tape.backward(loss);
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (Tensor t : wrt) {
    const std::vector<double> analytic = t.grad();
    std::vector<std::int64_t> coords(static_cast<std::size_t>(t.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords > 0 && t.numel() > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.max_coords));
      std::sort(coords.begin(), coords.end());
    }
    auto values = t.mutable_values();
    for (auto i : coords) {
      const double original = values[i];
      values[i] = original + options.step;
      const Evaluation plus = evaluate(f);
      values[i] = original - options.step;
      const Evaluation minus = evaluate(f);
      values[i] = original;
      if (options.skip_kinks && (plus.signature != base_signature || minus.signature != base_signature)) {
        ++result.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
      ++result.checked;
    }
  }

  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor t = wrt[k];
    t.set_requires_grad(previous[k]);
    t.zero_grad();
  }
  return result;
}

}  // namespace cgistereo
