#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "stsam/tensor.hpp"

namespace stsam {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords = 0;
  bool finite = true;  // false when f produced a non-finite value
};

/// Central-difference probe of already-populated analytic gradients.
///
/// `f` re-evaluates the scalar objective from the current parameter values
/// (the parameters are captured by the closure); it must not depend on any
/// state this function cannot restore.  For each parameter tensor,
/// `coords_per_tensor` coordinates are sampled and the analytic gradient
/// entry is compared against (f(x+h) - f(x-h)) / 2h with denominator
/// max(|analytic|, |numeric|, 1e-12).
GradCheckReport finite_diff_check(const std::function<double()>& f,
                                  std::span<Tensor* const> params, double step,
                                  std::size_t coords_per_tensor,
                                  std::uint64_t seed);

}  // namespace stsam
