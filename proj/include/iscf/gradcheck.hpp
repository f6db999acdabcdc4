#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "iscf/tensor.hpp"

namespace iscf {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates probed per input; 0 probes all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t input = 0;
  std::size_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t probes = 0;
};

/// Compares tape gradients of a scalar function against central differences
/// (f(x+εe) − f(x−εe)) / 2ε. The relative error of a coordinate is
/// |a − n| / max(|a|, |n|, 1e-8); the worst coordinate is reported.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace iscf
