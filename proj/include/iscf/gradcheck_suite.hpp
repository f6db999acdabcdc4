#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace iscf {

struct GradTarget {
  std::string scope;
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  std::size_t probes = 0;
  bool passed() const { return max_rel_error < threshold; }
};

/// "primitives", "blocks", "iscf", "model".
const std::vector<std::string>& gradcheck_scopes();
/// 1e-4 for primitives, blocks and iscf; 1e-3 for the end-to-end model.
double gradcheck_threshold(const std::string& scope);

/// Finite-difference checks of every differentiable piece in a scope, with
/// fixed seeds. Throws InvalidConfig for an unknown scope.
std::vector<GradTarget> run_gradcheck(const std::string& scope);

}  // namespace iscf
