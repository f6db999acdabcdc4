#include "iscf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iscf/autodiff.hpp"
#include "iscf/rng.hpp"

namespace iscf {

namespace {

std::vector<std::size_t> pick_coords(std::size_t numel, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> all(numel);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (max_coords == 0 || numel <= max_coords) return all;
  rng.shuffle(all);
  all.resize(max_coords);
  std::sort(all.begin(), all.end());
  return all;
}

Tensor perturbed(const Tensor& t, std::size_t coord, double delta) {
  Buffer b(t.data().begin(), t.data().end());
  b[coord] += delta;
  return Tensor(t.shape(), std::move(b));
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> watched;
    watched.reserve(inputs.size());
    for (const auto& in : inputs) watched.push_back(tape.watch(in.detach()));
    const Tensor loss = f(watched);
    const Gradients grads = tape.backward(loss);
    for (const auto& w : watched) analytic.push_back(grads.of(w));
  }

  std::vector<Tensor> base;
  base.reserve(inputs.size());
  for (const auto& in : inputs) base.push_back(in.detach());

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const Tensor original = base[i];
    for (std::size_t c : pick_coords(original.numel(), options.max_coords, rng)) {
      base[i] = perturbed(original, c, options.eps);
      const double plus = f(base).item();
      base[i] = perturbed(original, c, -options.eps);
      const double minus = f(base).item();
      base[i] = original;

      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = analytic[i][c];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++result.probes;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        result.input = i;
        result.coord = c;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace iscf
