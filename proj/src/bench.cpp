#include "iscf/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "iscf/attention.hpp"
#include "iscf/errors.hpp"
#include "iscf/rng.hpp"

namespace iscf {

double associativity_check(const std::vector<std::int64_t>& n_list, std::int64_t d, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::int64_t n : n_list) {
    const Tensor q = rng.normal_tensor({n, d}), k = rng.normal_tensor({n, d}), v = rng.normal_tensor({n, d});
    const Tensor fast = efficient_attention(q, k, v).out;
    const Tensor slow = explicit_context_attention(q, k, v);
    double scale = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < slow.numel(); ++i) {
      scale = std::max(scale, std::abs(slow[i]));
      diff = std::max(diff, std::abs(fast[i] - slow[i]));
    }
    worst = std::max(worst, diff / std::max(scale, 1e-300));
  }
  return worst;
}

std::vector<BenchRow> bench_attention(const BenchOptions& options) {
  if (options.d <= 0 || options.repeats < 1) throw InvalidConfig("bench: d and repeats must be positive");
  for (const auto& v : options.variants) {
    if (v != "efficient" && v != "standard") throw InvalidConfig("bench: unknown variant '" + v + "'");
  }
  Rng rng(options.seed);
  std::vector<BenchRow> rows;
  for (std::int64_t n : options.n_list) {
    if (n <= 0) throw InvalidConfig("bench: n must be positive");
    const Tensor q = rng.normal_tensor({n, options.d}), k = rng.normal_tensor({n, options.d});
    const Tensor v = rng.normal_tensor({n, options.d});
    const double scale = 1.0 / std::sqrt(static_cast<double>(options.d));
    for (const auto& variant : options.variants) {
      BenchRow row{n, options.d, variant, INT64_MAX, 0, 0};
      for (int r = 0; r < options.repeats; ++r) {
        reset_allocation_stats();
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor out = variant == "efficient" ? efficient_attention(q, k, v).out : standard_attention(q, k, v, scale);
        const auto t1 = std::chrono::steady_clock::now();
        const AllocationStats s = allocation_stats();
        row.wall_ns = std::min<std::int64_t>(row.wall_ns, std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
        row.bytes_allocated = static_cast<std::int64_t>(s.total_bytes);
        row.largest_allocation = static_cast<std::int64_t>(s.largest_bytes);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

double loglog_slope(const std::vector<BenchRow>& rows, const std::string& variant) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) {
    if (r.variant == variant) pts.emplace_back(std::log(static_cast<double>(r.n)), std::log(static_cast<double>(r.wall_ns)));
  }
  if (pts.size() < 2) throw InvalidConfig("slope fit needs at least two sizes for '" + variant + "'");
  double mx = 0, my = 0;
  for (auto [x, y] : pts) mx += x, my += y;
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxy = 0, sxx = 0;
  for (auto [x, y] : pts) sxy += (x - mx) * (y - my), sxx += (x - mx) * (x - mx);
  return sxy / sxx;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "n,d,variant,wall_ns,bytes_allocated\n";
  for (const auto& r : rows) os << r.n << ',' << r.d << ',' << r.variant << ',' << r.wall_ns << ',' << r.bytes_allocated << '\n';
  return os.str();
}

}  // namespace iscf
