#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace iscf {

struct BenchRow {
  std::int64_t n = 0;
  std::int64_t d = 0;
  std::string variant;  // "efficient" or "standard"
  std::int64_t wall_ns = 0;           // best of the repeats
  std::int64_t bytes_allocated = 0;   // total over one call
  std::int64_t largest_allocation = 0;
};

struct BenchOptions {
  std::vector<std::int64_t> n_list = {256, 512, 1024, 2048, 4096};
  std::int64_t d = 64;
  std::vector<std::string> variants = {"efficient", "standard"};
  int repeats = 3;
  std::uint64_t seed = 0;
};

/// Worst relative error between the efficient path and the explicit n×n
/// context path, one random case per n.
double associativity_check(const std::vector<std::int64_t>& n_list, std::int64_t d, std::uint64_t seed);

std::vector<BenchRow> bench_attention(const BenchOptions& options);

/// Least-squares slope of log(wall_ns) against log(n) for one variant.
double loglog_slope(const std::vector<BenchRow>& rows, const std::string& variant);

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace iscf
