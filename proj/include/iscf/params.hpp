#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "iscf/tensor.hpp"

namespace iscf {

class Rng;
class Tape;

struct Parameter {
  std::string name;  // dot-separated path, unique within a store
  Tensor value;
  bool trainable = true;
};

/// Ordered name → parameter store. Insertion order is the canonical order
/// used by checkpoints, optimizers and parameter counts.
class ParamStore {
 public:
  void add(std::string name, Tensor value, bool trainable = true);

  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const std::vector<Parameter>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  void set_value(std::size_t index, Tensor value);

  std::int64_t total_count() const;
  std::int64_t count_with_prefix(std::string_view prefix) const;

  /// Copy whose trainable values are leaves on `tape`.
  ParamStore tracked(Tape& tape) const;

 private:
  std::vector<Parameter> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Exact element count of every parameter in the store.
std::int64_t param_count(const ParamStore& params);

/// Truncated normal (±2σ) initializer used for linear and conv weights.
Tensor trunc_normal(Rng& rng, Shape shape, double stddev = 0.02);

}  // namespace iscf
