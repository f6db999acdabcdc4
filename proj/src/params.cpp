#include "iscf/params.hpp"

#include "iscf/autodiff.hpp"
#include "iscf/errors.hpp"
#include "iscf/rng.hpp"

namespace iscf {

void ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name)) throw InvalidConfig("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t ParamStore::index_of(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw InvalidConfig("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParamStore::at(std::string_view name) const { return entries_[index_of(name)].value; }

void ParamStore::set_value(std::size_t index, Tensor value) {
  Parameter& p = entries_.at(index);
  if (value.shape() != p.value.shape()) {
    throw ShapeMismatch("parameter '" + p.name + "' expects " + shape_to_string(p.value.shape()) +
                        ", got " + shape_to_string(value.shape()));
  }
  p.value = std::move(value);
}

std::int64_t ParamStore::total_count() const {
  std::int64_t n = 0;
  for (const auto& p : entries_) n += static_cast<std::int64_t>(p.value.numel());
  return n;
}

std::int64_t ParamStore::count_with_prefix(std::string_view prefix) const {
  std::int64_t n = 0;
  for (const auto& p : entries_) {
    if (std::string_view(p.name).substr(0, prefix.size()) == prefix) {
      n += static_cast<std::int64_t>(p.value.numel());
    }
  }
  return n;
}

ParamStore ParamStore::tracked(Tape& tape) const {
  ParamStore out = *this;
  for (auto& p : out.entries_) {
    if (p.trainable) p.value = tape.watch(p.value.detach());
  }
  return out;
}

std::int64_t param_count(const ParamStore& params) { return params.total_count(); }

Tensor trunc_normal(Rng& rng, Shape shape, double stddev) {
  Buffer b(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : b) v = rng.truncated_normal(stddev);
  return Tensor(std::move(shape), std::move(b));
}

}  // namespace iscf
