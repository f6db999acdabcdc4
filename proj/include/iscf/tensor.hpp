#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace iscf {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Counters fed by every tensor buffer allocation. Used by the attention
/// benchmark and by tests that bound auxiliary memory.
struct AllocationStats {
  std::size_t allocations = 0;
  std::size_t total_bytes = 0;
  std::size_t largest_bytes = 0;
  std::size_t live_bytes = 0;
  std::size_t peak_live_bytes = 0;
};

AllocationStats allocation_stats();
void reset_allocation_stats();

namespace detail {
void note_allocation(std::size_t bytes);
void note_deallocation(std::size_t bytes);
}  // namespace detail

template <typename T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    detail::note_allocation(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    detail::note_deallocation(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, CountingAllocator<double>>;

class Tape;
using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

/// Dense row-major tensor of 64-bit values. The payload is shared and never
/// mutated after construction, so copies are cheap and thread-safe to read.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Buffer data);
  Tensor(Shape shape, const std::vector<double>& data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  /// Extent along `axis`; negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool empty() const { return numel() == 0; }

  std::span<const double> data() const;
  const double* raw() const { return data_ ? data_->data() : nullptr; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;
  std::vector<double> to_vector() const;

  /// Tape bookkeeping. A tensor is tracked when it was produced on a tape.
  NodeId node() const { return node_; }
  Tape* tape() const { return tape_; }
  bool tracked() const { return node_ != kNoNode; }
  Tensor detach() const;
  /// Same payload viewed with a different shape of equal element count.
  Tensor reshaped(Shape shape) const;
  Tensor with_node(Tape* tape, NodeId node) const;

 private:
  Shape shape_;
  std::shared_ptr<const Buffer> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

/// Resolves a possibly-negative axis against `rank`; throws AxisError.
int normalize_axis(int axis, int rank);

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace iscf
