#include "iscf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <sstream>

#include "iscf/errors.hpp"

namespace iscf {

namespace {

struct Counters {
  std::atomic<std::size_t> allocations{0};
  std::atomic<std::size_t> total_bytes{0};
  std::atomic<std::size_t> largest_bytes{0};
  std::atomic<std::size_t> live_bytes{0};
  std::atomic<std::size_t> peak_live_bytes{0};
};

Counters& counters() {
  static Counters c;
  return c;
}

void atomic_max(std::atomic<std::size_t>& slot, std::size_t value) {
  std::size_t prev = slot.load(std::memory_order_relaxed);
  while (prev < value &&
         !slot.compare_exchange_weak(prev, value, std::memory_order_relaxed)) {
  }
}

}  // namespace

namespace detail {

void note_allocation(std::size_t bytes) {
  auto& c = counters();
  c.allocations.fetch_add(1, std::memory_order_relaxed);
  c.total_bytes.fetch_add(bytes, std::memory_order_relaxed);
  atomic_max(c.largest_bytes, bytes);
  const std::size_t live = c.live_bytes.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  atomic_max(c.peak_live_bytes, live);
}

void note_deallocation(std::size_t bytes) {
  counters().live_bytes.fetch_sub(bytes, std::memory_order_relaxed);
}

}  // namespace detail

AllocationStats allocation_stats() {
  auto& c = counters();
  AllocationStats s;
  s.allocations = c.allocations.load();
  s.total_bytes = c.total_bytes.load();
  s.largest_bytes = c.largest_bytes.load();
  s.live_bytes = c.live_bytes.load();
  s.peak_live_bytes = c.peak_live_bytes.load();
  return s;
}

void reset_allocation_stats() {
  auto& c = counters();
  c.allocations = 0;
  c.total_bytes = 0;
  c.largest_bytes = 0;
  c.peak_live_bytes = c.live_bytes.load();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw AxisError("axis " + std::to_string(axis) + " out of range for rank " +
                    std::to_string(rank));
  }
  return a;
}

Tensor::Tensor() : data_(std::make_shared<const Buffer>()) {}

Tensor::Tensor(Shape shape, Buffer data) : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e <= 0) throw ShapeMismatch("tensor extents must be positive, got " + shape_to_string(shape_));
  }
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape_)) {
    throw CountMismatch("shape " + shape_to_string(shape_) + " needs " +
                        std::to_string(shape_numel(shape_)) + " values, got " +
                        std::to_string(data.size()));
  }
  data_ = std::make_shared<const Buffer>(std::move(data));
}

Tensor::Tensor(Shape shape, const std::vector<double>& data)
    : Tensor(std::move(shape), Buffer(data.begin(), data.end())) {}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor(std::move(shape), Buffer(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, Buffer{value}); }

std::int64_t Tensor::dim(int axis) const { return shape_[normalize_axis(axis, rank())]; }

std::span<const double> Tensor::data() const {
  return data_ ? std::span<const double>(data_->data(), data_->size()) : std::span<const double>{};
}

double Tensor::item() const {
  if (numel() != 1) throw NotScalar("item() on tensor of shape " + shape_to_string(shape_));
  return (*data_)[0];
}

std::vector<double> Tensor::to_vector() const { return {data_->begin(), data_->end()}; }

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = kNoNode;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  for (auto e : shape) {
    if (e <= 0) throw ShapeMismatch("tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(numel())) {
    throw CountMismatch("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

Tensor Tensor::with_node(Tape* tape, NodeId node) const {
  Tensor t = *this;
  t.tape_ = tape;
  t.node_ = node;
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.raw(), b.raw(), a.numel() * sizeof(double)) == 0;
}

}  // namespace iscf
