#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "iscf/tensor.hpp"

namespace iscf {

/// Receives the upstream gradient of a node's output and accumulates into the
/// per-input buffers. A buffer is empty when that input needs no gradient.
using BackwardFn = std::function<void(const Buffer& grad_out, std::vector<Buffer>& grad_in)>;

class Gradients;

/// Append-only record of operations. Node order is creation order, which is
/// a valid topological order, so backward is a single reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `t` as a leaf and returns a tracked alias of it.
  Tensor watch(const Tensor& t);

  NodeId record(std::string_view op, const Shape& shape, std::vector<NodeId> inputs,
                std::vector<std::size_t> input_sizes, BackwardFn fn);

  Gradients backward(const Tensor& loss) const;

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(NodeId id) const { return nodes_.at(id).op; }

  /// Test hook: perturbs every backward rule of the named op by a factor so
  /// the gradient checker can prove it detects a broken rule.
  static void set_corrupted_op(std::string op);
  static const std::string& corrupted_op();

 private:
  struct Node {
    std::string op;
    Shape shape;
    std::vector<NodeId> inputs;
    std::vector<std::size_t> input_sizes;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

/// Gradient slots produced by Tape::backward, keyed by node id.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::vector<Buffer> slots, std::vector<Shape> shapes);

  bool has(const Tensor& t) const;
  /// Gradient for a tracked tensor; zeros when the loss does not depend on it.
  Tensor of(const Tensor& t) const;

 private:
  const Tape* tape_ = nullptr;
  std::vector<Buffer> slots_;
  std::vector<Shape> shapes_;
};

/// Installs a tape as the thread's active tape for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Tape currently recording on this thread, or nullptr.
Tape* active_tape();

/// Shorthand for active_tape()->watch(t); throws DetachedFromTape without one.
Tensor track(const Tensor& t);

/// Runs reverse accumulation from a scalar loss on its own tape.
Gradients backward(const Tensor& loss);

/// Helper for op implementations: wraps `value` as a tape node when a tape is
/// active and any input is tracked on it; otherwise returns it untracked.
Tensor make_result(std::string_view op, Tensor value, std::initializer_list<const Tensor*> inputs,
                   BackwardFn fn);
Tensor make_result(std::string_view op, Tensor value, const std::vector<const Tensor*>& inputs,
                   BackwardFn fn);

}  // namespace iscf
