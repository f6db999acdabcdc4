#include "iscf/autodiff.hpp"

#include "iscf/errors.hpp"

namespace iscf {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string& corrupted_op_slot() {
  static std::string op;
  return op;
}

constexpr double kCorruptionFactor = 1.25;

}  // namespace

void Tape::set_corrupted_op(std::string op) { corrupted_op_slot() = std::move(op); }
const std::string& Tape::corrupted_op() { return corrupted_op_slot(); }

Tensor Tape::watch(const Tensor& t) {
  Node n;
  n.op = "leaf";
  n.shape = t.shape();
  nodes_.push_back(std::move(n));
  return t.with_node(this, static_cast<NodeId>(nodes_.size() - 1));
}

NodeId Tape::record(std::string_view op, const Shape& shape, std::vector<NodeId> inputs,
                    std::vector<std::size_t> input_sizes, BackwardFn fn) {
  Node n;
  n.op = std::string(op);
  n.shape = shape;
  n.inputs = std::move(inputs);
  n.input_sizes = std::move(input_sizes);
  n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.numel() != 1) {
    throw NotScalar("backward needs a single-element loss, got shape " + shape_to_string(loss.shape()));
  }
  if (!loss.tracked() || loss.tape() != this) {
    throw DetachedFromTape("loss does not participate in this tape");
  }
  std::vector<Buffer> slots(nodes_.size());
  slots[loss.node()] = Buffer{1.0};

  const std::string& corrupted = corrupted_op();
  for (NodeId id = loss.node(); id >= 0; --id) {
    const Node& node = nodes_[id];
    if (slots[id].empty() || !node.backward) continue;

    std::vector<Buffer> grad_in(node.inputs.size());
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (node.inputs[i] != kNoNode) grad_in[i].assign(node.input_sizes[i], 0.0);
    }
    node.backward(slots[id], grad_in);
    if (!corrupted.empty() && node.op == corrupted) {
      for (auto& g : grad_in) {
        for (auto& v : g) v *= kCorruptionFactor;
      }
    }
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const NodeId in = node.inputs[i];
      if (in == kNoNode) continue;
      Buffer& slot = slots[in];
      if (slot.empty()) {
        slot = std::move(grad_in[i]);
      } else {
        for (std::size_t j = 0; j < slot.size(); ++j) slot[j] += grad_in[i][j];
      }
    }
    // Interior slots are no longer needed once propagated; leaves keep theirs.
    if (node.op != "leaf" && id != loss.node()) slots[id] = Buffer{};
  }

  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const auto& n : nodes_) shapes.push_back(n.shape);
  return Gradients(this, std::move(slots), std::move(shapes));
}

Gradients::Gradients(const Tape* tape, std::vector<Buffer> slots, std::vector<Shape> shapes)
    : tape_(tape), slots_(std::move(slots)), shapes_(std::move(shapes)) {}

bool Gradients::has(const Tensor& t) const {
  return t.tracked() && t.tape() == tape_ && !slots_[t.node()].empty();
}

Tensor Gradients::of(const Tensor& t) const {
  if (!t.tracked() || t.tape() != tape_) {
    throw DetachedFromTape("gradient requested for a tensor not on this tape");
  }
  const Buffer& slot = slots_[t.node()];
  if (slot.empty()) return Tensor::zeros(shapes_[t.node()]);
  return Tensor(shapes_[t.node()], slot);
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

Tensor track(const Tensor& t) {
  if (!g_active_tape) throw DetachedFromTape("track() called with no active tape");
  return g_active_tape->watch(t);
}

Gradients backward(const Tensor& loss) {
  if (!loss.tracked() || !loss.tape()) {
    throw DetachedFromTape("loss does not participate in any tape");
  }
  return loss.tape()->backward(loss);
}

Tensor make_result(std::string_view op, Tensor value, const std::vector<const Tensor*>& inputs,
                   BackwardFn fn) {
  Tape* tape = g_active_tape;
  if (!tape) return value;
  bool any = false;
  std::vector<NodeId> ids;
  std::vector<std::size_t> sizes;
  ids.reserve(inputs.size());
  sizes.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    const bool on_tape = in && in->tracked() && in->tape() == tape;
    if (in && in->tracked() && in->tape() != tape) {
      throw DetachedFromTape(std::string(op) + ": input is tracked on a different tape");
    }
    ids.push_back(on_tape ? in->node() : kNoNode);
    sizes.push_back(in ? in->numel() : 0);
    any = any || on_tape;
  }
  if (!any) return value;
  const NodeId id = tape->record(op, value.shape(), std::move(ids), std::move(sizes), std::move(fn));
  return value.with_node(tape, id);
}

Tensor make_result(std::string_view op, Tensor value, std::initializer_list<const Tensor*> inputs,
                   BackwardFn fn) {
  return make_result(op, std::move(value), std::vector<const Tensor*>(inputs), std::move(fn));
}

}  // namespace iscf
