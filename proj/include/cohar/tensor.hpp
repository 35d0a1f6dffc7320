#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cohar/error.hpp"

namespace cohar {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class Tape;

namespace detail {

struct Storage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until attached to a tape
};

}  // namespace detail

/// Shape-tagged array of doubles, row-major. Copies of a Tensor share the same
/// storage; use clone() for a deep copy. A tensor returned by Tape::watch or by
/// an operation on watched inputs additionally carries a node on that tape.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : s_(std::make_shared<detail::Storage>()) {
    check_shape(shape);
    s_->data.assign(numel(shape), fill);
    s_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> data) : s_(std::make_shared<detail::Storage>()) {
    check_shape(shape);
    if (data.size() != numel(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(data);
  }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t size() const { return s_->data.size(); }

  std::span<double> data() { return s_->data; }
  std::span<const double> data() const { return s_->data; }
  double operator[](std::size_t i) const { return s_->data[i]; }
  double& operator[](std::size_t i) { return s_->data[i]; }

  /// Value of a one-element tensor.
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return s_->data[0];
  }

  bool has_grad() const { return defined() && !s_->grad.empty(); }
  std::span<double> grad() { return s_->grad; }
  std::span<const double> grad() const { return s_->grad; }
  void zero_grad() { s_->grad.assign(s_->data.size(), 0.0); }

  Tape* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }

  /// Same storage, no tape attachment.
  Tensor detached() const {
    Tensor t;
    t.s_ = s_;
    return t;
  }

  Tensor clone() const {
    Tensor t(shape(), std::vector<double>(s_->data));
    return t;
  }

  bool same_storage(const Tensor& other) const noexcept { return s_ == other.s_; }

 private:
  static void check_shape(const Shape& shape) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    }
  }

  std::shared_ptr<detail::Storage> s_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;

  friend class Tape;
};

/// Linear record of executed operations. Nodes are numbered in creation
/// order, and every record's inputs precede its output, so the records are
/// topologically sorted by construction and backward() is one reverse sweep.
///
/// Tensors attached to a tape must not be used in new operations after the
/// tape is destroyed.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::string_view op;
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `leaf` as a differentiable input and zeroes its gradient. The
  /// returned handle shares storage, so gradients are readable from `leaf`.
  Tensor watch(const Tensor& leaf) {
    if (!leaf.defined()) throw ContractError("watch() on undefined tensor");
    auto it = leaf_ids_.find(leaf.s_.get());
    Tensor t = leaf.detached();
    t.tape_ = this;
    if (it != leaf_ids_.end()) {
      t.node_ = it->second;
      return t;
    }
    t.s_->grad.assign(t.s_->data.size(), 0.0);
    t.node_ = nodes_.size();
    nodes_.push_back(t.s_);
    leaf_ids_.emplace(t.s_.get(), t.node_);
    return t;
  }

  bool tracks(const Tensor& t) const noexcept { return t.defined() && t.tape_ == this; }

  /// Attaches `out` as the product of `op` applied to `inputs` (only those
  /// tracked by this tape become graph edges). `backward` reads out's gradient
  /// and accumulates into the tracked inputs' gradients.
  Tensor record(std::string_view op, Tensor out, std::initializer_list<const Tensor*> inputs,
                BackwardFn backward) {
    return record_many(op, std::move(out), std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                       std::move(backward));
  }

  Tensor record_many(std::string_view op, Tensor out, std::span<const Tensor* const> inputs,
                     BackwardFn backward) {
    Record r{op, {}, 0, std::move(backward)};
    for (const Tensor* in : inputs) {
      if (tracks(*in)) r.inputs.push_back(in->node_);
    }
    out.s_->grad.assign(out.s_->data.size(), 0.0);
    out.tape_ = this;
    out.node_ = nodes_.size();
    r.output = out.node_;
    nodes_.push_back(out.s_);
    records_.push_back(std::move(r));
    return out;
  }

  /// Reverse sweep from a scalar loss. Records whose output is unreachable
  /// from the loss are skipped; leaves they feed keep a zero gradient.
  void backward(const Tensor& loss) {
    if (!tracks(loss)) throw ContractError("backward(): loss is not on this tape");
    if (loss.size() != 1) {
      throw ContractError("backward(): loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    std::vector<char> reachable(nodes_.size(), 0);
    reachable[loss.node_] = 1;
    nodes_[loss.node_]->grad[0] = 1.0;
    for (auto r = records_.rbegin(); r != records_.rend(); ++r) {
      if (!reachable[r->output]) continue;
      r->backward();
      if (std::find(corrupted_.begin(), corrupted_.end(), r->op) != corrupted_.end()) r->backward();
      for (auto in : r->inputs) reachable[in] = 1;
    }
  }

  const std::vector<Record>& records() const noexcept { return records_; }
  std::size_t num_nodes() const noexcept { return nodes_.size(); }

  /// Test hook: every backward rule of `op` runs twice, doubling its gradient
  /// contributions. Used to prove the gradient checker catches a bad rule.
  void corrupt(std::string op) { corrupted_.push_back(std::move(op)); }

 private:
  std::vector<std::shared_ptr<detail::Storage>> nodes_;
  std::vector<Record> records_;
  std::unordered_map<const detail::Storage*, std::size_t> leaf_ids_;
  std::vector<std::string> corrupted_;
};

/// The tape shared by the tracked inputs of an operation, or nullptr.
inline Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->defined() || t->tape() == nullptr) continue;
    if (tape && tape != t->tape()) throw ContractError("operation mixes tensors from different tapes");
    tape = t->tape();
  }
  return tape;
}

}  // namespace cohar
