// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emofuse/tensor.hpp"

namespace emofuse::ad {

/// A named trainable tensor. `grad` accumulates across backward passes until
/// zeroGrad() is called.
struct Parameter {
  std::string name;
  std::string group;
  Tensor value;
  Tensor grad;
  bool requiresGrad = true;

  Parameter() = default;
  Parameter(std::string name, std::string group, Tensor value);
  void zeroGrad();
};

class Tape;

/// Handle to one node on a tape. Cheap to copy; only valid while its tape
/// lives and has not been cleared.
class Var {
public:
  Var() = default;
  Var(Tape *tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape *tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor &value() const;
  const Shape &shape() const;
  bool requiresGrad() const;

private:
  Tape *tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// What a backward rule sees. `inputGrads[i]` is null when input i does not
/// require a gradient; otherwise rules add (never assign) into it.
struct BackwardContext {
  const Tensor &output;
  const Tensor &outputGrad;
  std::span<const Tensor *const> inputs;
  std::span<Tensor *const> inputGrads;
};

using BackwardFn = std::function<void(const BackwardContext &)>;

/// Records operations in creation order. Node ids are a topological order
/// by construction since inputs must already exist when a node is recorded.
class Tape {
public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape (readable through grad()).
  Var input(Tensor value);
  /// Leaf bound to a parameter; backward() adds into `param.grad`. The node
  /// reads `param.value` in place, so the value must not be modified while
  /// the tape is live. backward() raises ContractError if the tensor was
  /// reassigned or reshaped; in-place edits are not detected. Binding again
  /// on the same tape returns the same node.
  Var parameter(Parameter &param);

  /// Appends an operation node. Output values are checked for NaN/Inf. The
  /// backward rule is only materialised when some input requires a gradient.
  template <class F>
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs,
             F &&backward) {
    if (!anyRequiresGrad(inputs))
      return push(op, std::move(value), inputs, nullptr);
    return push(op, std::move(value), inputs, BackwardFn(std::forward<F>(backward)));
  }
  template <class F>
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
             F &&backward) {
    return record(op, std::move(value),
                  std::span<const Var>(inputs.begin(), inputs.size()),
                  std::forward<F>(backward));
  }

  /// With gradients disabled, leaves bound afterwards do not require a
  /// gradient, so the tape records values only. For forward-only probes.
  void setGradientsEnabled(bool enabled) noexcept { gradientsEnabled_ = enabled; }
  bool gradientsEnabled() const noexcept { return gradientsEnabled_; }

  void backward(Var loss);

  const Tensor &value(Var v) const;
  const Shape &shape(Var v) const;
  bool requiresGrad(Var v) const;
  /// Gradient of the last backward() w.r.t. `v`; zeros if none reached it.
  Tensor grad(Var v) const;
  std::string_view opName(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Set by operations whose output depends on a random draw (dropout in
  /// train mode). Gradient checks refuse such tapes.
  void markStochastic() noexcept { stochastic_ = true; }
  bool stochastic() const noexcept { return stochastic_; }

  void clear();

private:
  struct Node {
    std::string_view op;
    Tensor value;
    /// Parameter leaves borrow the parameter's storage instead of `value`.
    const Tensor *borrowed = nullptr;
    const double *storage = nullptr;
    std::size_t boundNumel = 0;
    Tensor grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    Parameter *param = nullptr;
    bool requiresGrad = false;
    bool hasGrad = false;
  };

  /// Append-only node storage with stable addresses. Fixed-size chunks are
  /// recycled through a per-thread pool, so short-lived tapes (one per
  /// finite-difference probe) do not return to the allocator for node slots.
  class NodeStore {
  public:
    static constexpr std::size_t kChunk = 256;
    NodeStore() = default;
    NodeStore(const NodeStore &) = delete;
    NodeStore &operator=(const NodeStore &) = delete;
    ~NodeStore() { clear(); }

    std::size_t size() const noexcept { return size_; }
    Node &operator[](std::size_t i) { return chunks_[i / kChunk][i % kChunk]; }
    const Node &operator[](std::size_t i) const {
      return chunks_[i / kChunk][i % kChunk];
    }
    /// Returns a default-state slot at index size() - 1.
    Node &append();
    void clear();

  private:
    static constexpr std::size_t kMaxPooledChunks = 64;
    static std::vector<std::unique_ptr<Node[]>> &pool();
    std::vector<std::unique_ptr<Node[]>> chunks_;
    std::size_t size_ = 0;
  };

  const Node &node(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size())
      foreignVariable();
    return nodes_[v.id()];
  }
  [[noreturn]] static void foreignVariable();
  static const Tensor &valueOf(const Node &n) {
    return n.borrowed ? *n.borrowed : n.value;
  }
  Var pushed();
  bool anyRequiresGrad(std::span<const Var> inputs) const;
  Var push(std::string_view op, Tensor value, std::span<const Var> inputs,
           BackwardFn backward);

  NodeStore nodes_;
  std::vector<std::pair<const Parameter *, std::uint32_t>> bound_;
  bool stochastic_ = false;
  bool gradientsEnabled_ = true;
};

} // namespace emofuse::ad
