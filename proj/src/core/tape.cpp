// SPDX-License-Identifier: Apache-2.0
#include "emofuse/tape.hpp"

#include "emofuse/error.hpp"

namespace emofuse::ad {


Parameter::Parameter(std::string n, std::string g, Tensor v)
    : name(std::move(n)), group(std::move(g)), value(std::move(v)),
      grad(value.shape()) {}

void Parameter::zeroGrad() {
  if (grad.shape() != value.shape())
    grad = Tensor(value.shape());
  else
    grad.fill(0.0);
}

const Tensor &Var::value() const { return tape_->value(*this); }
const Shape &Var::shape() const { return tape_->shape(*this); }
bool Var::requiresGrad() const { return tape_->requiresGrad(*this); }

void Tape::foreignVariable() {
  throw ContractError("variable does not belong to this tape");
}

std::vector<std::unique_ptr<Tape::Node[]>> &Tape::NodeStore::pool() {
  thread_local std::vector<std::unique_ptr<Node[]>> chunks;
  return chunks;
}

Tape::Node &Tape::NodeStore::append() {
  if (size_ == chunks_.size() * kChunk) {
    auto &pool = NodeStore::pool();
    if (pool.empty()) {
      chunks_.push_back(std::make_unique<Node[]>(kChunk));
    } else {
      chunks_.push_back(std::move(pool.back()));
      pool.pop_back();
    }
  }
  ++size_;
  return (*this)[size_ - 1];
}

void Tape::NodeStore::clear() {
  for (std::size_t i = 0; i < size_; ++i)
    (*this)[i] = Node();
  auto &pool = NodeStore::pool();
  for (auto &chunk : chunks_)
    if (pool.size() < kMaxPooledChunks)
      pool.push_back(std::move(chunk));
  chunks_.clear();
  size_ = 0;
}

Var Tape::pushed() {
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node &n = nodes_.append();
  n.op = "constant";
  n.value = std::move(value);
  return pushed();
}

Var Tape::input(Tensor value) {
  Node &n = nodes_.append();
  n.op = "input";
  n.value = std::move(value);
  n.requiresGrad = gradientsEnabled_;
  return pushed();
}

Var Tape::parameter(Parameter &param) {
  for (const auto &[p, id] : bound_)
    if (p == &param)
      return Var(this, id);
  Node &n = nodes_.append();
  n.op = "parameter";
  n.borrowed = &param.value;
  n.storage = param.value.raw();
  n.boundNumel = param.value.numel();
  n.requiresGrad = param.requiresGrad && gradientsEnabled_;
  n.param = &param;
  Var v = pushed();
  bound_.emplace_back(&param, v.id());
  return v;
}

bool Tape::anyRequiresGrad(std::span<const Var> inputs) const {
  bool any = false;
  for (const Var &in : inputs)
    any = node(in).requiresGrad || any;
  return any;
}

Var Tape::push(std::string_view op, Tensor value, std::span<const Var> inputs,
               BackwardFn backward) {
  value.requireFinite(op.data());
  Node &n = nodes_.append();
  n.op = op;
  n.value = std::move(value);
  if (backward) {
    n.requiresGrad = true;
    n.backward = std::move(backward);
    n.inputs.reserve(inputs.size());
    for (const Var &in : inputs)
      n.inputs.push_back(in.id());
  }
  return pushed();
}

void Tape::backward(Var loss) {
  const Node &root = node(loss);
  if (valueOf(root).numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shapeToString(valueOf(root).shape()));
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (const Node &n = nodes_[i]; n.borrowed &&
        (n.borrowed->raw() != n.storage || n.borrowed->numel() != n.boundNumel))
      throw ContractError("parameter " + n.param->name +
                          " was reassigned after it was bound to the tape");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node &n = nodes_[i];
    n.hasGrad = false;
    n.grad = Tensor();
  }
  Node &seed = nodes_[loss.id()];
  if (!seed.requiresGrad)
    return;
  seed.grad = Tensor(valueOf(seed).shape(), 1.0);
  seed.hasGrad = true;

  std::vector<const Tensor *> inputValues;
  std::vector<Tensor *> inputGrads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node &n = nodes_[i];
    if (!n.hasGrad)
      continue;
    if (n.param) {
      Parameter &p = *n.param;
      if (p.grad.shape() != p.value.shape())
        p.grad = Tensor(p.value.shape());
      auto dst = p.grad.values();
      auto src = n.grad.values();
      for (std::size_t k = 0; k < dst.size(); ++k)
        dst[k] += src[k];
    }
    if (!n.backward)
      continue;
    inputValues.clear();
    inputGrads.clear();
    for (auto id : n.inputs) {
      Node &in = nodes_[id];
      inputValues.push_back(&valueOf(in));
      if (in.requiresGrad) {
        if (!in.hasGrad) {
          in.grad = Tensor(valueOf(in).shape());
          in.hasGrad = true;
        }
        inputGrads.push_back(&in.grad);
      } else {
        inputGrads.push_back(nullptr);
      }
    }
    n.backward(BackwardContext{valueOf(n), n.grad, inputValues, inputGrads});
  }
}

const Tensor &Tape::value(Var v) const { return valueOf(node(v)); }
const Shape &Tape::shape(Var v) const { return valueOf(node(v)).shape(); }
bool Tape::requiresGrad(Var v) const { return node(v).requiresGrad; }

Tensor Tape::grad(Var v) const {
  const Node &n = node(v);
  if (!n.hasGrad)
    return Tensor(valueOf(n).shape());
  return n.grad;
}

std::string_view Tape::opName(Var v) const { return node(v).op; }

void Tape::clear() {
  nodes_.clear();
  bound_.clear();
  stochastic_ = false;
}

} // namespace emofuse::ad
