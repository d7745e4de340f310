#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ninformer/errors.hpp"
#include "ninformer/tensor.hpp"

namespace ninformer {

namespace detail {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows back into this node
  bool requires_grad = false;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

}  // namespace detail

// Handle to a value that may take part in differentiation. Copies share the
// same underlying node, so a parameter held by a block and by the ParamStore
// is one tensor.
template <typename T>
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rank() const { return node_->value.rank(); }
  std::size_t dim(std::ptrdiff_t axis) const { return node_->value.dim(axis); }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  // Gradient accumulated by the last backward pass; zeros if none reached it.
  Tensor<T> grad() const {
    return has_grad() ? node_->grad : Tensor<T>(node_->value.shape());
  }
  void zero_grad() { node_->grad = Tensor<T>(); }

  detail::Node<T>& node() const { return *node_; }
  const std::shared_ptr<detail::Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// Named trainable tensors in insertion order.
template <typename T>
class ParamStore {
 public:
  using Entry = std::pair<std::string, Variable<T>>;

  Variable<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, Variable<T>(std::move(init), true));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Variable<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  std::size_t size() const noexcept { return entries_.size(); }

  // Total number of scalar parameters.
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [name, var] : entries_) n += var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, var] : entries_) var.zero_grad();
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Define-by-run gradient tape. Constructing one makes it the active tape for
// the current thread; ops executed while it is active record their backward
// rules. Without an active tape ops run in inference mode and record nothing.
template <typename T>
class GradTape {
 public:
  using Rule = std::function<void(const Tensor<T>& grad_out)>;

  GradTape() : previous_(active_) { active_ = this; }
  ~GradTape() { active_ = previous_; }
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() noexcept { return active_; }

  // Operands are recorded before their consumers, so the entry list is in
  // topological order by construction.
  void record(const Variable<T>& out, Rule rule) {
    entries_.push_back({out.node_ptr(), std::move(rule)});
  }

  std::size_t size() const noexcept { return entries_.size(); }

  void backward(const Variable<T>& loss) {
    if (loss.value().size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    loss.node().grad_buffer().fill(T{1});
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->out->grad.empty()) it->rule(it->out->grad);
    }
  }

  // Runs backward and returns one gradient per parameter in store order.
  // Parameters the loss does not depend on get zero gradients.
  std::vector<Tensor<T>> backward(const Variable<T>& loss, const ParamStore<T>& params) {
    backward(loss);
    std::vector<Tensor<T>> grads;
    grads.reserve(params.size());
    for (const auto& [name, var] : params) grads.push_back(var.grad());
    return grads;
  }

 private:
  struct Entry {
    std::shared_ptr<detail::Node<T>> out;
    Rule rule;
  };

  static inline thread_local GradTape* active_ = nullptr;
  GradTape* previous_;
  std::vector<Entry> entries_;
};

// True when an op with these operands must record a backward rule.
template <typename T, typename... Vars>
bool should_record(const Vars&... operands) {
  return GradTape<T>::active() != nullptr && (operands.requires_grad() || ...);
}

// Adds `delta` into the gradient of `target` if it participates in
// differentiation.
template <typename T>
void accumulate_grad(const Variable<T>& target, const Tensor<T>& delta) {
  if (!target.requires_grad()) return;
  auto& g = target.node().grad_buffer();
  auto dst = g.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace ninformer
