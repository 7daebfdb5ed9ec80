#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "depthformer/tensor.hpp"

namespace df {

using VarId = int32_t;
inline constexpr VarId kNoVar = -1;

// Eager tape: every op computes its value immediately and records a closure
// that scatters the output gradient back to its inputs. backward() sweeps the
// tape in reverse creation order, which is a valid topological order by
// construction.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  VarId leaf(Tensor<T> value, bool requires_grad) {
    return node(std::move(value), requires_grad, nullptr);
  }

  VarId node(Tensor<T> value, bool requires_grad, std::function<void(Graph&)> back) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, false,
                          requires_grad ? std::move(back) : nullptr});
    return static_cast<VarId>(nodes_.size() - 1);
  }

  const Tensor<T>& val(VarId id) const { return nodes_[static_cast<size_t>(id)].value; }

  bool rg(VarId id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  bool has_grad(VarId id) const { return nodes_[static_cast<size_t>(id)].grad_alloc; }

  // Gradient buffer, zero-initialized on first touch.
  Tensor<T>& grad(VarId id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_alloc) {
      n.gradient = Tensor<T>(n.value.shape);
      n.grad_alloc = true;
    }
    return n.gradient;
  }

  void backward(VarId root) {
    if (val(root).numel() != 1) throw ShapeError("backward: root must be a scalar");
    grad(root).data[0] = T(1);
    for (VarId i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.requires_grad && n.grad_alloc && n.back) n.back(*this);
    }
  }

  // Nonsmooth ops mix their activation sign patterns in here; a gradient
  // checker compares digests of perturbed runs to detect kink crossings.
  void note_kink(uint64_t h) { kink_digest_ = (kink_digest_ ^ h) * 0x100000001b3ull; }
  uint64_t kink_digest() const { return kink_digest_; }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> gradient;
    bool requires_grad;
    bool grad_alloc;
    std::function<void(Graph&)> back;
  };
  std::vector<Node> nodes_;
  uint64_t kink_digest_ = 0xcbf29ce484222325ull;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace df
