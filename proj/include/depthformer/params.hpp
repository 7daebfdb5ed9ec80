#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "depthformer/config.hpp"
#include "depthformer/graph.hpp"
#include "depthformer/tensor.hpp"

namespace df {

// Insertion-ordered parameter map. Order is part of the contract: optimizer
// state and checkpoints address parameters by name, gradients by this order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool decay;  // decoupled weight decay applies only where true
  };

  void add(std::string name, Tensor<T> value, bool decay) {
    if (index_.count(name)) throw Error("duplicate parameter: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value), decay});
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return entries_[it->second].value;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return entries_[it->second].value;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.decay);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// Binds store parameters into a graph lazily: a leaf is created the first time
// a name is used, so chunked forwards only pay for what they touch.
template <typename T>
class BoundParams {
 public:
  BoundParams(Graph<T>& g, const ParamStore<T>& store, bool requires_grad)
      : g_(&g), store_(&store), requires_grad_(requires_grad) {}

  VarId operator()(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    VarId id = g_->leaf(store_->get(name), requires_grad_);
    ids_.emplace(name, id);
    return id;
  }

  const std::unordered_map<std::string, VarId>& ids() const { return ids_; }

 private:
  Graph<T>* g_;
  const ParamStore<T>* store_;
  bool requires_grad_;
  std::unordered_map<std::string, VarId> ids_;
};

// Builds all parameters for the configured encoder/decoder/head, initialized
// deterministically from the seed. Only the active decoder/head variant's
// parameters are created.
template <typename T>
ParamStore<T> init_depthformer_params(const ModelConfig& cfg, uint64_t seed);

extern template ParamStore<float> init_depthformer_params<float>(const ModelConfig&, uint64_t);
extern template ParamStore<double> init_depthformer_params<double>(const ModelConfig&, uint64_t);
extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace df
