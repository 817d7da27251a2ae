#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "tdrm/core/tensor.hpp"

namespace tdrm {

// Named collection of trainable leaves. Creation order is stable; names are
// unique and hierarchical by convention ("wm.encoder.conv0.w", ...). Frozen
// entries are skipped by optimizers and by finite-difference checks.
template <typename S>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<S> tensor;
    bool trainable = true;
  };

  Tensor<S> create(const std::string& name, Shape shape, std::vector<S> init) {
    TDRM_CHECK(!index_.count(name), "duplicate parameter name: " + name);
    Tensor<S> t = Tensor<S>::leaf(std::move(shape), std::move(init));
    index_[name] = entries_.size();
    entries_.push_back({name, t, true});
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<S> at(const std::string& name) const {
    auto it = index_.find(name);
    TDRM_CHECK(it != index_.end(), "unknown parameter: " + name);
    return entries_[it->second].tensor;
  }

  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& e : entries_)
      if (e.name.rfind(prefix, 0) == 0) e.trainable = trainable;
  }

  bool trainable(const std::string& name) const {
    auto it = index_.find(name);
    TDRM_CHECK(it != index_.end(), "unknown parameter: " + name);
    return entries_[it->second].trainable;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  // Raw values of every entry under a prefix, in creation order; used by the
  // bitwise freeze checks and the slow-critic sync.
  std::vector<std::vector<S>> snapshot(const std::string& prefix) const {
    std::vector<std::vector<S>> out;
    for (const auto& e : entries_)
      if (e.name.rfind(prefix, 0) == 0) out.push_back(e.tensor.value());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace tdrm
