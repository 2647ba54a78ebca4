#pragma once

#include <map>
#include <string>

#include "milkit/tensor.hpp"

namespace milkit {

// Named trainable tensors with matching gradient slots. std::map keeps
// iteration order deterministic (sorted by name).
class ParamStore {
 public:
  struct Slot {
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, Tensor init) {
    auto [it, inserted] = slots_.try_emplace(name);
    if (!inserted) throw ConfigError("duplicate parameter name: " + name);
    it->second.grad = Tensor::zeros(init.shape());
    it->second.value = std::move(init);
    return it->second.value;
  }

  bool has(const std::string& name) const { return slots_.count(name) != 0; }

  Tensor& value(const std::string& name) { return slot(name).value; }
  const Tensor& value(const std::string& name) const { return slot(name).value; }
  Tensor& grad(const std::string& name) { return slot(name).grad; }
  const Tensor& grad(const std::string& name) const { return slot(name).grad; }

  void zero_grads() {
    for (auto& [_, s] : slots_) s.grad.fill(0.0);
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [_, s] : slots_) n += s.value.size();
    return n;
  }

  auto begin() { return slots_.begin(); }
  auto end() { return slots_.end(); }
  auto begin() const { return slots_.begin(); }
  auto end() const { return slots_.end(); }
  std::size_t count() const { return slots_.size(); }

 private:
  Slot& slot(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Slot& slot(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Slot> slots_;
};

}  // namespace milkit
