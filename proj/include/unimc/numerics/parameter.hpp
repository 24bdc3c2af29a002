#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "unimc/numerics/tensor.hpp"

namespace unimc::numerics {

/// A trainable tensor together with its gradient and Adam moments.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
  std::int64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }
};

/// Named parameters in a stable (insertion) order. Pointers handed out by
/// add() stay valid for the lifetime of the store.
template <class T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw Error("parameter store: duplicate name " + name);
    index_[name] = params_.size();
    params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value)));
    return *params_.back();
  }

  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("parameter store: unknown parameter " + name);
    return *params_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace unimc::numerics
