#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cstl/rng.hpp"
#include "cstl/tensor.hpp"

namespace cstl {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value
  bool trainable = true;
};

// Named parameter store. Insertion order is the canonical order for
// initialization, checkpoint serialization and optimizer state.
template <typename T>
class ParamSet {
 public:
  Param<T>& add(const std::string& name, Tensor<T> value,
                bool trainable = true) {
    if (index_.count(name)) {
      throw std::invalid_argument("ParamSet: duplicate parameter " + name);
    }
    index_[name] = params_.size();
    Param<T> p;
    p.name = name;
    p.grad = Tensor<T>(value.shape());
    p.value = std::move(value);
    p.trainable = trainable;
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const {
    return index_.count(name) > 0;
  }

  Param<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::invalid_argument("ParamSet: unknown parameter " + name);
    }
    return params_[it->second];
  }
  const Param<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::invalid_argument("ParamSet: unknown parameter " + name);
    }
    return params_[it->second];
  }

  const Tensor<T>& value(const std::string& name) const {
    return at(name).value;
  }
  Tensor<T>& grad(const std::string& name) { return at(name).grad; }

  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }

  void zero_grads() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  // Re-types the whole set (float training graph -> double check graph).
  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      Tensor<U> v(p.value.shape());
      for (std::int64_t i = 0; i < p.value.numel(); ++i) {
        v.data()[i] = static_cast<U>(p.value.data()[i]);
      }
      out.add(p.name, std::move(v), p.trainable);
    }
    return out;
  }

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
template <typename T>
Tensor<T> uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
  return t;
}

}  // namespace cstl
