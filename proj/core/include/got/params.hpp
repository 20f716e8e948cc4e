#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "got/autograd.hpp"

namespace got {

/// Named collection of learnable tensors. Iteration order is the
/// lexicographic name order, which is also the checkpoint order.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Shape shape);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  std::map<std::string, Parameter<T>>& all() { return params_; }
  const std::map<std::string, Parameter<T>>& all() const { return params_; }
  std::vector<std::string> names() const;

  void zero_grad();
  bool all_finite() const;
  /// Global L2 norm of all gradients.
  double grad_norm() const;

  /// FNV-1a over names, shapes and the float32 little-endian image of every value.
  std::uint64_t digest() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.shape()).value = p.value.template cast<U>();
    return out;
  }

 private:
  std::map<std::string, Parameter<T>> params_;
};

/// Seeded initialisation: uniform in [-range, range].
template <typename T>
void init_uniform(Tensor<T>& t, std::mt19937_64& rng, T range);

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace got
