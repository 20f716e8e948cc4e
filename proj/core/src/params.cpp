#include "got/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace got {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, Shape shape) {
  auto [it, inserted] = params_.try_emplace(name, Parameter<T>(Tensor<T>(shape)));
  if (!inserted) throw std::invalid_argument("duplicate parameter " + name);
  return it->second;
}

template <typename T>
Parameter<T>& ParamStore<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

template <typename T>
const Parameter<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, p] : params_) {
    if (p.grad.size() != p.value.size()) {
      p.zero_grad();
    } else {
      p.grad.fill(T(0));
    }
  }
}

template <typename T>
bool ParamStore<T>::all_finite() const {
  for (const auto& [_, p] : params_)
    for (T v : p.value.values())
      if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
double ParamStore<T>::grad_norm() const {
  double s = 0.0;
  for (const auto& [_, p] : params_)
    for (T v : p.grad.values()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

template <typename T>
std::uint64_t ParamStore<T>::digest() const {
  static_assert(std::endian::native == std::endian::little, "checkpoint digests assume a little-endian host");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, p] : params_) {
    h = fnv1a(name.data(), name.size(), h);
    for (int d : p.value.shape()) {
      const auto d32 = static_cast<std::int32_t>(d);
      h = fnv1a(&d32, sizeof d32, h);
    }
    for (T v : p.value.values()) {
      const float f = static_cast<float>(v);
      h = fnv1a(&f, sizeof f, h);
    }
  }
  return h;
}

template <typename T>
void init_uniform(Tensor<T>& t, std::mt19937_64& rng, T range) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(range), static_cast<double>(range));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

template class ParamStore<float>;
template class ParamStore<double>;
template void init_uniform<float>(Tensor<float>&, std::mt19937_64&, float);
template void init_uniform<double>(Tensor<double>&, std::mt19937_64&, double);

}  // namespace got
