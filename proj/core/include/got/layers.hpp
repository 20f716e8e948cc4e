#pragma once

#include <cmath>
#include <random>
#include <string>

#include "got/params.hpp"

namespace got {

/// Fully connected layer "<name>.w" [in, out] and "<name>.b" [out], weights
/// uniform in [-range, range], bias zero. range <= 0 selects He-uniform.
template <typename T>
void add_dense(ParamStore<T>& store, const std::string& name, int in, int out, std::mt19937_64& rng,
               double range = 0.0) {
  if (range <= 0) range = std::sqrt(6.0 / in);
  init_uniform(store.add(name + ".w", {in, out}).value, rng, static_cast<T>(range));
  store.add(name + ".b", {out});
}

template <typename T>
ag::Var dense(ag::Graph<T>& g, ParamStore<T>& store, const std::string& name, ag::Var x) {
  return ag::linear(g, x, g.parameter(store.get(name + ".w")), g.parameter(store.get(name + ".b")));
}

}  // namespace got
