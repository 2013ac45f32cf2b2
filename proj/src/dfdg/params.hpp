#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dfdg/graph.hpp"
#include "dfdg/specs.hpp"

namespace dfdg {

template <typename T>
struct NamedArray {
  std::string name;
  Shape shape;
  ParamKind kind = ParamKind::Weight;
  std::vector<T> values;
};

/// Flat parameter collection (weights, biases, normalization statistics)
/// together with the architecture it instantiates. Plain value type.
template <typename T>
struct ParameterSet {
  ArchSpec arch;
  std::vector<NamedArray<T>> arrays;

  const NamedArray<T>* find(std::string_view name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }

  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& a : arrays) {
      if (!trainable_only || is_trainable(a.kind)) n += a.values.size();
    }
    return n;
  }
};

template <typename T>
ParameterSet<T> zeros_like(const ParameterSet<T>& p) {
  ParameterSet<T> out = p;
  for (auto& a : out.arrays) std::fill(a.values.begin(), a.values.end(), T{0});
  return out;
}

template <typename To, typename From>
ParameterSet<To> parameter_cast(const ParameterSet<From>& p) {
  ParameterSet<To> out;
  out.arch = p.arch;
  out.arrays.reserve(p.arrays.size());
  for (const auto& a : p.arrays) {
    out.arrays.push_back(NamedArray<To>{a.name, a.shape, a.kind, std::vector<To>(a.values.begin(), a.values.end())});
  }
  return out;
}

/// True when both sets have the same array names and shapes, in order.
template <typename T>
bool same_layout(const ParameterSet<T>& a, const ParameterSet<T>& b) {
  if (a.arrays.size() != b.arrays.size()) return false;
  for (std::size_t i = 0; i < a.arrays.size(); ++i) {
    if (a.arrays[i].name != b.arrays[i].name || a.arrays[i].shape != b.arrays[i].shape) return false;
  }
  return true;
}

/// Parameter storage laid out for a graph, all zeros.
template <typename T>
ParameterSet<T> allocate_parameters(const Graph& g, ArchSpec arch) {
  ParameterSet<T> p;
  p.arch = std::move(arch);
  p.arrays.reserve(g.params.size());
  for (const auto& info : g.params) {
    p.arrays.push_back(NamedArray<T>{info.name, info.shape, info.kind, std::vector<T>(shape_size(info.shape), T{0})});
  }
  return p;
}

}  // namespace dfdg
