#pragma once

#include <vector>

#include "dfdg/graph.hpp"
#include "dfdg/params.hpp"
#include "dfdg/tensor.hpp"

namespace dfdg {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Activations recorded by a forward pass, consumed by backward().
template <typename T>
struct Tape {
  Mode mode = Mode::Eval;
  std::vector<Tensor<T>> values;
  std::vector<std::vector<T>> aux;
  std::vector<std::vector<int>> idx;
};

/// Runs the graph. In Train mode BatchNorm uses batch statistics and, when
/// `running_stats` is given, updates its running mean/variance in place.
template <typename T>
Tensor<T> forward(const Graph& graph, const ParameterSet<T>& params, const Tensor<T>& x, Mode mode,
                  Tape<T>* tape = nullptr, ParameterSet<T>* running_stats = nullptr);

/// Backpropagates `dy` through a recorded forward pass. Parameter gradients
/// are accumulated into `grads` when non-null; returns d(loss)/d(input)
/// (empty when `need_input_grad` is false).
template <typename T>
Tensor<T> backward(const Graph& graph, const ParameterSet<T>& params, const Tape<T>& tape,
                   const Tensor<T>& dy, ParameterSet<T>* grads, bool need_input_grad = true);

}  // namespace dfdg
