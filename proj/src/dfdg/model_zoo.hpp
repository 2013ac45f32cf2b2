#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dfdg/graph.hpp"
#include "dfdg/nn.hpp"
#include "dfdg/params.hpp"
#include "dfdg/specs.hpp"

namespace dfdg {

/// Channel count of every stage after width scaling, ceil(base * R), never 0.
std::vector<int> hidden_widths(const ModelSpec& spec);

/// Throws a configuration error for an unusable spec.
void validate(const ModelSpec& spec);

/// Width-scaled copy of `global_spec`: hidden widths scale by R, input
/// shape and class count stay fixed.
ModelSpec extract_submodel(const ModelSpec& global_spec, double ratio);

struct BudgetPlan {
  int num_clients = 1;
  int sigma = 0;
  int rho = 0;
  std::vector<double> ratios;
};

/// R_i = (1/2)^min(sigma, floor(rho * i / N)) for clients i = 1..N.
BudgetPlan budget_plan(int num_clients, int sigma, int rho);

std::shared_ptr<const Graph> model_graph(const ModelSpec& spec);
std::shared_ptr<const Graph> generator_graph(const GeneratorSpec& spec);

/// Classifier: graph plus its parameters.
template <typename T>
struct Model {
  std::shared_ptr<const Graph> graph;
  ParameterSet<T> params;

  const ModelSpec& spec() const { return std::get<ModelSpec>(params.arch); }

  Tensor<T> logits(const Tensor<T>& images, Mode mode = Mode::Eval, Tape<T>* tape = nullptr,
                   ParameterSet<T>* running_stats = nullptr) const {
    return forward(*graph, params, images, mode, tape, running_stats);
  }
};

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed);

/// Wraps an existing parameter set (e.g. a loaded checkpoint).
template <typename T>
Model<T> bind_model(ParameterSet<T> params);

/// Conditional generator. The label embedding, when the merge operator uses
/// one, is the last array of `params` and trains jointly with the network.
template <typename T>
struct GeneratorState {
  GeneratorSpec spec;
  std::shared_ptr<const Graph> graph;
  ParameterSet<T> params;

  bool has_embedding() const;
  int embedding_index() const;  // -1 when absent
  int merged_dim() const;
};

int merged_dim(const GeneratorSpec& spec);

template <typename T>
GeneratorState<T> build_generator(const GeneratorSpec& spec, std::uint64_t seed);

template <typename T>
GeneratorState<T> bind_generator(ParameterSet<T> params);

/// o(z, y): MUL z*E[y], ADD z+E[y], CAT [z, E[y]], NCAT [z, y/(C-1)], NONE z.
template <typename T>
Tensor<T> merge_inputs(const GeneratorState<T>& gen, const Tensor<T>& z, std::span<const int> labels);

/// Accumulates d(loss)/dE given d(loss)/dh.
template <typename T>
void merge_backward(const GeneratorState<T>& gen, const Tensor<T>& z, std::span<const int> labels,
                    const Tensor<T>& dh, ParameterSet<T>& grads);

/// s = G(o(z, y)). BatchNorm always uses batch statistics.
template <typename T>
Tensor<T> generate(const GeneratorState<T>& gen, const Tensor<T>& z, std::span<const int> labels,
                   Tape<T>* tape = nullptr, Tensor<T>* merged = nullptr);

/// Elementwise mean; every set must share one layout.
template <typename T>
ParameterSet<T> average_parameters(std::span<const ParameterSet<T>> sets);

}  // namespace dfdg
