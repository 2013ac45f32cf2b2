#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfdg/federation_data.hpp"
#include "dfdg/model_zoo.hpp"

namespace dfdg {

struct ClientConfig {
  int local_epochs = 50;
  double learning_rate = 0.01;
  int batch_size = 64;
  std::uint64_t seed = 0;

  bool operator==(const ClientConfig&) const = default;
};

void validate(const ClientConfig& cfg);

struct ClientResult {
  ParameterSet<float> params;
  std::vector<long long> label_counts;  // this client's LabelCounter row
  double learning_rate = 0.0;
  double train_accuracy = 0.0;  // on the client's own slice, after training
  long long steps = 0;
};

/// Plain minibatch SGD on cross-entropy for `local_epochs` full passes over
/// `data` (reshuffled each epoch, partial last batch kept). Every distinct
/// example's label is counted once, the first time it is drawn.
ClientResult client_update(const ParameterSet<float>& init, const DatasetSplit& data, int num_classes,
                           const ClientConfig& cfg, int client_id = 0);

/// Trains once per candidate learning rate from the same init and seed and
/// keeps the run with the highest accuracy on the client's own slice (the
/// earlier candidate wins ties).
ClientResult client_update_sweep(const ParameterSet<float>& init, const DatasetSplit& data, int num_classes,
                                 const ClientConfig& cfg, std::span<const double> learning_rates,
                                 int client_id = 0);

/// Fraction of argmax-correct predictions, eval-mode BatchNorm.
template <typename T>
double evaluate(const Model<T>& model, const DatasetSplit& examples, int batch_size = 250);

}  // namespace dfdg
