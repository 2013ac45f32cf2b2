#include "dfdg/client_trainer.hpp"

#include <cmath>
#include <numeric>

#include "dfdg/loss_kernels.hpp"
#include "dfdg/rng.hpp"

namespace dfdg {

void validate(const ClientConfig& cfg) {
  require(cfg.local_epochs >= 0, ErrorCode::Config, "local_epochs must be nonnegative");
  require(cfg.learning_rate >= 0.0 && std::isfinite(cfg.learning_rate), ErrorCode::Config,
          "client learning rate must be a nonnegative number");
  require(cfg.batch_size >= 1, ErrorCode::Config, "client batch size must be positive");
}

ClientResult client_update(const ParameterSet<float>& init, const DatasetSplit& data, int num_classes,
                           const ClientConfig& cfg, int client_id) {
  validate(cfg);
  const int n = data.size();
  require(n > 0, ErrorCode::InvalidArgument, "client " + std::to_string(client_id) + " has no data");

  Model<float> model = bind_model(init);
  ClientResult result;
  result.learning_rate = cfg.learning_rate;
  result.label_counts.assign(num_classes, 0);
  std::vector<char> cached(n, 0);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  const float lr = static_cast<float>(cfg.learning_rate);

  ParameterSet<float> grads = zeros_like(model.params);
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int end = std::min(n, start + cfg.batch_size);
      std::vector<int> rows(order.begin() + start, order.begin() + end);
      std::vector<int> labels;
      labels.reserve(rows.size());
      for (int r : rows) {
        labels.push_back(data.labels[r]);
        if (!cached[r]) {
          cached[r] = 1;
          ++result.label_counts[data.labels[r]];
        }
      }
      const Tensor<float> x = gather_rows(data.images, rows);
      Tape<float> tape;
      const Tensor<float> logits = model.logits(x, Mode::Train, &tape, &model.params);
      Tensor<float> dlogits(logits.shape);
      const double loss = cross_entropy(logits, labels, &dlogits);
      if (!std::isfinite(loss)) {
        fail(ErrorCode::Numeric, "client " + std::to_string(client_id) + ": non-finite training loss in epoch " +
                                     std::to_string(epoch));
      }
      for (auto& a : grads.arrays) std::fill(a.values.begin(), a.values.end(), 0.0f);
      backward(*model.graph, model.params, tape, dlogits, &grads, false);
      for (std::size_t a = 0; a < model.params.arrays.size(); ++a) {
        auto& p = model.params.arrays[a];
        if (!is_trainable(p.kind)) continue;
        const auto& g = grads.arrays[a].values;
        for (std::size_t k = 0; k < p.values.size(); ++k) p.values[k] -= lr * g[k];
      }
      ++result.steps;
    }
  }
  result.train_accuracy = evaluate(model, data);
  result.params = std::move(model.params);
  return result;
}

ClientResult client_update_sweep(const ParameterSet<float>& init, const DatasetSplit& data, int num_classes,
                                 const ClientConfig& cfg, std::span<const double> learning_rates, int client_id) {
  if (learning_rates.empty()) return client_update(init, data, num_classes, cfg, client_id);
  ClientResult best;
  bool have = false;
  std::string last_error;
  for (double lr : learning_rates) {
    ClientConfig c = cfg;
    c.learning_rate = lr;
    ClientResult r;
    try {
      r = client_update(init, data, num_classes, c, client_id);
    } catch (const Error& e) {
      // a diverging candidate is skipped
      if (e.code() != ErrorCode::Numeric) throw;
      last_error = e.what();
      continue;
    }
    if (!have || r.train_accuracy > best.train_accuracy) {
      best = std::move(r);
      have = true;
    }
  }
  if (!have) fail(ErrorCode::Numeric, last_error + " (every candidate learning rate diverged)");
  return best;
}

template <typename T>
double evaluate(const Model<T>& model, const DatasetSplit& examples, int batch_size) {
  const int n = examples.size();
  require(n > 0, ErrorCode::InvalidArgument, "cannot evaluate on an empty set");
  long long correct = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    const Tensor<T> x = tensor_cast<T>(slice_rows(examples.images, start, end));
    const auto pred = argmax_rows(model.logits(x, Mode::Eval));
    for (int b = 0; b < end - start; ++b) correct += pred[b] == examples.labels[start + b];
  }
  return static_cast<double>(correct) / n;
}

template double evaluate<float>(const Model<float>&, const DatasetSplit&, int);
template double evaluate<double>(const Model<double>&, const DatasetSplit&, int);

}  // namespace dfdg
