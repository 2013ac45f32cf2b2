#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfdg/federation_data.hpp"
#include "dfdg/loss_kernels.hpp"
#include "dfdg/model_zoo.hpp"
#include "dfdg/rng.hpp"

namespace dfdg {

enum class RunMode { DFDG, DFAD, DENSE_STYLE, FEDFTG_STYLE, FEDAVG_ONLY };
enum class AdamBiasMode { LITERAL, STANDARD };

std::string to_string(RunMode v);
std::string to_string(AdamBiasMode v);
RunMode parse_run_mode(std::string_view s);
AdamBiasMode parse_adam_bias_mode(std::string_view s);
std::string to_string(Mode v);
Mode parse_bn_mode(std::string_view s);

struct ServerConfig {
  int outer_iters = 500;
  int gen_inner_iters = 20;
  int distill_inner_iters = 2;
  double gen_lr = 2e-4;
  double adam_b1 = 0.5;
  double adam_b2 = 0.999;
  double distill_lr = 0.01;
  int batch_size = 64;
  GenLossWeights weights;
  TransferVariant variant = TransferVariant::DIAMOND;
  RunMode mode = RunMode::DFDG;
  AdamBiasMode adam_bias = AdamBiasMode::LITERAL;
  KlOrder kl_order = KlOrder::AS_WRITTEN;
  bool resample_per_inner_step = false;
  Mode student_bn = Mode::Eval;  // student BatchNorm mode while distilling
  int eval_every = 5;
  std::uint64_t seed = 0;

  bool operator==(const ServerConfig&) const = default;
};

void validate(const ServerConfig& cfg);

/// What a mode actually runs: generator count, gate variant, loss weights.
struct ModeSettings {
  int num_generators = 0;
  TransferVariant variant = TransferVariant::DIAMOND;
  GenLossWeights weights;
};

ModeSettings mode_settings(const ServerConfig& cfg);

struct Aggregate {
  ParameterSet<float> params;
  bool averaged = false;
};

/// Elementwise mean when every local shares `global_spec`; otherwise a fresh
/// initialization of `global_spec` from `seed`.
Aggregate one_shot_aggregate(std::span<const ParameterSet<float>> locals, const ModelSpec& global_spec,
                             std::uint64_t seed);

struct NoiseBatch {
  Tensor<float> z;
  std::vector<int> labels;
};

/// z ~ N(0, I) of shape (B, d); labels ~ p(y).
NoiseBatch sample_noise_labels(int batch_size, int noise_dim, const WeightingTables& tables, Rng& rng);

template <typename T>
struct AdamState {
  ParameterSet<T> m;
  ParameterSet<T> v;
  long long step = 0;
};

template <typename T>
AdamState<T> fresh_adam(const ParameterSet<T>& params);

/// One update of the trainable arrays. LITERAL divides the moments by the
/// constants (1 - b1) and (1 - b2); STANDARD by (1 - b^t).
template <typename T>
void adam_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamState<T>& state, double lr, double b1,
               double b2, AdamBiasMode mode);

/// Generator_Update: I_g Adam steps on L_gen from zeroed moments. The other
/// generator (if any) is held fixed; its batch on the same (z, y) is treated
/// as constant. When `resample` is set, a new (z, y) is drawn from `rng` for
/// every inner step.
GeneratorLossTerms generator_update(GeneratorState<float>& gen, const GeneratorState<float>* other,
                                    const NoiseBatch& batch, const Model<float>& student,
                                    std::span<const Model<float>> locals, const WeightingTables& tables,
                                    const ServerConfig& cfg, const ModeSettings& settings, int generator_id,
                                    Rng* resample_rng = nullptr);

/// I_d SGD steps on L_dmd with batches regenerated from the frozen
/// generators. Returns the last step's loss.
double distill_update(Model<float>& student, std::span<const GeneratorState<float>> gens,
                      std::span<const Model<float>> locals, const WeightingTables& tables, const ServerConfig& cfg,
                      const NoiseBatch& batch, Rng* resample_rng = nullptr);

struct EvalPoint {
  int iteration = 0;  // server iterations completed
  double accuracy = 0.0;
  double top_accuracy = 0.0;
  std::vector<GeneratorLossTerms> generator_losses;  // last inner step, per generator
  double distill_loss = 0.0;
};

struct ServerOutcome {
  Model<float> student;
  std::vector<GeneratorState<float>> generators;
  std::vector<EvalPoint> evals;
  bool averaged = false;
  double final_accuracy = 0.0;
  double top_accuracy = 0.0;  // best accuracy over evaluations after server iterations
};

struct ServerInputs {
  std::span<const Model<float>> locals;
  const WeightingTables* tables = nullptr;
  ModelSpec global_spec;
  GeneratorSpec generator_spec;
  const DatasetSplit* test = nullptr;
};

using EvalCallback = std::function<void(const EvalPoint&)>;

/// Algorithm 1 after local training: aggregate, then for each outer iteration
/// update G1, then G2 (seeing G1's new batch), then distill into the student.
ServerOutcome run_server(const ServerInputs& inputs, const ServerConfig& cfg, const EvalCallback& on_eval = {});

}  // namespace dfdg
