#include "dfdg/server_orchestrator.hpp"

#include <cmath>

#include "dfdg/client_trainer.hpp"
#include "dfdg/enum_names.hpp"

namespace dfdg {
namespace {

constexpr NameTable<RunMode, 5> kModes{{
    {"DFDG", RunMode::DFDG},
    {"DFAD", RunMode::DFAD},
    {"DENSE_STYLE", RunMode::DENSE_STYLE},
    {"FEDFTG_STYLE", RunMode::FEDFTG_STYLE},
    {"FEDAVG_ONLY", RunMode::FEDAVG_ONLY},
}};

constexpr NameTable<AdamBiasMode, 2> kAdamModes{{
    {"LITERAL", AdamBiasMode::LITERAL},
    {"STANDARD", AdamBiasMode::STANDARD},
}};

constexpr NameTable<Mode, 2> kBnModes{{
    {"TRAIN", Mode::Train},
    {"EVAL", Mode::Eval},
}};

constexpr std::uint64_t kSamplingStream = 0x5a3d;
constexpr std::uint64_t kGlobalInitStream = 0x6109;

void check_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) fail(ErrorCode::Numeric, "non-finite loss in " + where);
}

}  // namespace

std::string to_string(RunMode v) { return name_of(kModes, v); }
std::string to_string(AdamBiasMode v) { return name_of(kAdamModes, v); }
RunMode parse_run_mode(std::string_view s) { return lookup_name(kModes, s, "mode"); }
AdamBiasMode parse_adam_bias_mode(std::string_view s) { return lookup_name(kAdamModes, s, "Adam bias mode"); }
std::string to_string(Mode v) { return name_of(kBnModes, v); }
Mode parse_bn_mode(std::string_view s) { return lookup_name(kBnModes, s, "BatchNorm mode"); }

void validate(const ServerConfig& cfg) {
  require(cfg.outer_iters >= 0 && cfg.gen_inner_iters >= 0 && cfg.distill_inner_iters >= 0, ErrorCode::Config,
          "server iteration counts must be nonnegative");
  require(cfg.batch_size >= 1, ErrorCode::Config, "server batch size must be positive");
  require(cfg.gen_lr >= 0.0 && cfg.distill_lr >= 0.0, ErrorCode::Config, "server learning rates must be nonnegative");
  require(cfg.adam_b1 >= 0.0 && cfg.adam_b1 < 1.0 && cfg.adam_b2 >= 0.0 && cfg.adam_b2 < 1.0, ErrorCode::Config,
          "Adam betas must lie in [0, 1)");
  require(cfg.weights.tran >= 0.0 && cfg.weights.div >= 0.0 && cfg.weights.cd >= 0.0, ErrorCode::Config,
          "loss weights must be nonnegative");
  require(cfg.eval_every >= 1, ErrorCode::Config, "eval_every must be positive");
}

ModeSettings mode_settings(const ServerConfig& cfg) {
  ModeSettings m;
  m.variant = cfg.variant;
  m.weights = cfg.weights;
  switch (cfg.mode) {
    case RunMode::DFDG:
      m.num_generators = 2;
      break;
    case RunMode::DFAD:
      m.num_generators = 1;
      break;
    case RunMode::DENSE_STYLE:
      m.num_generators = 1;
      m.variant = TransferVariant::TRIANGLE_DOWN;
      break;
    case RunMode::FEDFTG_STYLE:
      m.num_generators = 1;
      m.variant = TransferVariant::TRIANGLE_UP;
      break;
    case RunMode::FEDAVG_ONLY:
      m.num_generators = 0;
      break;
  }
  if (m.num_generators < 2) m.weights.cd = 0.0;
  return m;
}

Aggregate one_shot_aggregate(std::span<const ParameterSet<float>> locals, const ModelSpec& global_spec,
                             std::uint64_t seed) {
  require(!locals.empty(), ErrorCode::InvalidArgument, "no local models to aggregate");
  bool homogeneous = true;
  for (const auto& p : locals) {
    const auto* spec = std::get_if<ModelSpec>(&p.arch);
    homogeneous = homogeneous && spec && *spec == global_spec;
  }
  Aggregate out;
  if (homogeneous) {
    out.params = average_parameters(locals);
    out.averaged = true;
  } else {
    out.params = build_model<float>(global_spec, seed).params;
  }
  return out;
}

NoiseBatch sample_noise_labels(int batch_size, int noise_dim, const WeightingTables& tables, Rng& rng) {
  NoiseBatch nb;
  nb.z = Tensor<float>({batch_size, noise_dim});
  for (auto& v : nb.z.data) v = static_cast<float>(rng.normal());
  nb.labels.resize(batch_size);
  for (auto& y : nb.labels) y = rng.categorical(tables.label_probs);
  return nb;
}

template <typename T>
AdamState<T> fresh_adam(const ParameterSet<T>& params) {
  return AdamState<T>{zeros_like(params), zeros_like(params), 0};
}

template <typename T>
void adam_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamState<T>& state, double lr, double b1,
               double b2, AdamBiasMode mode) {
  ++state.step;
  double c1 = 1.0 - b1;
  double c2 = 1.0 - b2;
  if (mode == AdamBiasMode::STANDARD) {
    c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  }
  constexpr double kEps = 1e-8;
  for (std::size_t a = 0; a < params.arrays.size(); ++a) {
    auto& p = params.arrays[a];
    if (!is_trainable(p.kind)) continue;
    const auto& g = grads.arrays[a].values;
    auto& m = state.m.arrays[a].values;
    auto& v = state.v.arrays[a].values;
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / c1;
      const double v_hat = vk / c2;
      p.values[k] = static_cast<T>(p.values[k] - lr * m_hat / (std::sqrt(v_hat) + kEps));
    }
  }
}

GeneratorLossTerms generator_update(GeneratorState<float>& gen, const GeneratorState<float>* other,
                                    const NoiseBatch& batch, const Model<float>& student,
                                    std::span<const Model<float>> locals, const WeightingTables& tables,
                                    const ServerConfig& cfg, const ModeSettings& settings, int generator_id,
                                    Rng* resample_rng) {
  GeneratorStepContext<float> ctx;
  ctx.student = &student;
  ctx.locals = locals;
  ctx.tables = &tables;
  ctx.weights = settings.weights;
  ctx.variant = settings.variant;

  const bool use_other = other && settings.weights.cd != 0.0;
  NoiseBatch current = batch;
  Tensor<float> other_ensemble;
  auto refresh_other = [&] {
    if (!use_other) return;
    const Tensor<float> s_other = generate(*other, current.z, current.labels);
    other_ensemble = ensemble_logits<float>(s_other, current.labels, locals, tables);
    ctx.other_ensemble = &other_ensemble;
  };
  refresh_other();

  AdamState<float> adam = fresh_adam(gen.params);
  ParameterSet<float> grads = zeros_like(gen.params);
  GeneratorLossTerms last;
  for (int step = 0; step < cfg.gen_inner_iters; ++step) {
    if (resample_rng && step > 0) {
      current = sample_noise_labels(cfg.batch_size, gen.spec.noise_dim, tables, *resample_rng);
      refresh_other();
    }
    for (auto& a : grads.arrays) std::fill(a.values.begin(), a.values.end(), 0.0f);
    last = generator_loss_and_grad(gen, current.z, current.labels, ctx, &grads);
    check_finite(last.total, "generator " + std::to_string(generator_id) + " at inner step " + std::to_string(step));
    adam_step(gen.params, grads, adam, cfg.gen_lr, cfg.adam_b1, cfg.adam_b2, cfg.adam_bias);
  }
  return last;
}

double distill_update(Model<float>& student, std::span<const GeneratorState<float>> gens,
                      std::span<const Model<float>> locals, const WeightingTables& tables, const ServerConfig& cfg,
                      const NoiseBatch& batch, Rng* resample_rng) {
  if (gens.empty()) return 0.0;
  NoiseBatch current = batch;
  ParameterSet<float> grads = zeros_like(student.params);
  const float lr = static_cast<float>(cfg.distill_lr);
  double loss = 0.0;
  for (int step = 0; step < cfg.distill_inner_iters; ++step) {
    if (resample_rng && step > 0) {
      current = sample_noise_labels(cfg.batch_size, gens.front().spec.noise_dim, tables, *resample_rng);
    }
    std::vector<Tensor<float>> batches;
    for (const auto& g : gens) batches.push_back(generate(g, current.z, current.labels));
    for (auto& a : grads.arrays) std::fill(a.values.begin(), a.values.end(), 0.0f);
    ParameterSet<float>* running = cfg.student_bn == Mode::Train ? &student.params : nullptr;
    loss = distillation_loss_and_grad<float>(student, batches, current.labels, locals, tables, cfg.kl_order,
                                             cfg.student_bn, &grads, running);
    check_finite(loss, "distillation step " + std::to_string(step));
    for (std::size_t a = 0; a < student.params.arrays.size(); ++a) {
      auto& p = student.params.arrays[a];
      if (!is_trainable(p.kind)) continue;
      const auto& g = grads.arrays[a].values;
      for (std::size_t k = 0; k < p.values.size(); ++k) p.values[k] -= lr * g[k];
    }
  }
  return loss;
}

ServerOutcome run_server(const ServerInputs& in, const ServerConfig& cfg, const EvalCallback& on_eval) {
  validate(cfg);
  require(in.tables && in.test, ErrorCode::InvalidArgument, "server needs weighting tables and a test set");
  require(!in.locals.empty(), ErrorCode::InvalidArgument, "server needs at least one local model");
  const ModeSettings settings = mode_settings(cfg);

  std::vector<ParameterSet<float>> local_params;
  for (const auto& m : in.locals) local_params.push_back(m.params);
  Aggregate agg = one_shot_aggregate(local_params, in.global_spec, Rng::derive(cfg.seed, kGlobalInitStream));

  ServerOutcome out;
  out.averaged = agg.averaged;
  out.student = bind_model(std::move(agg.params));

  auto record = [&](int iteration, std::vector<GeneratorLossTerms> losses, double distill, bool counts) {
    EvalPoint p;
    p.iteration = iteration;
    p.accuracy = evaluate(out.student, *in.test);
    if (counts) out.top_accuracy = std::max(out.top_accuracy, p.accuracy);
    p.top_accuracy = out.top_accuracy;
    p.generator_losses = std::move(losses);
    p.distill_loss = distill;
    out.final_accuracy = p.accuracy;
    out.evals.push_back(p);
    if (on_eval) on_eval(out.evals.back());
  };

  if (cfg.mode == RunMode::FEDAVG_ONLY || cfg.outer_iters == 0) {
    record(0, {}, 0.0, true);
    return out;
  }
  record(0, {}, 0.0, false);

  for (int k = 0; k < settings.num_generators; ++k) {
    out.generators.push_back(build_generator<float>(in.generator_spec, cfg.seed + static_cast<std::uint64_t>(k)));
  }
  Rng rng(Rng::derive(cfg.seed, kSamplingStream));
  Rng* resample = cfg.resample_per_inner_step ? &rng : nullptr;
  const int G = settings.num_generators;

  for (int t = 0; t < cfg.outer_iters; ++t) {
    const NoiseBatch batch = sample_noise_labels(cfg.batch_size, in.generator_spec.noise_dim, *in.tables, rng);
    std::vector<GeneratorLossTerms> losses(G);
    for (int k = 0; k < G; ++k) {
      const GeneratorState<float>* other = G == 2 ? &out.generators[1 - k] : nullptr;
      try {
        losses[k] = generator_update(out.generators[k], other, batch, out.student, in.locals, *in.tables, cfg,
                                     settings, k + 1, resample);
      } catch (const Error& e) {
        fail(e.code(), std::string(e.what()) + ", outer iteration " + std::to_string(t));
      }
    }
    double distill = 0.0;
    try {
      distill = distill_update(out.student, out.generators, in.locals, *in.tables, cfg, batch, resample);
    } catch (const Error& e) {
      fail(e.code(), std::string(e.what()) + ", outer iteration " + std::to_string(t));
    }
    if ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.outer_iters) record(t + 1, losses, distill, true);
  }
  return out;
}

template AdamState<float> fresh_adam<float>(const ParameterSet<float>&);
template AdamState<double> fresh_adam<double>(const ParameterSet<double>&);
template void adam_step<float>(ParameterSet<float>&, const ParameterSet<float>&, AdamState<float>&, double, double,
                               double, AdamBiasMode);
template void adam_step<double>(ParameterSet<double>&, const ParameterSet<double>&, AdamState<double>&, double,
                                double, double, AdamBiasMode);

}  // namespace dfdg
