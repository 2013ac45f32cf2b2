#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dfdg/client_trainer.hpp"
#include "dfdg/server_orchestrator.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dfdg;
using namespace dfdg::testing;

namespace {

const DatasetHandle& toy() {
  static const DatasetHandle d = make_synth_toy();
  return d;
}

struct Setup {
  ModelSpec spec;
  GeneratorSpec gen_spec;
  std::vector<Model<float>> locals;
  WeightingTables tables;
  DatasetSplit test;
  ServerConfig cfg;

  ServerInputs inputs() const {
    ServerInputs in;
    in.locals = locals;
    in.tables = &tables;
    in.global_spec = spec;
    in.generator_spec = gen_spec;
    in.test = &test;
    return in;
  }
};

Setup make_setup(int num_locals = 3) {
  Setup s;
  s.spec.input = toy().image_shape;
  s.spec.num_classes = 10;
  s.spec.base_width = 2;
  s.gen_spec.image = toy().image_shape;
  s.gen_spec.num_classes = 10;
  s.gen_spec.noise_dim = 8;
  LabelCounter lc(num_locals, 10);
  for (int i = 0; i < num_locals; ++i) {
    s.locals.push_back(build_model<float>(s.spec, 100 + i));
    for (int y = 0; y < 10; ++y) lc.at(i, y) = (i + y) % 3 + 1;
  }
  s.tables = compute_weights(lc);
  s.test = toy().test;
  s.test.images = Tensor<float>({100, 1, 16, 16});
  std::copy_n(toy().test.images.data.begin(), s.test.images.data.size(), s.test.images.data.begin());
  s.test.labels.resize(100);
  s.cfg.outer_iters = 3;
  s.cfg.gen_inner_iters = 2;
  s.cfg.distill_inner_iters = 1;
  s.cfg.batch_size = 16;
  s.cfg.eval_every = 1;
  s.cfg.seed = 5;
  return s;
}

bool same_values(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  if (a.arrays.size() != b.arrays.size()) return false;
  for (std::size_t i = 0; i < a.arrays.size(); ++i) {
    if (a.arrays[i].values != b.arrays[i].values) return false;
  }
  return true;
}

NoiseBatch fixed_batch(const Setup& s, std::uint64_t seed) {
  Rng rng(seed);
  return sample_noise_labels(s.cfg.batch_size, s.gen_spec.noise_dim, s.tables, rng);
}

}  // namespace

TEST(ServerOrchestrator, AggregateIsTheElementwiseMean) {
  const auto s = make_setup();
  std::vector<ParameterSet<float>> params;
  for (const auto& m : s.locals) params.push_back(m.params);
  const auto agg = one_shot_aggregate(params, s.spec, 1);
  ASSERT_TRUE(agg.averaged);
  for (std::size_t a = 0; a < params[0].arrays.size(); ++a) {
    for (std::size_t k = 0; k < params[0].arrays[a].values.size(); k += 7) {
      const double want = (static_cast<double>(params[0].arrays[a].values[k]) + params[1].arrays[a].values[k] +
                           params[2].arrays[a].values[k]) / 3.0;
      EXPECT_NEAR(agg.params.arrays[a].values[k], want, 1e-6);
    }
  }
}

TEST(ServerOrchestrator, MixedWidthsFallBackToFreshInit) {
  const auto s = make_setup();
  std::vector<ParameterSet<float>> params{s.locals[0].params,
                                          build_model<float>(extract_submodel(s.spec, 0.5), 3).params};
  const auto agg = one_shot_aggregate(params, s.spec, 42);
  EXPECT_FALSE(agg.averaged);
  EXPECT_TRUE(same_values(agg.params, build_model<float>(s.spec, 42).params));
}

TEST(ServerOrchestrator, NoiseAndLabelSampling) {
  LabelCounter lc(2, 4);
  lc.at(0, 0) = 10;
  lc.at(1, 1) = 30;
  lc.at(1, 3) = 60;
  const auto tables = compute_weights(lc);
  Rng rng(3);
  const auto nb = sample_noise_labels(20000, 4, tables, rng);
  double mean = 0.0, sq = 0.0;
  for (float v : nb.z.data) {
    mean += v;
    sq += static_cast<double>(v) * v;
  }
  mean /= nb.z.data.size();
  sq /= nb.z.data.size();
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(sq - mean * mean, 1.0, 0.03);
  std::vector<double> freq(4, 0.0);
  for (int y : nb.labels) freq[y] += 1.0 / nb.labels.size();
  EXPECT_NEAR(freq[0], 0.1, 0.01);
  EXPECT_NEAR(freq[1], 0.3, 0.015);
  EXPECT_EQ(freq[2], 0.0);
  EXPECT_NEAR(freq[3], 0.6, 0.015);
}

TEST(ServerOrchestrator, AdamOracles) {
  for (const auto& c : adam_cases()) EXPECT_TRUE(c.pass) << c.name << ": " << c.detail;
}

TEST(ServerOrchestrator, ZeroGradientLeavesParametersUnchanged) {
  auto p = build_model<float>(make_setup().spec, 9).params;
  const auto before = p;
  auto state = fresh_adam(p);
  for (auto mode : {AdamBiasMode::LITERAL, AdamBiasMode::STANDARD}) {
    adam_step(p, zeros_like(p), state, 0.1, 0.5, 0.999, mode);
    EXPECT_TRUE(same_values(p, before));
  }
}

TEST(ServerOrchestrator, ZeroInnerIterationsLeaveTheGeneratorUnchanged) {
  auto s = make_setup();
  s.cfg.gen_inner_iters = 0;
  auto gen = build_generator<float>(s.gen_spec, 1);
  const auto before = gen.params;
  const auto student = build_model<float>(s.spec, 2);
  generator_update(gen, nullptr, fixed_batch(s, 1), student, s.locals, s.tables, s.cfg, mode_settings(s.cfg), 1);
  EXPECT_TRUE(same_values(gen.params, before));
}

TEST(ServerOrchestrator, EveryCallStartsFromFreshMoments) {
  // With zeroed literal moments, the first step moves each coordinate by lr * g / (|g| + eps).
  auto s = make_setup();
  s.cfg.gen_inner_iters = 1;
  s.cfg.gen_lr = 1e-3;
  auto gen = build_generator<float>(s.gen_spec, 1);
  const auto student = build_model<float>(s.spec, 2);
  const auto batch = fixed_batch(s, 1);
  const auto settings = mode_settings(s.cfg);
  generator_update(gen, nullptr, batch, student, s.locals, s.tables, s.cfg, settings, 1);
  const auto mid = gen.params;
  generator_update(gen, nullptr, batch, student, s.locals, s.tables, s.cfg, settings, 1);
  long long moved = 0, full_step = 0;
  for (std::size_t a = 0; a < mid.arrays.size(); ++a) {
    if (!is_trainable(mid.arrays[a].kind)) continue;
    for (std::size_t k = 0; k < mid.arrays[a].values.size(); ++k) {
      const double d = std::abs(static_cast<double>(gen.params.arrays[a].values[k]) - mid.arrays[a].values[k]);
      EXPECT_LE(d, s.cfg.gen_lr * (1.0 + 1e-3));
      if (d > 0.0) ++moved;
      if (std::abs(d - s.cfg.gen_lr) < 1e-6) ++full_step;
    }
  }
  ASSERT_GT(moved, 0);
  EXPECT_GT(static_cast<double>(full_step) / moved, 0.9);
}

TEST(ServerOrchestrator, ZeroDistillRateLeavesTheStudentUnchanged) {
  auto s = make_setup();
  s.cfg.distill_lr = 0.0;
  s.cfg.distill_inner_iters = 3;
  auto student = build_model<float>(s.spec, 2);
  const auto before = student.params;
  const std::vector<GeneratorState<float>> gens{build_generator<float>(s.gen_spec, 1),
                                                build_generator<float>(s.gen_spec, 2)};
  const double loss = distill_update(student, gens, s.locals, s.tables, s.cfg, fixed_batch(s, 4));
  EXPECT_GT(loss, 0.0);
  EXPECT_TRUE(same_values(student.params, before));
}

TEST(ServerOrchestrator, StudentEqualToTheTeacherHasZeroDistillLoss) {
  auto s = make_setup(1);
  auto student = s.locals[0];
  const std::vector<GeneratorState<float>> gens{build_generator<float>(s.gen_spec, 1)};
  for (auto order : {KlOrder::AS_WRITTEN, KlOrder::TEACHER_FIRST}) {
    s.cfg.kl_order = order;
    EXPECT_NEAR(distill_update(student, gens, s.locals, s.tables, s.cfg, fixed_batch(s, 4)), 0.0, 1e-6);
  }
}

TEST(ServerOrchestrator, ZeroIterationsReturnTheAggregate) {
  auto s = make_setup();
  s.cfg.outer_iters = 0;
  const auto out = run_server(s.inputs(), s.cfg);
  std::vector<ParameterSet<float>> params;
  for (const auto& m : s.locals) params.push_back(m.params);
  EXPECT_TRUE(out.averaged);
  EXPECT_TRUE(out.generators.empty());
  ASSERT_EQ(out.evals.size(), 1u);
  EXPECT_EQ(out.evals[0].iteration, 0);
  EXPECT_TRUE(same_values(out.student.params, average_parameters<float>(params)));
  EXPECT_DOUBLE_EQ(out.final_accuracy, evaluate(out.student, s.test));
}

TEST(ServerOrchestrator, FedAvgOnlyIsTheExactMean) {
  auto s = make_setup();
  s.cfg.mode = RunMode::FEDAVG_ONLY;
  const auto out = run_server(s.inputs(), s.cfg);
  std::vector<ParameterSet<float>> params;
  for (const auto& m : s.locals) params.push_back(m.params);
  EXPECT_TRUE(out.generators.empty());
  EXPECT_EQ(out.evals.size(), 1u);
  EXPECT_TRUE(same_values(out.student.params, average_parameters<float>(params)));
  EXPECT_DOUBLE_EQ(out.top_accuracy, out.final_accuracy);
}

TEST(ServerOrchestrator, GeneratorCountPerMode) {
  auto s = make_setup();
  s.cfg.outer_iters = 1;
  const std::pair<RunMode, std::size_t> cases[] = {{RunMode::DFDG, 2},
                                                   {RunMode::DFAD, 1},
                                                   {RunMode::DENSE_STYLE, 1},
                                                   {RunMode::FEDFTG_STYLE, 1}};
  for (const auto& [mode, count] : cases) {
    s.cfg.mode = mode;
    const auto out = run_server(s.inputs(), s.cfg);
    EXPECT_EQ(out.generators.size(), count) << to_string(mode);
    EXPECT_EQ(out.evals.back().generator_losses.size(), count) << to_string(mode);
  }
  s.cfg.mode = RunMode::DFAD;
  EXPECT_EQ(mode_settings(s.cfg).weights.cd, 0.0);
  EXPECT_EQ(mode_settings(s.cfg).variant, s.cfg.variant);
}

TEST(ServerOrchestrator, TopAccuracyIsTheRunningMaximum) {
  auto s = make_setup();
  s.cfg.outer_iters = 4;
  std::vector<EvalPoint> seen;
  const auto out = run_server(s.inputs(), s.cfg, [&](const EvalPoint& p) { seen.push_back(p); });
  ASSERT_EQ(out.evals.size(), 5u);
  ASSERT_EQ(seen.size(), 5u);
  double best = 0.0;
  for (std::size_t k = 1; k < out.evals.size(); ++k) {
    EXPECT_EQ(out.evals[k].iteration, static_cast<int>(k));
    EXPECT_GE(out.evals[k].top_accuracy, out.evals[k - 1].top_accuracy);
    best = std::max(best, out.evals[k].accuracy);
  }
  EXPECT_DOUBLE_EQ(out.top_accuracy, best);
  EXPECT_DOUBLE_EQ(out.final_accuracy, out.evals.back().accuracy);
}

TEST(ServerOrchestrator, RunsAreDeterministic) {
  auto s = make_setup();
  const auto a = run_server(s.inputs(), s.cfg);
  const auto b = run_server(s.inputs(), s.cfg);
  EXPECT_TRUE(same_values(a.student.params, b.student.params));
  ASSERT_EQ(a.generators.size(), b.generators.size());
  for (std::size_t k = 0; k < a.generators.size(); ++k) EXPECT_TRUE(same_values(a.generators[k].params, b.generators[k].params));
  s.cfg.seed = 6;
  const auto c = run_server(s.inputs(), s.cfg);
  EXPECT_FALSE(same_values(a.student.params, c.student.params));
}

TEST(ServerOrchestrator, InvalidConfigIsRejected) {
  auto s = make_setup();
  s.cfg.batch_size = 0;
  EXPECT_THROW(run_server(s.inputs(), s.cfg), Error);
  s = make_setup();
  ServerInputs in = s.inputs();
  in.tables = nullptr;
  EXPECT_THROW(run_server(in, s.cfg), Error);
}
