#include <gtest/gtest.h>

#include <cmath>

#include "dfdg/loss_kernels.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dfdg;
using namespace dfdg::testing;

namespace {

void expect_all(const std::vector<OracleCase>& cases) {
  ASSERT_FALSE(cases.empty());
  for (const auto& c : cases) EXPECT_TRUE(c.pass) << c.name << ": " << c.detail;
}

LabelCounter random_counter(Rng& rng, int n, int c, bool allow_empty_class) {
  LabelCounter lc(n, c);
  for (auto& v : lc.counts) v = rng.uniform() < 0.3 ? 0 : static_cast<long long>(rng.uniform_int(50));
  if (!allow_empty_class) {
    for (int y = 0; y < c; ++y) lc.at(0, y) += 1;
  }
  lc.at(0, 0) += 1;
  return lc;
}

}  // namespace

TEST(LossKernels, AnalyticExamples) { expect_all(loss_formula_cases()); }

TEST(LossKernels, GradientOracles) { expect_all(gradient_cases()); }

TEST(LossKernels, AllZeroCounterIsAConfigError) {
  LabelCounter lc(2, 3);
  try {
    compute_weights(lc);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
  }
}

TEST(LossKernels, EnsembleOfUnseenClassIsAnError) {
  const ImageShape shape{1, 2, 2};
  LabelCounter lc(1, 2);
  lc.at(0, 0) = 4;
  const auto tables = compute_weights(lc);
  const std::vector<Model<double>> locals{tiny_mlp<double>(shape, 3, 2, 1)};
  const auto s = random_tensor<double>({2, 1, 2, 2}, 2);
  const std::vector<int> y{0, 1};
  EXPECT_THROW(ensemble_logits<double>(s, y, locals, tables), Error);
}

TEST(LossKernels, WeightingInvariantsOnRandomCounters) {
  Rng rng(5);
  for (int draw = 0; draw < 200; ++draw) {
    const int n = 1 + static_cast<int>(rng.uniform_int(8));
    const int c = 1 + static_cast<int>(rng.uniform_int(12));
    const auto t = compute_weights(random_counter(rng, n, c, true));
    double psum = 0.0;
    for (int y = 0; y < c; ++y) {
      double col = 0.0;
      for (int i = 0; i < n; ++i) {
        EXPECT_GE(t.at(i, y), 0.0);
        col += t.at(i, y);
      }
      EXPECT_NEAR(col, t.has_class(y) ? 1.0 : 0.0, 1e-12);
      psum += t.label_probs[y];
    }
    EXPECT_NEAR(psum, 1.0, 1e-12);
  }
}

TEST(LossKernels, SignAndRangeProperties) {
  Rng rng(11);
  const ImageShape shape{1, 3, 3};
  for (int draw = 0; draw < 100; ++draw) {
    const int c = 2 + static_cast<int>(rng.uniform_int(4));
    const int b = 1 + static_cast<int>(rng.uniform_int(6));
    const auto lc = random_counter(rng, 2, c, false);
    const auto tables = compute_weights(lc);
    const std::vector<Model<double>> locals{tiny_mlp<double>(shape, 4, c, rng.next_u64(), 3.0),
                                            tiny_mlp<double>(shape, 4, c, rng.next_u64(), 3.0)};
    const auto student = tiny_mlp<double>(shape, 4, c, rng.next_u64(), 3.0);
    const auto s = random_tensor<double>({b, 1, 3, 3}, rng.next_u64());
    const auto s_other = random_tensor<double>({b, 1, 3, 3}, rng.next_u64());
    const auto h = random_tensor<double>({b, 5}, rng.next_u64(), 0.1);
    std::vector<int> y(b);
    for (auto& v : y) v = static_cast<int>(rng.uniform_int(c));

    for (double k : kl_from_logits(student.logits(s), locals[0].logits(s))) EXPECT_GE(k, -1e-12);
    EXPECT_GE(fidelity_loss<double>(s, y, locals, tables), 0.0);
    for (auto v : {TransferVariant::DIAMOND, TransferVariant::TRIANGLE_UP, TransferVariant::TRIANGLE_DOWN}) {
      EXPECT_LE(transferability_loss<double>(s, y, locals, student, tables, v), 1e-12);
    }
    EXPECT_LE(cross_divergence_loss<double>(s, y, s_other, locals, tables), 1e-12);
    const double div = diversity_loss(s, h);
    EXPECT_GT(div, 0.0);
    EXPECT_LE(div, 1.0);

    const auto st = student.logits(s);
    const auto en = ensemble_logits<double>(s, y, locals, tables);
    const auto diamond = transfer_gate(st, en, y, TransferVariant::DIAMOND);
    const auto down = transfer_gate(st, en, y, TransferVariant::TRIANGLE_DOWN);
    const auto up = transfer_gate(st, en, y, TransferVariant::TRIANGLE_UP);
    const auto s_arg = argmax_rows(st);
    for (int i = 0; i < b; ++i) {
      EXPECT_LE(diamond[i], down[i]);
      EXPECT_LE(down[i], up[i]);
      if (s_arg[i] == y[i]) EXPECT_EQ(diamond[i], 0);
    }
  }
}

TEST(LossKernels, GateIsStableUnderInfinitesimalPerturbation) {
  const ImageShape shape{1, 3, 3};
  LabelCounter lc(1, 3);
  for (int y = 0; y < 3; ++y) lc.at(0, y) = 2;
  const auto tables = compute_weights(lc);
  const std::vector<Model<double>> locals{tiny_mlp<double>(shape, 5, 3, 71, 3.0)};
  auto student = tiny_mlp<double>(shape, 5, 3, 72, 3.0);
  const auto s = random_tensor<double>({16, 1, 3, 3}, 73);
  std::vector<int> y(16);
  for (int i = 0; i < 16; ++i) y[i] = i % 3;
  const auto en = ensemble_logits<double>(s, y, locals, tables);
  const auto before = transfer_gate(student.logits(s), en, y, TransferVariant::DIAMOND);
  for (auto& a : student.params.arrays) {
    for (auto& v : a.values) v += 1e-9;
  }
  EXPECT_EQ(transfer_gate(student.logits(s), en, y, TransferVariant::DIAMOND), before);
}

TEST(LossKernels, KlOrderSwitchSwapsArguments) {
  const ImageShape shape{1, 2, 2};
  LabelCounter lc(1, 3);
  for (int y = 0; y < 3; ++y) lc.at(0, y) = 1;
  const auto tables = compute_weights(lc);
  const std::vector<Model<double>> teacher{tiny_mlp<double>(shape, 4, 3, 81, 3.0)};
  const auto student = tiny_mlp<double>(shape, 4, 3, 82, 3.0);
  const auto s = random_tensor<double>({6, 1, 2, 2}, 83);
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  const std::vector<Tensor<double>> batches{s};
  double want = 0.0;
  for (double k : kl_from_logits(teacher[0].logits(s), student.logits(s))) want += k / 6.0;
  EXPECT_NEAR(distillation_loss<double>(batches, y, student, teacher, tables, KlOrder::TEACHER_FIRST), want, 1e-12);
  EXPECT_NE(distillation_loss<double>(batches, y, student, teacher, tables, KlOrder::AS_WRITTEN), want);
}

TEST(LossKernels, KlSurvivesSaturatedLogits) {
  Tensor<double> p({1, 3}), q({1, 3});
  p(0, 0) = 1000.0;
  q(0, 2) = 800.0;
  const auto kl = kl_from_logits(p, q);
  EXPECT_TRUE(std::isfinite(kl[0]));
  EXPECT_NEAR(kl[0], 800.0, 1e-9);
}
