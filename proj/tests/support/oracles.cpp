#include "oracles.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <span>

#include "dfdg/client_trainer.hpp"
#include "dfdg/federation_data.hpp"
#include "dfdg/loss_kernels.hpp"
#include "dfdg/server_orchestrator.hpp"
#include "test_support.hpp"

namespace dfdg::testing {
namespace {

constexpr double kLossTol = 1e-6;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void near(std::vector<OracleCase>& out, std::string name, double actual, double expected, double tol = kLossTol) {
  const bool ok = std::abs(actual - expected) <= tol;
  out.push_back({std::move(name), ok, "got " + fmt(actual) + ", expected " + fmt(expected)});
}

void truth(std::vector<OracleCase>& out, std::string name, bool ok, std::string detail = {}) {
  out.push_back({std::move(name), ok, std::move(detail)});
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape != b.shape) return INFINITY;
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data[k] - b.data[k]));
  return m;
}

LabelCounter counter(const std::vector<std::vector<long long>>& rows) {
  LabelCounter lc(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t y = 0; y < rows[i].size(); ++y) lc.at(static_cast<int>(i), static_cast<int>(y)) = rows[i][y];
  }
  return lc;
}

Tensor<double> logits_rows(const std::vector<std::vector<double>>& rows) {
  Tensor<double> t({static_cast<int>(rows.size()), static_cast<int>(rows.front().size())});
  for (std::size_t b = 0; b < rows.size(); ++b) {
    for (std::size_t c = 0; c < rows[b].size(); ++c) t(static_cast<int>(b), static_cast<int>(c)) = rows[b][c];
  }
  return t;
}

/// x with KL(uniform over 2 || softmax(x, 0)) = target, by bisection.
double two_class_offset(double target) {
  auto kl = [](double x) {
    const auto v = kl_from_logits(logits_rows({{0.0, 0.0}}), logits_rows({{x, 0.0}}));
    return v[0];
  };
  double lo = 0.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (kl(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Logits equal the two input pixels (inputs kept positive).
Model<double> pass_through() {
  auto m = tiny_mlp<double>({1, 1, 2}, 2, 2, 0);
  for (auto& a : m.params.arrays) std::fill(a.values.begin(), a.values.end(), 0.0);
  auto& w1 = m.params.arrays[0].values;
  auto& w2 = m.params.arrays[2].values;
  w1[0] = w1[3] = 1.0;
  w2[0] = w2[3] = 1.0;
  return m;
}

void weighting_cases(std::vector<OracleCase>& out) {
  const auto t = compute_weights(counter({{3, 0}, {1, 2}}));
  near(out, "compute_weights [[3,0],[1,2]]: tau[0][0]", t.at(0, 0), 0.75);
  near(out, "compute_weights [[3,0],[1,2]]: tau[1][0]", t.at(1, 0), 0.25);
  near(out, "compute_weights [[3,0],[1,2]]: tau[0][1]", t.at(0, 1), 0.0);
  near(out, "compute_weights [[3,0],[1,2]]: tau[1][1]", t.at(1, 1), 1.0);
  near(out, "compute_weights [[3,0],[1,2]]: p(0)", t.label_probs[0], 2.0 / 3.0);
  near(out, "compute_weights [[3,0],[1,2]]: p(1)", t.label_probs[1], 1.0 / 3.0);

  const auto single = compute_weights(counter({{5, 0, 2}}));
  near(out, "compute_weights single client: tau on class 0", single.at(0, 0), 1.0);
  near(out, "compute_weights single client: tau on class 2", single.at(0, 2), 1.0);
  near(out, "compute_weights single client: unseen class column", single.at(0, 1), 0.0);
  near(out, "compute_weights single client: unseen class p(y)", single.label_probs[1], 0.0);

  const auto uniform = compute_weights(counter(std::vector<std::vector<long long>>(4, std::vector<long long>(10, 7))));
  double worst_tau = 0.0, worst_p = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int y = 0; y < 10; ++y) worst_tau = std::max(worst_tau, std::abs(uniform.at(i, y) - 0.25));
  }
  for (double p : uniform.label_probs) worst_p = std::max(worst_p, std::abs(p - 0.1));
  near(out, "compute_weights uniform N=4 C=10: max |tau - 1/4|", worst_tau, 0.0);
  near(out, "compute_weights uniform N=4 C=10: max |p - 1/10|", worst_p, 0.0);
}

void ensemble_cases(std::vector<OracleCase>& out) {
  const ImageShape shape{1, 2, 2};
  const auto s = random_tensor<double>({5, 1, 2, 2}, 3);
  const std::vector<int> y{0, 1, 2, 1, 0};

  const std::vector<Model<double>> one{tiny_mlp<double>(shape, 5, 3, 21)};
  const auto t1 = compute_weights(counter({{4, 2, 1}}));
  near(out, "ensemble_logits N=1 equals the local logits",
       max_abs_diff(ensemble_logits<double>(s, y, one, t1), one[0].logits(s)), 0.0);

  const std::vector<Model<double>> twins{one[0], one[0]};
  const auto half = compute_weights(counter({{2, 2, 2}, {2, 2, 2}}));
  near(out, "ensemble_logits identical locals, tau 1/2 each",
       max_abs_diff(ensemble_logits<double>(s, y, twins, half), one[0].logits(s)), 0.0);

  const std::vector<double> a{1.0, 2.0, 3.0}, b{-1.0, 0.0, 5.0};
  const std::vector<Model<double>> consts{constant_model<double>(shape, a), constant_model<double>(shape, b)};
  const auto quarter = compute_weights(counter({{1, 1, 1}, {3, 3, 3}}));
  Tensor<double> expected({5, 3});
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 3; ++c) expected(r, c) = 0.25 * a[c] + 0.75 * b[c];
  }
  near(out, "ensemble_logits constants a, b with tau (1/4, 3/4)",
       max_abs_diff(ensemble_logits<double>(s, y, consts, quarter), expected), 0.0);
}

void kl_cases(std::vector<OracleCase>& out) {
  const auto a = logits_rows({{0.3, -1.2, 2.0}, {5.0, 5.0, 5.0}});
  const auto same = kl_from_logits(a, a);
  near(out, "kl identical logits, row 0", same[0], 0.0);
  near(out, "kl identical logits, row 1", same[1], 0.0);

  const int C = 10;
  std::vector<double> prev;
  bool increasing = true;
  double last = 0.0;
  for (double t : {1.0, 4.0, 16.0, 60.0}) {
    std::vector<double> p(C, 0.0);
    p[0] = t;
    const double v = kl_from_logits(logits_rows({p}), logits_rows({std::vector<double>(C, 0.0)}))[0];
    if (v <= last) increasing = false;
    last = v;
  }
  truth(out, "kl sharpening p against uniform q increases", increasing);
  near(out, "kl one-hot-ish p against uniform q approaches ln C", last, std::log(static_cast<double>(C)));

  // The two-class witness (2,0)/(0,2) is a coordinate swap of itself, so both
  // directions agree; asymmetry needs three classes.
  const double ab2 = kl_from_logits(logits_rows({{2.0, 0.0}}), logits_rows({{0.0, 2.0}}))[0];
  const double ba2 = kl_from_logits(logits_rows({{0.0, 2.0}}), logits_rows({{2.0, 0.0}}))[0];
  near(out, "kl two-class swap pair (2,0)/(0,2) is symmetric", ab2 - ba2, 0.0);
  const double ab3 = kl_from_logits(logits_rows({{2.0, 0.0, 0.0}}), logits_rows({{0.0, 2.0, 2.0}}))[0];
  const double ba3 = kl_from_logits(logits_rows({{0.0, 2.0, 2.0}}), logits_rows({{2.0, 0.0, 0.0}}))[0];
  truth(out, "kl asymmetry witness (2,0,0)/(0,2,2)", std::abs(ab3 - ba3) > 1e-3,
        "KL(a||b) " + fmt(ab3) + ", KL(b||a) " + fmt(ba3));
  // Closed form for the three-class pair as an independent check.
  const double pa0 = std::exp(2.0) / (std::exp(2.0) + 2.0), pa1 = 1.0 / (std::exp(2.0) + 2.0);
  const double qb0 = 1.0 / (1.0 + 2.0 * std::exp(2.0)), qb1 = std::exp(2.0) / (1.0 + 2.0 * std::exp(2.0));
  near(out, "kl three-class pair matches the closed form", ab3,
       pa0 * std::log(pa0 / qb0) + 2.0 * pa1 * std::log(pa1 / qb1));
}

void fidelity_cases(std::vector<OracleCase>& out) {
  const ImageShape shape{1, 2, 2};
  const auto s = random_tensor<double>({4, 1, 2, 2}, 5);
  const std::vector<int> y(4, 1);
  const auto tables = compute_weights(counter({{3, 3, 3}}));

  const std::vector<Model<double>> confident{constant_model<double>(shape, {0.0, 60.0, 0.0})};
  near(out, "fidelity ensemble certain of y gives 0", fidelity_loss<double>(s, y, confident, tables), 0.0);

  const std::vector<Model<double>> flat{constant_model<double>(shape, {0.7, 0.7, 0.7})};
  near(out, "fidelity uniform ensemble gives ln C", fidelity_loss<double>(s, y, flat, tables), std::log(3.0));

  const std::vector<Model<double>> one{tiny_mlp<double>(shape, 5, 3, 31)};
  const std::vector<int> mixed{0, 2, 1, 2};
  near(out, "fidelity N=1 equals cross-entropy of the single teacher",
       fidelity_loss<double>(s, mixed, one, tables), cross_entropy(one[0].logits(s), mixed));
}

void gate_cases(std::vector<OracleCase>& out) {
  int failures = 0, checked = 0;
  std::string first;
  for (int sa = 0; sa < 3; ++sa) {
    for (int ea = 0; ea < 3; ++ea) {
      for (int y = 0; y < 3; ++y) {
        std::vector<double> srow(3, 0.0), erow(3, 0.0);
        srow[sa] = 1.0;
        erow[ea] = 1.0;
        const auto st = logits_rows({srow});
        const auto en = logits_rows({erow});
        const std::vector<int> label{y};
        const int want_diamond = sa != y && ea == y;
        const int want_down = sa != ea;
        const struct {
          TransferVariant v;
          int want;
        } rows[] = {{TransferVariant::DIAMOND, want_diamond},
                    {TransferVariant::TRIANGLE_UP, 1},
                    {TransferVariant::TRIANGLE_DOWN, want_down}};
        for (const auto& r : rows) {
          const std::vector<int> sa_v{sa}, ea_v{ea};
          const int by_index = transfer_gate(sa_v, ea_v, label, r.v)[0];
          const int by_logits = transfer_gate(st, en, label, r.v)[0];
          checked += 2;
          if (by_index != r.want || by_logits != r.want) {
            ++failures;
            if (first.empty()) {
              first = to_string(r.v) + " at (student " + std::to_string(sa) + ", ensemble " + std::to_string(ea) +
                      ", y " + std::to_string(y) + ")";
            }
          }
        }
      }
    }
  }
  truth(out, "gate truth table, 27 cases x 3 variants", failures == 0,
        std::to_string(checked) + " checks" + (first.empty() ? "" : ", first mismatch " + first));

  const std::vector<int> sa{1, 0, 2}, ea{1, 1, 1}, y{1, 1, 1};
  const auto d = transfer_gate(sa, ea, y, TransferVariant::DIAMOND);
  truth(out, "gate DIAMOND is 0 when the student predicts y", d[0] == 0);
  const std::vector<int> sa2{0, 2}, ea2{2, 2}, y2{1, 1};
  const auto dd = transfer_gate(sa2, ea2, y2, TransferVariant::DIAMOND);
  const auto dn = transfer_gate(sa2, ea2, y2, TransferVariant::TRIANGLE_DOWN);
  truth(out, "gate ensemble and student both wrong: DIAMOND 0, TRIANGLE_DOWN follows argmax disagreement",
        dd[0] == 0 && dd[1] == 0 && dn[0] == 1 && dn[1] == 0);
}

void transfer_cases(std::vector<OracleCase>& out) {
  const ImageShape shape{1, 2, 2};
  const auto s = random_tensor<double>({4, 1, 2, 2}, 7);
  const std::vector<int> y(4, 0);
  const auto tables = compute_weights(counter({{2, 2}}));

  const std::vector<Model<double>> teacher{constant_model<double>(shape, {3.0, 0.0})};
  const auto right = constant_model<double>(shape, {2.0, 0.0});
  near(out, "transferability all gates 0 gives 0",
       transferability_loss<double>(s, y, teacher, right, tables, TransferVariant::DIAMOND), 0.0);

  const std::vector<Model<double>> random_teacher{tiny_mlp<double>(shape, 4, 2, 41)};
  near(out, "transferability student equal to ensemble gives 0",
       transferability_loss<double>(s, y, random_teacher, random_teacher[0], tables, TransferVariant::TRIANGLE_UP),
       0.0);

  const double x = two_class_offset(0.7);
  const std::vector<Model<double>> flat{constant_model<double>(shape, {0.0, 0.0})};
  const auto skewed = constant_model<double>(shape, {x, 0.0});
  near(out, "transferability per-sample KL 0.7 under gate 1 gives -0.7",
       transferability_loss<double>(s, y, flat, skewed, tables, TransferVariant::TRIANGLE_UP), -0.7);
}

void diversity_cases(std::vector<OracleCase>& out) {
  Tensor<double> s({3, 1, 2, 2}, 0.4), h({3, 4}, -1.0);
  near(out, "diversity identical samples gives 1", diversity_loss(s, h), 1.0);

  Tensor<double> s2({2, 1, 1, 2}), h2({2, 3});
  s2(1, 0) = 2.0;   // |s1 - s2| = 2
  h2(1, 2) = -3.0;  // |h1 - h2| = 3
  near(out, "diversity B=2, distances 2 and 3, gives exp(-3)", diversity_loss(s2, h2), std::exp(-3.0));

  auto s3 = random_tensor<double>({4, 1, 2, 2}, 9, 0.3);
  auto h3 = random_tensor<double>({4, 3}, 10, 0.3);
  const double base = diversity_loss(s3, h3);
  for (auto& v : s3.data) v *= 1.5;
  truth(out, "diversity scaling distances up lowers the loss", diversity_loss(s3, h3) < base,
        fmt(diversity_loss(s3, h3)) + " vs " + fmt(base));
}

void cross_cases(std::vector<OracleCase>& out) {
  const std::vector<int> y{0, 1, 0};
  const auto tables = compute_weights(counter({{2, 2}}));
  const std::vector<Model<double>> ident{pass_through()};

  Tensor<double> s_k({3, 1, 1, 2}, 1.0);
  near(out, "cross-divergence s_k equal to s_other gives 0",
       cross_divergence_loss<double>(s_k, y, s_k, ident, tables), 0.0);

  const double x = two_class_offset(1.2);
  Tensor<double> s_o({3, 1, 1, 2}, 1.0);
  for (int b = 0; b < 3; ++b) s_o(b, 0) = 1.0 + x;
  near(out, "cross-divergence per-sample KL 1.2 gives -1.2", cross_divergence_loss<double>(s_k, y, s_o, ident, tables),
       -1.2);

  const std::vector<Model<double>> constant{constant_model<double>({1, 1, 2}, {0.4, -2.0})};
  const auto r1 = random_tensor<double>({3, 1, 1, 2}, 11), r2 = random_tensor<double>({3, 1, 1, 2}, 12);
  near(out, "cross-divergence constant teacher gives 0", cross_divergence_loss<double>(r1, y, r2, constant, tables),
       0.0);
}

void objective_cases(std::vector<OracleCase>& out) {
  const ImageShape shape{1, 2, 2};
  const auto s = random_tensor<double>({6, 1, 2, 2}, 13, 0.5);
  const auto s_other = random_tensor<double>({6, 1, 2, 2}, 14, 0.5);
  const auto h = random_tensor<double>({6, 3}, 15, 0.2);
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  const std::vector<Model<double>> locals{tiny_mlp<double>(shape, 5, 3, 51), tiny_mlp<double>(shape, 5, 3, 52)};
  const auto student = tiny_mlp<double>(shape, 5, 3, 53);
  const auto tables = compute_weights(counter({{4, 1, 2}, {1, 3, 5}}));
  const auto v = TransferVariant::TRIANGLE_UP;

  const double fid = fidelity_loss<double>(s, y, locals, tables);
  const double tran = transferability_loss<double>(s, y, locals, student, tables, v);
  const double div = diversity_loss(s, h);
  const double cd = cross_divergence_loss<double>(s, y, s_other, locals, tables);

  near(out, "generator objective with zero weights equals fidelity",
       generator_objective<double>(s, y, h, &s_other, student, locals, tables, {0.0, 0.0, 0.0}, v), fid);
  near(out, "generator objective with unit weights is the sum of the four terms",
       generator_objective<double>(s, y, h, &s_other, student, locals, tables, {1.0, 1.0, 1.0}, v),
       fid + tran + div + cd);
  near(out, "generator objective single generator with beta_cd 0 is fidelity + tran + div",
       generator_objective<double>(s, y, h, nullptr, student, locals, tables, {1.0, 1.0, 0.0}, v), fid + tran + div);
}

void distill_cases(std::vector<OracleCase>& out) {
  const ImageShape shape{1, 2, 2};
  const auto s1 = random_tensor<double>({5, 1, 2, 2}, 17);
  const auto s2 = random_tensor<double>({5, 1, 2, 2}, 18);
  const std::vector<int> y{0, 1, 1, 0, 1};
  const auto tables = compute_weights(counter({{3, 2}}));
  const std::vector<Model<double>> teacher{tiny_mlp<double>(shape, 4, 2, 61)};
  const auto student = tiny_mlp<double>(shape, 4, 2, 62);

  const std::vector<Tensor<double>> both{s1, s2};
  near(out, "distillation student equal to the ensemble gives 0",
       distillation_loss<double>(both, y, teacher[0], teacher, tables), 0.0);

  const std::vector<Tensor<double>> single{s1};
  const auto kl = kl_from_logits(student.logits(s1), teacher[0].logits(s1));
  double mean = 0.0;
  for (double k : kl) mean += k / kl.size();
  near(out, "distillation single generator is one KL term", distillation_loss<double>(single, y, student, teacher, tables),
       mean);

  const std::vector<Tensor<double>> doubled{s1, s1};
  near(out, "distillation dual mode with s_2 = s_1 doubles the loss",
       distillation_loss<double>(doubled, y, student, teacher, tables), 2.0 * mean);
}

// ---- gradient oracles ----------------------------------------------------

struct GenFixture {
  GeneratorState<double> gen;
  GeneratorState<double> other;
  std::vector<Model<double>> locals;
  Model<double> student;
  WeightingTables tables;
  Tensor<double> z;
  std::vector<int> labels;
  Tensor<double> other_ensemble;

  GenFixture() {
    GeneratorSpec spec;
    spec.image = {1, 16, 16};
    spec.num_classes = 3;
    spec.noise_dim = 4;
    spec.merge = MergeOp::MUL;
    gen = build_generator<double>(spec, 101);
    other = build_generator<double>(spec, 102);
    locals = {tiny_mlp<double>(spec.image, 6, 3, 103, 4.0), tiny_mlp<double>(spec.image, 6, 3, 104, 4.0)};
    student = tiny_mlp<double>(spec.image, 6, 3, 105, 4.0);
    tables = compute_weights(counter({{5, 1, 2}, {1, 4, 3}}));
    z = random_tensor<double>({6, 4}, 106, 0.05);
    labels = {0, 1, 2, 2, 1, 0};
    const auto s_other = generate(other, z, labels);
    other_ensemble = ensemble_logits<double>(s_other, labels, locals, tables);
  }

  GeneratorStepContext<double> context(GenLossWeights w, TransferVariant v = TransferVariant::TRIANGLE_UP) const {
    GeneratorStepContext<double> ctx;
    ctx.student = &student;
    ctx.locals = locals;
    ctx.tables = &tables;
    ctx.weights = w;
    ctx.variant = v;
    ctx.other_ensemble = &other_ensemble;
    return ctx;
  }

  ParameterSet<double> grad(GenLossWeights w, TransferVariant v = TransferVariant::TRIANGLE_UP) const {
    auto g = zeros_like(gen.params);
    generator_loss_and_grad(gen, z, labels, context(w, v), &g);
    return g;
  }
};

ParameterSet<double> difference(const ParameterSet<double>& a, const ParameterSet<double>& b) {
  auto out = a;
  for (std::size_t i = 0; i < out.arrays.size(); ++i) {
    for (std::size_t k = 0; k < out.arrays[i].values.size(); ++k) out.arrays[i].values[k] -= b.arrays[i].values[k];
  }
  return out;
}

void grad_case(std::vector<OracleCase>& out, const std::string& name, const GradCheck& r, double tolerance) {
  out.push_back({name, r.checked > 0 && r.worst <= tolerance,
                 std::to_string(r.checked) + " coordinates, worst relative error " + fmt(r.worst) +
                     (r.where.empty() ? "" : " at " + r.where)});
}

}  // namespace

std::vector<OracleCase> loss_formula_cases() {
  std::vector<OracleCase> out;
  weighting_cases(out);
  ensemble_cases(out);
  kl_cases(out);
  fidelity_cases(out);
  gate_cases(out);
  transfer_cases(out);
  diversity_cases(out);
  cross_cases(out);
  objective_cases(out);
  distill_cases(out);
  return out;
}

std::vector<OracleCase> gradient_cases(double tolerance) {
  std::vector<OracleCase> out;
  GenFixture f;
  const GenLossWeights none{0.0, 0.0, 0.0};
  auto terms = [&](GenLossWeights w) {
    return generator_loss_and_grad<double>(f.gen, f.z, f.labels, f.context(w), nullptr);
  };

  const auto g_fid = f.grad(none);
  grad_case(out, "L_fid wrt generator (d=4)",
            check_gradient(f.gen.params, g_fid, [&] { return terms(none).fidelity; }), tolerance);

  const GenLossWeights tran{1.0, 0.0, 0.0};
  const auto probe = terms(tran);
  grad_case(out, "L_tran wrt generator (d=4, gate fixed)",
            check_gradient(f.gen.params, difference(f.grad(tran), g_fid), [&] { return terms(tran).transfer; }),
            tolerance);
  if (probe.gated == 0) out.back() = {out.back().name, false, "no sample passed the gate"};

  const GenLossWeights div{0.0, 1.0, 0.0};
  const double div_value = terms(div).diversity;
  grad_case(out, "L_div wrt generator (d=4)",
            check_gradient(f.gen.params, difference(f.grad(div), g_fid), [&] { return terms(div).diversity; }),
            tolerance);
  if (!(div_value > 1e-3 && div_value < 0.999)) {
    out.back() = {out.back().name, false, "diversity value " + fmt(div_value) + " is saturated; fixture too weak"};
  }

  const GenLossWeights cd{0.0, 0.0, 1.0};
  grad_case(out, "L_cd wrt generator (d=4)",
            check_gradient(f.gen.params, difference(f.grad(cd), g_fid), [&] { return terms(cd).cross; }), tolerance);

  // Student side: two synthetic batches from the two generators.
  std::vector<Tensor<double>> batches{generate(f.gen, f.z, f.labels), generate(f.other, f.z, f.labels)};
  for (KlOrder order : {KlOrder::AS_WRITTEN, KlOrder::TEACHER_FIRST}) {
    Model<double> student = f.student;
    auto g = zeros_like(student.params);
    distillation_loss_and_grad<double>(student, batches, f.labels, f.locals, f.tables, order, Mode::Eval, &g);
    grad_case(out, "L_dmd wrt MLP student (" + to_string(order) + ")",
              check_gradient(student.params, g,
                             [&] { return distillation_loss<double>(batches, f.labels, student, f.locals, f.tables, order); }),
              tolerance);
  }

  ModelSpec cnn;
  cnn.input = {1, 16, 16};
  cnn.num_classes = 3;
  cnn.base_width = 2;
  Model<double> conv_student = build_model<double>(cnn, 107);
  auto g = zeros_like(conv_student.params);
  distillation_loss_and_grad<double>(conv_student, batches, f.labels, f.locals, f.tables, KlOrder::AS_WRITTEN,
                                     Mode::Eval, &g);
  grad_case(out, "L_dmd wrt CNN student (eval BatchNorm)",
            check_gradient(conv_student.params, g,
                           [&] {
                             return distillation_loss<double>(batches, f.labels, conv_student, f.locals, f.tables,
                                                              KlOrder::AS_WRITTEN);
                           }),
            tolerance);
  return out;
}

std::vector<OracleCase> partition_property_cases(int draws) {
  std::vector<OracleCase> out;
  const DatasetHandle toy = make_synth_toy();
  std::vector<long long> global(toy.num_classes, 0);
  for (int y : toy.train.labels) ++global[y];

  ModelSpec spec;
  spec.input = toy.image_shape;
  spec.num_classes = toy.num_classes;
  spec.base_width = 1;
  const auto init = build_model<float>(spec, 5).params;
  ClientConfig one_epoch;
  one_epoch.local_epochs = 1;
  one_epoch.learning_rate = 0.0;
  one_epoch.batch_size = 128;

  Rng rng(20240613);
  int cover = 0, weights = 0, counters = 0, deterministic = 0;
  std::string first_failure;
  auto note = [&](bool ok, const std::string& what) {
    if (!ok && first_failure.empty()) first_failure = what;
    return ok;
  };
  for (int d = 0; d < draws; ++d) {
    const int n = 1 + static_cast<int>(rng.uniform_int(20));
    const double omega = std::pow(10.0, -2.0 + 4.0 * rng.uniform());
    const std::uint64_t seed = rng.uniform_int(1000000);
    const std::string where = "draw " + std::to_string(d) + " (N=" + std::to_string(n) + ", omega=" + fmt(omega) +
                              ", seed=" + std::to_string(seed) + ")";
    const auto fed = dirichlet_partition(toy, n, omega, seed);

    std::vector<int> seen(toy.train.size(), 0);
    std::size_t total = 0;
    bool ok = static_cast<int>(fed.client_indices.size()) == n;
    for (const auto& c : fed.client_indices) {
      ok = ok && !c.empty();
      total += c.size();
      for (int i : c) ok = ok && i >= 0 && i < toy.train.size() && seen[i]++ == 0;
    }
    ok = ok && total == static_cast<std::size_t>(toy.train.size());
    cover += note(ok, "cover/disjointness at " + where);

    const auto hist = true_label_histogram(fed, toy);
    const auto tables = compute_weights(hist);
    bool wok = true;
    double psum = 0.0;
    for (int y = 0; y < toy.num_classes; ++y) {
      long long col = 0;
      double tsum = 0.0;
      for (int i = 0; i < n; ++i) {
        col += hist.at(i, y);
        tsum += tables.at(i, y);
        wok = wok && tables.at(i, y) >= 0.0;
      }
      wok = wok && col == global[y] && std::abs(tsum - (global[y] > 0 ? 1.0 : 0.0)) <= 1e-12;
      psum += tables.label_probs[y];
    }
    wok = wok && std::abs(psum - 1.0) <= 1e-12;
    weights += note(wok, "weighting tables at " + where);

    bool cok = true;
    for (int i = 0; i < n; ++i) {
      one_epoch.seed = seed + static_cast<std::uint64_t>(i);
      const auto r = client_update(init, client_slice(toy, fed.client_indices[i]), toy.num_classes, one_epoch, i);
      for (int y = 0; y < toy.num_classes; ++y) cok = cok && r.label_counts[y] == hist.at(i, y);
    }
    counters += note(cok, "label counter at " + where);

    const auto again = dirichlet_partition(toy, n, omega, seed);
    deterministic += note(again.client_indices == fed.client_indices, "determinism at " + where);
  }
  const std::string tail = first_failure.empty() ? "" : "; first failure " + first_failure;
  const auto count = [&](int k) { return std::to_string(k) + "/" + std::to_string(draws) + " draws" + tail; };
  out.push_back({"partitions are exact disjoint covers with nonempty clients", cover == draws, count(cover)});
  out.push_back({"tau columns sum to 1 on seen classes and p(y) sums to 1", weights == draws, count(weights)});
  out.push_back({"label counter after one epoch equals the true histogram", counters == draws, count(counters)});
  out.push_back({"partition is a deterministic function of (N, omega, seed)", deterministic == draws,
                 count(deterministic)});
  return out;
}

std::vector<OracleCase> budget_cases() {
  std::vector<OracleCase> out;
  const double h = 0.5, q = 0.25;
  const struct {
    int rho;
    std::vector<double> want;
  } rows[] = {{0, {1, 1, 1, 1, 1, 1, 1, 1, 1, 1}},
              {2, {1, 1, 1, 1, h, h, h, h, h, q}},
              {3, {1, 1, 1, h, h, h, q, q, q, q}},
              {4, {1, 1, h, h, q, q, q, q, q, q}}};
  for (const auto& r : rows) {
    const auto plan = budget_plan(10, 2, r.rho);
    std::string got;
    for (double v : plan.ratios) got += fmt(v) + " ";
    out.push_back({"budget N=10 sigma=2 rho=" + std::to_string(r.rho), plan.ratios == r.want, "got " + got});
  }
  return out;
}

std::vector<OracleCase> adam_cases(double tolerance) {
  std::vector<OracleCase> out;
  const double lr = 2e-4, b1 = 0.5, b2 = 0.999;

  ParameterSet<float> params;
  params.arrays.push_back({"w", {64}, ParamKind::Weight, {}});
  params.arrays.push_back({"running", {4}, ParamKind::RunningMean, {}});
  Rng rng(77);
  for (int k = 0; k < 64; ++k) params.arrays[0].values.push_back(static_cast<float>(rng.normal()));
  params.arrays[1].values = {1.0f, 2.0f, 3.0f, 4.0f};
  auto grads = zeros_like(params);
  for (int k = 0; k < 64; ++k) grads.arrays[0].values[k] = static_cast<float>(rng.normal() * std::pow(10.0, k % 7 - 3));
  grads.arrays[0].values[5] = 0.0f;
  grads.arrays[1].values = {9.0f, 9.0f, 9.0f, 9.0f};

  auto updated = params;
  auto state = fresh_adam(updated);
  adam_step(updated, grads, state, lr, b1, b2, AdamBiasMode::LITERAL);
  double worst = 0.0, worst_sign = 0.0;
  for (int k = 0; k < 64; ++k) {
    const double w = params.arrays[0].values[k], g = grads.arrays[0].values[k];
    const double want = w - lr * g / (std::abs(g) + 1e-8);
    worst = std::max(worst, std::abs(updated.arrays[0].values[k] - want));
    const double sign = g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0);
    if (std::abs(g) >= 1e-3) worst_sign = std::max(worst_sign, std::abs(updated.arrays[0].values[k] - (w - lr * sign)));
  }
  out.push_back({"adam_step first literal step equals -lr * g / (|g| + 1e-8)", worst <= tolerance,
                 "max deviation " + fmt(worst)});
  out.push_back({"adam_step first literal step is -lr * sign(g) for |g| >= 1e-3", worst_sign <= tolerance,
                 "max deviation " + fmt(worst_sign)});
  out.push_back({"adam_step leaves running statistics alone", updated.arrays[1].values == params.arrays[1].values, ""});

  // Inside Generator_Update with I_g = 1.
  GeneratorSpec spec;
  spec.image = {1, 16, 16};
  spec.num_classes = 3;
  spec.noise_dim = 4;
  auto gen = build_generator<float>(spec, 201);
  const std::vector<Model<float>> locals{tiny_mlp<float>(spec.image, 6, 3, 202), tiny_mlp<float>(spec.image, 6, 3, 203)};
  const auto student = tiny_mlp<float>(spec.image, 6, 3, 204);
  const auto tables = compute_weights(counter({{5, 1, 2}, {1, 4, 3}}));
  ServerConfig cfg;
  cfg.mode = RunMode::DFAD;
  cfg.gen_inner_iters = 1;
  cfg.gen_lr = lr;
  cfg.batch_size = 8;
  const auto settings = mode_settings(cfg);
  Rng noise(205);
  const NoiseBatch batch = sample_noise_labels(cfg.batch_size, spec.noise_dim, tables, noise);

  GeneratorStepContext<float> ctx;
  ctx.student = &student;
  ctx.locals = locals;
  ctx.tables = &tables;
  ctx.weights = settings.weights;
  ctx.variant = settings.variant;
  auto g = zeros_like(gen.params);
  generator_loss_and_grad(gen, batch.z, batch.labels, ctx, &g);
  const auto before = gen.params;
  generator_update(gen, nullptr, batch, student, locals, tables, cfg, settings, 1);
  double worst_gen = 0.0;
  std::size_t moved = 0;
  for (std::size_t a = 0; a < before.arrays.size(); ++a) {
    for (std::size_t k = 0; k < before.arrays[a].values.size(); ++k) {
      const double w = before.arrays[a].values[k];
      const double gk = g.arrays[a].values[k];
      const double want = is_trainable(before.arrays[a].kind) ? w - lr * gk / (std::abs(gk) + 1e-8) : w;
      worst_gen = std::max(worst_gen, std::abs(gen.params.arrays[a].values[k] - want));
      moved += gen.params.arrays[a].values[k] != before.arrays[a].values[k];
    }
  }
  out.push_back({"one-step generator update equals the hand-computed literal Adam step",
                 worst_gen <= tolerance && moved > 0,
                 "max deviation " + fmt(worst_gen) + " over " + std::to_string(gen.params.scalar_count(false)) +
                     " scalars, " + std::to_string(moved) + " moved"});
  return out;
}

}  // namespace dfdg::testing
