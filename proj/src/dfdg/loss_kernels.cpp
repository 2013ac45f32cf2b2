#include "dfdg/loss_kernels.hpp"

#include <cmath>
#include <numeric>

#include "dfdg/enum_names.hpp"

namespace dfdg {
namespace {

constexpr NameTable<TransferVariant, 3> kVariants{{
    {"DIAMOND", TransferVariant::DIAMOND},
    {"TRIANGLE_UP", TransferVariant::TRIANGLE_UP},
    {"TRIANGLE_DOWN", TransferVariant::TRIANGLE_DOWN},
}};

constexpr NameTable<KlOrder, 2> kKlOrders{{
    {"AS_WRITTEN", KlOrder::AS_WRITTEN},
    {"TEACHER_FIRST", KlOrder::TEACHER_FIRST},
}};

void check_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    fail(ErrorCode::InvalidArgument, std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

template <typename T>
void log_softmax_row(const T* x, int n, std::vector<double>& out) {
  out.resize(n);
  double m = x[0];
  for (int j = 1; j < n; ++j) m = std::max(m, static_cast<double>(x[j]));
  double sum = 0.0;
  for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(x[j]) - m);
  const double lse = m + std::log(sum);
  for (int j = 0; j < n; ++j) out[j] = static_cast<double>(x[j]) - lse;
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
struct TeacherPass {
  std::vector<Tensor<T>> logits;
  std::vector<Tape<T>> tapes;
  std::vector<char> active;
};

/// Forward of every teacher whose weight is nonzero for some label in the batch.
template <typename T>
TeacherPass<T> run_teachers(const Tensor<T>& s, std::span<const int> labels, std::span<const Model<T>> locals,
                            const WeightingTables& tables, bool record) {
  require(static_cast<int>(locals.size()) == tables.num_clients, ErrorCode::InvalidArgument,
          "teacher count does not match the weighting tables");
  TeacherPass<T> pass;
  const int N = static_cast<int>(locals.size());
  pass.logits.resize(N);
  pass.tapes.resize(record ? N : 0);
  pass.active.assign(N, 0);
  for (int i = 0; i < N; ++i) {
    for (int y : labels) {
      if (tables.at(i, y) != 0.0) {
        pass.active[i] = 1;
        break;
      }
    }
    if (!pass.active[i]) {
      pass.logits[i] = Tensor<T>({s.batch(), tables.num_classes});
      continue;
    }
    pass.logits[i] = locals[i].logits(s, Mode::Eval, record ? &pass.tapes[i] : nullptr);
  }
  return pass;
}

/// d loss / d s through the teachers, given d loss / d ensemble.
template <typename T>
Tensor<T> teachers_backward(const TeacherPass<T>& pass, std::span<const int> labels, std::span<const Model<T>> locals,
                            const WeightingTables& tables, const Tensor<T>& d_ensemble, const Shape& s_shape) {
  Tensor<T> ds(s_shape);
  const int B = d_ensemble.dim(0);
  const int C = d_ensemble.dim(1);
  for (std::size_t i = 0; i < locals.size(); ++i) {
    if (!pass.active[i]) continue;
    Tensor<T> dy({B, C});
    for (int b = 0; b < B; ++b) {
      const T w = static_cast<T>(tables.at(static_cast<int>(i), labels[b]));
      for (int c = 0; c < C; ++c) dy(b, c) = w * d_ensemble(b, c);
    }
    add_into(ds, backward(*locals[i].graph, locals[i].params, pass.tapes[i], dy, static_cast<ParameterSet<T>*>(nullptr), true));
  }
  return ds;
}

double batch_mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(TransferVariant v) { return name_of(kVariants, v); }
std::string to_string(KlOrder v) { return name_of(kKlOrders, v); }
TransferVariant parse_transfer_variant(std::string_view s) { return lookup_name(kVariants, s, "transfer variant"); }
KlOrder parse_kl_order(std::string_view s) { return lookup_name(kKlOrders, s, "KL order"); }

WeightingTables compute_weights(const LabelCounter& counter) {
  const int N = counter.num_clients;
  const int C = counter.num_classes;
  require(N >= 1 && C >= 1, ErrorCode::Config, "label counter has no clients or classes");
  std::vector<long long> per_class(C, 0);
  long long total = 0;
  for (int i = 0; i < N; ++i) {
    for (int y = 0; y < C; ++y) {
      require(counter.at(i, y) >= 0, ErrorCode::Config, "negative label count");
      per_class[y] += counter.at(i, y);
    }
  }
  for (long long n : per_class) total += n;
  require(total > 0, ErrorCode::Config, "label counter is all zero");

  WeightingTables t;
  t.num_clients = N;
  t.num_classes = C;
  t.tau.assign(static_cast<std::size_t>(N) * C, 0.0);
  t.label_probs.assign(C, 0.0);
  for (int y = 0; y < C; ++y) {
    if (per_class[y] == 0) continue;
    t.label_probs[y] = static_cast<double>(per_class[y]) / static_cast<double>(total);
    for (int i = 0; i < N; ++i) {
      t.tau[static_cast<std::size_t>(i) * C + y] =
          static_cast<double>(counter.at(i, y)) / static_cast<double>(per_class[y]);
    }
  }
  return t;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  std::vector<int> out(logits.batch());
  const int C = static_cast<int>(logits.row_size());
  for (int b = 0; b < logits.batch(); ++b) {
    const T* r = logits.row(b);
    out[b] = static_cast<int>(std::max_element(r, r + C) - r);
  }
  return out;
}

template <typename T>
std::vector<double> kl_from_logits(const Tensor<T>& p_logits, const Tensor<T>& q_logits) {
  check_same_shape(p_logits.shape, q_logits.shape, "KL");
  const int B = p_logits.batch();
  const int C = static_cast<int>(p_logits.row_size());
  std::vector<double> out(B), lp, lq;
  for (int b = 0; b < B; ++b) {
    log_softmax_row(p_logits.row(b), C, lp);
    log_softmax_row(q_logits.row(b), C, lq);
    double kl = 0.0;
    for (int c = 0; c < C; ++c) kl += std::exp(lp[c]) * (lp[c] - lq[c]);
    out[b] = std::max(kl, 0.0);
  }
  return out;
}

template <typename T>
void kl_backward(const Tensor<T>& p_logits, const Tensor<T>& q_logits, std::span<const double> scale, Tensor<T>* dp,
                 Tensor<T>* dq) {
  check_same_shape(p_logits.shape, q_logits.shape, "KL");
  const int B = p_logits.batch();
  const int C = static_cast<int>(p_logits.row_size());
  std::vector<double> lp, lq;
  for (int b = 0; b < B; ++b) {
    if (scale[b] == 0.0) continue;
    log_softmax_row(p_logits.row(b), C, lp);
    log_softmax_row(q_logits.row(b), C, lq);
    double kl = 0.0;
    for (int c = 0; c < C; ++c) kl += std::exp(lp[c]) * (lp[c] - lq[c]);
    for (int c = 0; c < C; ++c) {
      const double p = std::exp(lp[c]);
      if (dp) (*dp)(b, c) += static_cast<T>(scale[b] * p * (lp[c] - lq[c] - kl));
      if (dq) (*dq)(b, c) += static_cast<T>(scale[b] * (std::exp(lq[c]) - p));
    }
  }
}

template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* dlogits) {
  const int B = logits.batch();
  const int C = static_cast<int>(logits.row_size());
  require(static_cast<int>(labels.size()) == B, ErrorCode::InvalidArgument, "one label per logit row");
  std::vector<double> lp;
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    log_softmax_row(logits.row(b), C, lp);
    total -= lp[labels[b]];
    if (dlogits) {
      for (int c = 0; c < C; ++c) {
        (*dlogits)(b, c) += static_cast<T>((std::exp(lp[c]) - (c == labels[b] ? 1.0 : 0.0)) / B);
      }
    }
  }
  return total / B;
}

template <typename T>
Tensor<T> combine_logits(std::span<const Tensor<T>> teacher_logits, std::span<const int> labels,
                         const WeightingTables& tables) {
  require(static_cast<int>(teacher_logits.size()) == tables.num_clients, ErrorCode::InvalidArgument,
          "teacher count does not match the weighting tables");
  const int B = static_cast<int>(labels.size());
  const int C = tables.num_classes;
  for (int y : labels) {
    if (!(y >= 0 && y < C)) {
      fail(ErrorCode::InvalidArgument, "label out of range: " + std::to_string(y));
    }
    if (!(tables.has_class(y))) {
      fail(ErrorCode::InvalidArgument, "no client holds class " + std::to_string(y) + "; cannot form its ensemble");
    }
  }
  Tensor<T> out({B, C});
  for (std::size_t i = 0; i < teacher_logits.size(); ++i) {
    const auto& li = teacher_logits[i];
    require(li.batch() == B && static_cast<int>(li.row_size()) == C, ErrorCode::InvalidArgument,
            "teacher logits have the wrong shape");
    for (int b = 0; b < B; ++b) {
      const T w = static_cast<T>(tables.at(static_cast<int>(i), labels[b]));
      if (w == T{0}) continue;
      for (int c = 0; c < C; ++c) out(b, c) += w * li(b, c);
    }
  }
  return out;
}

std::vector<int> transfer_gate(std::span<const int> student_argmax, std::span<const int> ensemble_argmax,
                               std::span<const int> labels, TransferVariant variant) {
  std::vector<int> eps(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    switch (variant) {
      case TransferVariant::DIAMOND:
        eps[b] = student_argmax[b] != labels[b] && ensemble_argmax[b] == labels[b];
        break;
      case TransferVariant::TRIANGLE_UP:
        eps[b] = 1;
        break;
      case TransferVariant::TRIANGLE_DOWN:
        eps[b] = student_argmax[b] != ensemble_argmax[b];
        break;
    }
  }
  return eps;
}

template <typename T>
std::vector<int> transfer_gate(const Tensor<T>& student_logits, const Tensor<T>& ensemble_logits,
                               std::span<const int> labels, TransferVariant variant) {
  check_same_shape(student_logits.shape, ensemble_logits.shape, "transfer gate");
  return transfer_gate(argmax_rows(student_logits), argmax_rows(ensemble_logits), labels, variant);
}

template <typename T>
double diversity_loss(const Tensor<T>& s, const Tensor<T>& h, Tensor<T>* ds, Tensor<T>* dh) {
  const int B = s.batch();
  require(B >= 1 && h.batch() == B, ErrorCode::InvalidArgument, "diversity loss needs matching nonempty batches");
  const std::size_t ns = s.row_size();
  const std::size_t nh = h.row_size();
  std::vector<double> ds_norm(static_cast<std::size_t>(B) * B, 0.0), dh_norm(ds_norm.size(), 0.0);
  auto dist = [](const T* a, const T* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
      acc += d * d;
    }
    return std::sqrt(acc);
  };
  double sum = 0.0;
  for (int j = 0; j < B; ++j) {
    for (int l = j + 1; l < B; ++l) {
      const double a = dist(s.row(j), s.row(l), ns);
      const double c = dist(h.row(j), h.row(l), nh);
      ds_norm[static_cast<std::size_t>(j) * B + l] = a;
      dh_norm[static_cast<std::size_t>(j) * B + l] = c;
      sum += 2.0 * a * c;  // (j, l) and (l, j)
    }
  }
  const double bb = static_cast<double>(B) * B;
  const double loss = std::exp(-sum / bb);
  if (!ds && !dh) return loss;
  // dL/dS = -L / B^2; each unordered pair contributes 2 a c to S.
  const double g = -loss / bb * 2.0;
  for (int j = 0; j < B; ++j) {
    for (int l = j + 1; l < B; ++l) {
      const double a = ds_norm[static_cast<std::size_t>(j) * B + l];
      const double c = dh_norm[static_cast<std::size_t>(j) * B + l];
      if (ds && a > 0.0 && c > 0.0) {
        const double f = g * c / a;
        T* rj = ds->row(j);
        T* rl = ds->row(l);
        const T* sj = s.row(j);
        const T* sl = s.row(l);
        for (std::size_t k = 0; k < ns; ++k) {
          const T v = static_cast<T>(f * (static_cast<double>(sj[k]) - static_cast<double>(sl[k])));
          rj[k] += v;
          rl[k] -= v;
        }
      }
      if (dh && a > 0.0 && c > 0.0) {
        const double f = g * a / c;
        T* rj = dh->row(j);
        T* rl = dh->row(l);
        const T* hj = h.row(j);
        const T* hl = h.row(l);
        for (std::size_t k = 0; k < nh; ++k) {
          const T v = static_cast<T>(f * (static_cast<double>(hj[k]) - static_cast<double>(hl[k])));
          rj[k] += v;
          rl[k] -= v;
        }
      }
    }
  }
  return loss;
}

template <typename T>
Tensor<T> ensemble_logits(const Tensor<T>& s, std::span<const int> labels, std::span<const Model<T>> locals,
                          const WeightingTables& tables) {
  require(static_cast<int>(labels.size()) == s.batch(), ErrorCode::InvalidArgument, "one label per sample");
  auto pass = run_teachers(s, labels, locals, tables, false);
  return combine_logits<T>(pass.logits, labels, tables);
}

template <typename T>
double fidelity_loss(const Tensor<T>& s, std::span<const int> labels, std::span<const Model<T>> locals,
                     const WeightingTables& tables) {
  return cross_entropy(ensemble_logits(s, labels, locals, tables), labels);
}

template <typename T>
double transferability_loss(const Tensor<T>& s, std::span<const int> labels, std::span<const Model<T>> locals,
                            const Model<T>& student, const WeightingTables& tables, TransferVariant variant) {
  const Tensor<T> ens = ensemble_logits(s, labels, locals, tables);
  const Tensor<T> st = student.logits(s);
  const auto eps = transfer_gate(st, ens, labels, variant);
  const auto kl = kl_from_logits(ens, st);
  double acc = 0.0;
  for (std::size_t b = 0; b < kl.size(); ++b) acc += eps[b] * kl[b];
  return -acc / static_cast<double>(kl.size());
}

template <typename T>
double cross_divergence_loss(const Tensor<T>& s_k, std::span<const int> labels, const Tensor<T>& s_other,
                             std::span<const Model<T>> locals, const WeightingTables& tables) {
  check_same_shape(s_k.shape, s_other.shape, "cross-divergence");
  return -batch_mean(kl_from_logits(ensemble_logits(s_k, labels, locals, tables),
                                    ensemble_logits(s_other, labels, locals, tables)));
}

template <typename T>
double generator_objective(const Tensor<T>& s_k, std::span<const int> labels, const Tensor<T>& h_k,
                           const Tensor<T>* s_other, const Model<T>& student, std::span<const Model<T>> locals,
                           const WeightingTables& tables, const GenLossWeights& weights, TransferVariant variant) {
  double total = fidelity_loss(s_k, labels, locals, tables);
  if (weights.tran != 0.0) total += weights.tran * transferability_loss(s_k, labels, locals, student, tables, variant);
  if (weights.div != 0.0) total += weights.div * diversity_loss(s_k, h_k);
  if (weights.cd != 0.0 && s_other) total += weights.cd * cross_divergence_loss(s_k, labels, *s_other, locals, tables);
  return total;
}

template <typename T>
double distillation_loss(std::span<const Tensor<T>> batches, std::span<const int> labels, const Model<T>& student,
                         std::span<const Model<T>> locals, const WeightingTables& tables, KlOrder order) {
  double total = 0.0;
  for (const auto& s : batches) {
    const Tensor<T> st = student.logits(s);
    const Tensor<T> ens = ensemble_logits(s, labels, locals, tables);
    total += batch_mean(order == KlOrder::AS_WRITTEN ? kl_from_logits(st, ens) : kl_from_logits(ens, st));
  }
  return total;
}

template <typename T>
GeneratorLossTerms generator_loss_and_grad(const GeneratorState<T>& gen, const Tensor<T>& z,
                                           std::span<const int> labels, const GeneratorStepContext<T>& ctx,
                                           ParameterSet<T>* grads, Tensor<T>* s_out) {
  require(ctx.student && ctx.tables, ErrorCode::InvalidArgument, "generator step needs a student and tables");
  const bool need_grad = grads != nullptr;
  const WeightingTables& tables = *ctx.tables;
  const int B = z.batch();

  Tape<T> gtape;
  Tensor<T> h;
  const Tensor<T> s = generate(gen, z, labels, need_grad ? &gtape : nullptr, &h);
  const auto pass = run_teachers(s, labels, ctx.locals, tables, need_grad);
  const Tensor<T> ens = combine_logits<T>(pass.logits, labels, tables);

  GeneratorLossTerms terms;
  Tensor<T> d_ens({B, tables.num_classes});
  terms.fidelity = cross_entropy(ens, labels, need_grad ? &d_ens : nullptr);

  Tensor<T> ds(s.shape);
  if (ctx.weights.tran != 0.0) {
    Tape<T> stape;
    const Tensor<T> st = ctx.student->logits(s, Mode::Eval, need_grad ? &stape : nullptr);
    const auto eps = transfer_gate(st, ens, labels, ctx.variant);
    const auto kl = kl_from_logits(ens, st);
    double acc = 0.0;
    std::vector<double> scale(B, 0.0);
    for (int b = 0; b < B; ++b) {
      acc += eps[b] * kl[b];
      terms.gated += eps[b];
      scale[b] = -ctx.weights.tran * eps[b] / B;
    }
    terms.transfer = -acc / B;
    if (need_grad && terms.gated > 0) {
      Tensor<T> d_st({B, tables.num_classes});
      kl_backward(ens, st, scale, &d_ens, &d_st);
      add_into(ds, backward(*ctx.student->graph, ctx.student->params, stape, d_st, static_cast<ParameterSet<T>*>(nullptr), true));
    }
  }

  Tensor<T> dh(h.shape);
  if (ctx.weights.div != 0.0) {
    Tensor<T> ds_div(s.shape), dh_div(h.shape);
    terms.diversity = diversity_loss(s, h, need_grad ? &ds_div : nullptr, need_grad ? &dh_div : nullptr);
    if (need_grad) {
      const T w = static_cast<T>(ctx.weights.div);
      for (std::size_t k = 0; k < ds.size(); ++k) ds.data[k] += w * ds_div.data[k];
      for (std::size_t k = 0; k < dh.size(); ++k) dh.data[k] += w * dh_div.data[k];
    }
  }

  if (ctx.weights.cd != 0.0 && ctx.other_ensemble) {
    const auto kl = kl_from_logits(ens, *ctx.other_ensemble);
    terms.cross = -batch_mean(kl);
    if (need_grad) {
      std::vector<double> scale(B, -ctx.weights.cd / B);
      kl_backward<T>(ens, *ctx.other_ensemble, scale, &d_ens, nullptr);
    }
  }

  terms.total = terms.fidelity + ctx.weights.tran * terms.transfer + ctx.weights.div * terms.diversity +
                ctx.weights.cd * terms.cross;

  if (need_grad) {
    add_into(ds, teachers_backward(pass, labels, ctx.locals, tables, d_ens, s.shape));
    add_into(dh, backward(*gen.graph, gen.params, gtape, ds, grads, true));
    merge_backward(gen, z, labels, dh, *grads);
  }
  if (s_out) *s_out = s;
  return terms;
}

template <typename T>
double distillation_loss_and_grad(const Model<T>& student, std::span<const Tensor<T>> batches,
                                  std::span<const int> labels, std::span<const Model<T>> locals,
                                  const WeightingTables& tables, KlOrder order, Mode student_mode,
                                  ParameterSet<T>* grads, ParameterSet<T>* running_stats) {
  double total = 0.0;
  for (const auto& s : batches) {
    const int B = s.batch();
    const Tensor<T> ens = ensemble_logits(s, labels, locals, tables);
    Tape<T> tape;
    const Tensor<T> st = student.logits(s, student_mode, grads ? &tape : nullptr, running_stats);
    const bool student_first = order == KlOrder::AS_WRITTEN;
    total += batch_mean(student_first ? kl_from_logits(st, ens) : kl_from_logits(ens, st));
    if (!grads) continue;
    Tensor<T> d_st({B, tables.num_classes});
    std::vector<double> scale(B, 1.0 / B);
    if (student_first) {
      kl_backward<T>(st, ens, scale, &d_st, nullptr);
    } else {
      kl_backward<T>(ens, st, scale, nullptr, &d_st);
    }
    backward(*student.graph, student.params, tape, d_st, grads, false);
  }
  return total;
}

#define DFDG_INSTANTIATE(T)                                                                                      \
  template std::vector<int> argmax_rows<T>(const Tensor<T>&);                                                    \
  template std::vector<double> kl_from_logits<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template void kl_backward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const double>, Tensor<T>*,          \
                               Tensor<T>*);                                                                     \
  template double cross_entropy<T>(const Tensor<T>&, std::span<const int>, Tensor<T>*);                         \
  template Tensor<T> combine_logits<T>(std::span<const Tensor<T>>, std::span<const int>, const WeightingTables&); \
  template std::vector<int> transfer_gate<T>(const Tensor<T>&, const Tensor<T>&, std::span<const int>,           \
                                             TransferVariant);                                                  \
  template double diversity_loss<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*);                 \
  template Tensor<T> ensemble_logits<T>(const Tensor<T>&, std::span<const int>, std::span<const Model<T>>,       \
                                        const WeightingTables&);                                                \
  template double fidelity_loss<T>(const Tensor<T>&, std::span<const int>, std::span<const Model<T>>,            \
                                   const WeightingTables&);                                                     \
  template double transferability_loss<T>(const Tensor<T>&, std::span<const int>, std::span<const Model<T>>,     \
                                           const Model<T>&, const WeightingTables&, TransferVariant);           \
  template double cross_divergence_loss<T>(const Tensor<T>&, std::span<const int>, const Tensor<T>&,             \
                                           std::span<const Model<T>>, const WeightingTables&);                  \
  template double generator_objective<T>(const Tensor<T>&, std::span<const int>, const Tensor<T>&,               \
                                         const Tensor<T>*, const Model<T>&, std::span<const Model<T>>,           \
                                         const WeightingTables&, const GenLossWeights&, TransferVariant);       \
  template double distillation_loss<T>(std::span<const Tensor<T>>, std::span<const int>, const Model<T>&,        \
                                       std::span<const Model<T>>, const WeightingTables&, KlOrder);             \
  template GeneratorLossTerms generator_loss_and_grad<T>(const GeneratorState<T>&, const Tensor<T>&,             \
                                                         std::span<const int>, const GeneratorStepContext<T>&,  \
                                                         ParameterSet<T>*, Tensor<T>*);                         \
  template double distillation_loss_and_grad<T>(const Model<T>&, std::span<const Tensor<T>>,                     \
                                                std::span<const int>, std::span<const Model<T>>,                 \
                                                const WeightingTables&, KlOrder, Mode, ParameterSet<T>*,         \
                                                ParameterSet<T>*);

DFDG_INSTANTIATE(float)
DFDG_INSTANTIATE(double)

}  // namespace dfdg
