#pragma once

#include <span>
#include <string>
#include <vector>

#include "dfdg/federation_data.hpp"
#include "dfdg/model_zoo.hpp"

namespace dfdg {

/// tau[i][y] = n_i^y / n^y and p(y) = n^y / sum n^y, from label counters.
struct WeightingTables {
  int num_clients = 0;
  int num_classes = 0;
  std::vector<double> tau;  // N x C, row-major
  std::vector<double> label_probs;

  double at(int i, int y) const { return tau[static_cast<std::size_t>(i) * num_classes + y]; }
  bool has_class(int y) const { return label_probs[y] > 0.0; }
};

WeightingTables compute_weights(const LabelCounter& counter);

enum class TransferVariant { DIAMOND, TRIANGLE_UP, TRIANGLE_DOWN };
enum class KlOrder { AS_WRITTEN, TEACHER_FIRST };

std::string to_string(TransferVariant v);
std::string to_string(KlOrder v);
TransferVariant parse_transfer_variant(std::string_view s);
KlOrder parse_kl_order(std::string_view s);

struct GenLossWeights {
  double tran = 1.0;
  double div = 1.0;
  double cd = 1.0;

  bool operator==(const GenLossWeights&) const = default;
};

// ---- logit-level kernels -------------------------------------------------

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

/// Per-sample D_KL(softmax(p) || softmax(q)).
template <typename T>
std::vector<double> kl_from_logits(const Tensor<T>& p_logits, const Tensor<T>& q_logits);

/// Adds scale[b] * d KL_b / d p and / d q into dp, dq (either may be null).
template <typename T>
void kl_backward(const Tensor<T>& p_logits, const Tensor<T>& q_logits, std::span<const double> scale, Tensor<T>* dp,
                 Tensor<T>* dq);

/// Batch-mean cross-entropy; adds its gradient into `dlogits` when non-null.
template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* dlogits = nullptr);

/// Row b of the result is sum_i tau[i][y_b] * teacher_logits[i][b].
template <typename T>
Tensor<T> combine_logits(std::span<const Tensor<T>> teacher_logits, std::span<const int> labels,
                         const WeightingTables& tables);

std::vector<int> transfer_gate(std::span<const int> student_argmax, std::span<const int> ensemble_argmax,
                               std::span<const int> labels, TransferVariant variant);

template <typename T>
std::vector<int> transfer_gate(const Tensor<T>& student_logits, const Tensor<T>& ensemble_logits,
                               std::span<const int> labels, TransferVariant variant);

/// exp(-sum_{j,l} |s_j - s_l| |h_j - h_l| / B^2); adds gradients into ds, dh.
template <typename T>
double diversity_loss(const Tensor<T>& s, const Tensor<T>& h, Tensor<T>* ds = nullptr, Tensor<T>* dh = nullptr);

// ---- model-level losses --------------------------------------------------

template <typename T>
Tensor<T> ensemble_logits(const Tensor<T>& s, std::span<const int> labels, std::span<const Model<T>> locals,
                          const WeightingTables& tables);

template <typename T>
double fidelity_loss(const Tensor<T>& s, std::span<const int> labels, std::span<const Model<T>> locals,
                     const WeightingTables& tables);

template <typename T>
double transferability_loss(const Tensor<T>& s, std::span<const int> labels, std::span<const Model<T>> locals,
                            const Model<T>& student, const WeightingTables& tables, TransferVariant variant);

template <typename T>
double cross_divergence_loss(const Tensor<T>& s_k, std::span<const int> labels, const Tensor<T>& s_other,
                             std::span<const Model<T>> locals, const WeightingTables& tables);

/// L_fid + b_tran L_tran + b_div L_div + b_cd L_cd. `s_other` may be null
/// (single generator), in which case the cross-divergence term is skipped.
template <typename T>
double generator_objective(const Tensor<T>& s_k, std::span<const int> labels, const Tensor<T>& h_k,
                           const Tensor<T>* s_other, const Model<T>& student, std::span<const Model<T>> locals,
                           const WeightingTables& tables, const GenLossWeights& weights, TransferVariant variant);

/// sum_k mean_b KL(student(s_k) || ensemble(s_k)) in the written order,
/// or KL(ensemble || student) under TEACHER_FIRST.
template <typename T>
double distillation_loss(std::span<const Tensor<T>> batches, std::span<const int> labels, const Model<T>& student,
                         std::span<const Model<T>> locals, const WeightingTables& tables,
                         KlOrder order = KlOrder::AS_WRITTEN);

// ---- losses with gradients -----------------------------------------------

struct GeneratorLossTerms {
  double fidelity = 0.0;
  double transfer = 0.0;
  double diversity = 0.0;
  double cross = 0.0;
  double total = 0.0;
  int gated = 0;  // samples with epsilon = 1
};

/// Generator-step inputs that stay fixed across the inner loop.
template <typename T>
struct GeneratorStepContext {
  const Model<T>* student = nullptr;
  std::span<const Model<T>> locals;
  const WeightingTables* tables = nullptr;
  GenLossWeights weights;
  TransferVariant variant = TransferVariant::DIAMOND;
  const Tensor<T>* other_ensemble = nullptr;  // ensemble logits on the other generator's batch
};

/// Generates s = G(o(z, y)), evaluates L_gen and, when `grads` is non-null,
/// accumulates its gradient with respect to the generator parameters
/// (including the label embedding). Teachers and student run in eval mode and
/// stay constant.
template <typename T>
GeneratorLossTerms generator_loss_and_grad(const GeneratorState<T>& gen, const Tensor<T>& z,
                                           std::span<const int> labels, const GeneratorStepContext<T>& ctx,
                                           ParameterSet<T>* grads, Tensor<T>* s_out = nullptr);

/// L_dmd over the given synthetic batches and its gradient with respect to the
/// student. The ensemble side is constant. In Train mode the student's
/// BatchNorm uses batch statistics and updates `running_stats` if given.
template <typename T>
double distillation_loss_and_grad(const Model<T>& student, std::span<const Tensor<T>> batches,
                                  std::span<const int> labels, std::span<const Model<T>> locals,
                                  const WeightingTables& tables, KlOrder order, Mode student_mode,
                                  ParameterSet<T>* grads, ParameterSet<T>* running_stats = nullptr);

}  // namespace dfdg
