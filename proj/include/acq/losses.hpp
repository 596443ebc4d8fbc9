#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "acq/attention.hpp"
#include "acq/nn.hpp"
#include "acq/tensor.hpp"

namespace acq {

/// Loss hyperparameters of the generator and student objectives.
struct LossWeights {
  float cacm_relax = 0.2f;     // epsilon_1 in the centre-matching BCE
  float penalty_relax = 0.1f;  // epsilon_2 in the attention-map hinge
  float penalty_ce = 0.5f;     // coefficient on the train-mode CE penalty
  float penalty_bns = 1.0f;    // coefficient on the train-mode BNS penalty
  float penalty_cacm = 1.0f;   // coefficient on the attention-map penalty
  float alpha = 0.5f;          // BNS trade-off
  float beta = 1.0f;           // centre-matching trade-off
  float gamma = 1.0f;          // adversarial trade-off
  float tau = 1.0f;            // distillation weight in the student objective
  float js_guard = 1e-4f;

  static LossWeights cifar10();
  static LossWeights cifar100();
  static LossWeights imagenet();
  void validate() const;
};

/// Weighted generator loss components. Undefined tensors count as zero.
struct GeneratorLossParts {
  Tensor ce_eval;
  Tensor ce_train_penalty;
  Tensor bns_eval;
  Tensor bns_train_penalty;
  Tensor cacm;
  Tensor cacm_penalty;
  Tensor adversarial;
};

struct GeneratorLossBreakdown {
  double ce_eval = 0.0;
  double ce_train_penalty = 0.0;
  double bns_eval = 0.0;
  double bns_train_penalty = 0.0;
  double cacm = 0.0;
  double cacm_penalty = 0.0;
  double adversarial = 0.0;
  double total = 0.0;

  /// Weighted recombination of the parts.
  double recombine(const LossWeights& w) const;
};

struct GeneratorObjective {
  Tensor total;
  GeneratorLossBreakdown breakdown;
};

/// sum_l ||mu_l^s - mu_l||^2 + ||sigma_l^s - sigma_l||^2.
Tensor bns_loss(const BatchStatsRecord& stats, const StoredStats& stored);

/// Mean over the batch of -log softmax(logits)[label].
Tensor ce_loss(const Tensor& logits, const std::vector<int64_t>& labels);

/// Mean over the batch of KL(softmax(teacher) || softmax(student)).
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits);

/// Per-sample -log(min(M(p) + relax, 1)) averaged over the batch; maps is [N,h,w].
Tensor cacm_loss(const Tensor& maps, const std::vector<int64_t>& positions, float relax);
double cacm_loss(const AttentionMap& map, int64_t position, float relax);

/// Mean over pairs of MAE(z1_i, z2_i) / (JS(y1_i, y2_i) + guard), where y are the
/// softmax of each teacher logit row with both pair argmax columns removed.
Tensor adversarial_loss(const Tensor& z1, const Tensor& z2, const Tensor& teacher_logits1,
                        const Tensor& teacher_logits2, float guard);

/// max(MAE(M_train, M_eval) - relax, 0) over the whole batch of maps.
Tensor cacm_penalty(const Tensor& maps_train, const Tensor& maps_eval, float relax);
double cacm_penalty(const AttentionMap& map_train, const AttentionMap& map_eval, float relax);

/// Jensen-Shannon divergence (natural log) of two probability vectors.
double js_divergence(std::span<const double> p, std::span<const double> q);

GeneratorObjective generator_objective(const GeneratorLossParts& parts, const LossWeights& weights);

/// CE against the teacher's argmax plus tau * KD; teacher logits are treated as constants.
Tensor student_objective(const Tensor& student_logits, const Tensor& teacher_logits, float tau);

}  // namespace acq
