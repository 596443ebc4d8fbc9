#include "acq/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace acq {

LossWeights LossWeights::cifar10() { return LossWeights{}; }

LossWeights LossWeights::cifar100() {
  LossWeights w;
  w.penalty_ce = 0.05f;
  w.penalty_bns = 1.0f;
  w.penalty_cacm = 1.0f;
  w.alpha = 0.1f;
  w.beta = 1.0f;
  w.gamma = 1.0f;
  return w;
}

LossWeights LossWeights::imagenet() {
  LossWeights w;
  w.penalty_ce = 0.05f;
  w.penalty_bns = 0.5f;
  w.penalty_cacm = 1.0f;
  w.alpha = 0.1f;
  w.beta = 1.0f;
  w.gamma = 0.5f;
  return w;
}

void LossWeights::validate() const {
  for (float v : {cacm_relax, penalty_relax, penalty_ce, penalty_bns, penalty_cacm, alpha, beta, gamma, tau}) {
    if (!(v >= 0.0f)) throw std::invalid_argument("loss weights must be nonnegative");
  }
  if (!(js_guard > 0.0f)) throw std::invalid_argument("js_guard must be positive");
}

double GeneratorLossBreakdown::recombine(const LossWeights& w) const {
  return ce_eval + w.penalty_ce * ce_train_penalty + w.alpha * (bns_eval + w.penalty_bns * bns_train_penalty) +
         w.beta * (cacm + w.penalty_cacm * cacm_penalty) + w.gamma * adversarial;
}

Tensor bns_loss(const BatchStatsRecord& stats, const StoredStats& stored) {
  if (stats.layers.size() != stored.mean.size() || stats.layers.empty()) {
    throw ShapeError("bns_loss: " + std::to_string(stats.layers.size()) + " recorded layers vs " +
                     std::to_string(stored.mean.size()) + " stored");
  }
  Tensor total;
  for (size_t l = 0; l < stats.layers.size(); ++l) {
    const BnStats& s = stats.layers[l];
    const int64_t c = s.mean.numel();
    if (static_cast<int64_t>(stored.mean[l].size()) != c || static_cast<int64_t>(stored.std[l].size()) != c) {
      throw ShapeError("bns_loss: channel mismatch at layer " + s.layer);
    }
    Tensor mu = Tensor::from({c}, stored.mean[l]);
    Tensor sd = Tensor::from({c}, stored.std[l]);
    Tensor term = sum(square(s.mean - mu)) + sum(square(s.std - sd));
    total = total.defined() ? total + term : term;
  }
  return total;
}

Tensor ce_loss(const Tensor& logits, const std::vector<int64_t>& labels) {
  if (logits.ndim() != 2) throw ShapeError("ce_loss: logits must be N x C, got " + shape_str(logits.shape()));
  for (int64_t y : labels) {
    if (y < 0 || y >= logits.dim(1)) {
      throw std::out_of_range("ce_loss: label " + std::to_string(y) + " outside [0, " + std::to_string(logits.dim(1)) +
                              ")");
    }
  }
  return neg(mean(gather_rows(log_softmax(logits), labels)));
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits) {
  if (student_logits.shape() != teacher_logits.shape() || student_logits.ndim() != 2) {
    throw ShapeError("kd_loss: shapes " + shape_str(student_logits.shape()) + " and " +
                     shape_str(teacher_logits.shape()) + " differ");
  }
  Tensor log_t = log_softmax(teacher_logits);
  Tensor p_t = softmax(teacher_logits);
  Tensor log_s = log_softmax(student_logits);
  return mul_scalar(sum(p_t * (log_t - log_s)), 1.0f / static_cast<float>(student_logits.dim(0)));
}

Tensor cacm_loss(const Tensor& maps, const std::vector<int64_t>& positions, float relax) {
  if (maps.ndim() != 3) throw ShapeError("cacm_loss: maps must be N x h x w, got " + shape_str(maps.shape()));
  const int64_t n = maps.dim(0), cells = maps.dim(1) * maps.dim(2);
  if (static_cast<int64_t>(positions.size()) != n) throw ShapeError("cacm_loss: one position per map required");
  for (int64_t p : positions) {
    if (p < 0 || p >= cells) {
      throw std::out_of_range("cacm_loss: position " + std::to_string(p) + " outside [0, " + std::to_string(cells) +
                              ")");
    }
  }
  Tensor at_p = gather_rows(reshape(maps, {n, cells}), positions);
  // Clamped from above at 1; the floor only guards log(0) when relax == 0.
  Tensor v = clip(at_p + relax, 1e-12f, 1.0f);
  return neg(mean(log(v)));
}

double cacm_loss(const AttentionMap& map, int64_t position, float relax) {
  const Cell c = p_to_cell(position, map.h, map.w);
  const double v = std::clamp(static_cast<double>(map.at(c.row, c.col)) + relax, 1e-12, 1.0);
  return -std::log(v);
}

namespace {

std::vector<int64_t> kept_columns(int64_t classes, int64_t o1, int64_t o2) {
  std::vector<int64_t> kept;
  for (int64_t j = 0; j < classes; ++j) {
    if (j != o1 && j != o2) kept.push_back(j);
  }
  if (kept.size() < 2) throw std::domain_error("adversarial_loss: fewer than 2 non-target classes remain");
  return kept;
}

}  // namespace

Tensor adversarial_loss(const Tensor& z1, const Tensor& z2, const Tensor& teacher_logits1,
                        const Tensor& teacher_logits2, float guard) {
  if (z1.shape() != z2.shape() || z1.ndim() != 2) {
    throw ShapeError("adversarial_loss: noise shapes " + shape_str(z1.shape()) + " and " + shape_str(z2.shape()));
  }
  if (teacher_logits1.shape() != teacher_logits2.shape() || teacher_logits1.ndim() != 2 ||
      teacher_logits1.dim(0) != z1.dim(0)) {
    throw ShapeError("adversarial_loss: logits " + shape_str(teacher_logits1.shape()) + " and " +
                     shape_str(teacher_logits2.shape()) + " do not pair with noise " + shape_str(z1.shape()));
  }
  if (!(guard >= 0.0f)) throw std::invalid_argument("adversarial_loss: guard must be nonnegative");
  const int64_t n = z1.dim(0), classes = teacher_logits1.dim(1);
  const auto o1 = argmax_rows(teacher_logits1);
  const auto o2 = argmax_rows(teacher_logits2);
  std::vector<Tensor> per_pair;
  per_pair.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    const auto kept = kept_columns(classes, o1[i], o2[i]);
    Tensor r1 = index_select(index_select(teacher_logits1, 0, {i}), 1, kept);
    Tensor r2 = index_select(index_select(teacher_logits2, 0, {i}), 1, kept);
    Tensor y1 = softmax(r1), y2 = softmax(r2);
    Tensor log_m = log(clip((y1 + y2) * 0.5f, 1e-30f, 1.0f));
    Tensor js = (sum(y1 * (log_softmax(r1) - log_m)) + sum(y2 * (log_softmax(r2) - log_m))) * 0.5f;
    // JS is nonnegative; tiny negative round-off would flip the ratio's sign.
    js = clip(js, 0.0f, 1.0f);
    Tensor mae = mean(abs(index_select(z1, 0, {i}) - index_select(z2, 0, {i})));
    per_pair.push_back(mae / (js + guard));
  }
  return mean(concat(per_pair, 0));
}

Tensor cacm_penalty(const Tensor& maps_train, const Tensor& maps_eval, float relax) {
  if (maps_train.shape() != maps_eval.shape()) {
    throw ShapeError("cacm_penalty: map shapes " + shape_str(maps_train.shape()) + " and " +
                     shape_str(maps_eval.shape()) + " differ");
  }
  return relu(mean(abs(maps_train - maps_eval)) - relax);
}

double cacm_penalty(const AttentionMap& map_train, const AttentionMap& map_eval, float relax) {
  return std::max(static_cast<double>(map_distance(map_train, map_eval)) - relax, 0.0);
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("js_divergence: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / m);
  }
  return acc;
}

GeneratorObjective generator_objective(const GeneratorLossParts& parts, const LossWeights& weights) {
  weights.validate();
  GeneratorObjective out;
  Tensor total;
  auto term = [&](const Tensor& t, float w, double& slot) {
    if (!t.defined()) return;
    slot = t.item();
    if (w == 0.0f) return;
    Tensor scaled = w == 1.0f ? t : t * w;
    total = total.defined() ? total + scaled : scaled;
  };
  term(parts.ce_eval, 1.0f, out.breakdown.ce_eval);
  term(parts.ce_train_penalty, weights.penalty_ce, out.breakdown.ce_train_penalty);
  term(parts.bns_eval, weights.alpha, out.breakdown.bns_eval);
  term(parts.bns_train_penalty, weights.alpha * weights.penalty_bns, out.breakdown.bns_train_penalty);
  term(parts.cacm, weights.beta, out.breakdown.cacm);
  term(parts.cacm_penalty, weights.beta * weights.penalty_cacm, out.breakdown.cacm_penalty);
  term(parts.adversarial, weights.gamma, out.breakdown.adversarial);
  out.total = total.defined() ? total : Tensor::scalar(0.0f);
  out.breakdown.total = out.total.item();
  return out;
}

Tensor student_objective(const Tensor& student_logits, const Tensor& teacher_logits, float tau) {
  Tensor teacher = teacher_logits.detach();
  Tensor loss = ce_loss(student_logits, argmax_rows(teacher));
  if (tau != 0.0f) loss = loss + kd_loss(student_logits, teacher) * tau;
  return loss;
}

}  // namespace acq
