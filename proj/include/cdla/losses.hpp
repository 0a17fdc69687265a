#pragma once

// Listwise losses. Every training objective is a weighted softmax
// cross-entropy over a list,
//   L = -sum_i t_i log softmax(s)_i,
// with different scores s and targets t:
//   naive    s = ranker scores,      t = clicks
//   IPW      s = ranker scores,      t = clamp(g(1)/g(i)) * clicks
//   IRW      s = propensity scores,  t = clamp(softmax(f)_1/softmax(f)_i) * clicks
//   distill  s = student scores,     t = softmax(teacher scores)
// Batched variants average the per-list losses over the lists of a batch.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cdla/error.hpp"
#include "cdla/graph.hpp"

namespace cdla {

// Mean over segments of -sum_i targets_i * log_softmax(scores)_i. targets is a
// constant column aligned with scores.
inline Var softmax_cross_entropy(Var scores, const Tensor& targets, const Segments& seg) {
  if (!targets.same_shape(scores.value())) {
    throw ShapeError("loss targets " + targets.shape_string() + " do not match scores " + scores.value().shape_string());
  }
  if (seg.count() == 0) throw ConfigError("loss over an empty batch");
  for (double t : targets.values()) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw NumericError("loss targets must be finite and nonnegative");
  }
  Graph& g = scores.graph();
  Var ls = log_softmax(scores, seg);
  Var weighted = mul(ls, g.constant(targets));
  return scale(sum(weighted), -1.0 / static_cast<double>(seg.count()));
}

inline void require_positive_targets(const Tensor& targets, const Segments& seg) {
  for (std::size_t s = 0; s < seg.count(); ++s) {
    double total = 0.0;
    for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) total += targets[i];
    if (!(total > 0.0)) throw NumericError("list " + std::to_string(s) + " has no positive target; loss undefined");
  }
}

inline void require_positive_weights(const Tensor& weights) {
  for (double w : weights.values()) {
    if (!(w > 0.0) || !std::isfinite(w)) throw NumericError("inverse weights must be positive and finite");
  }
}

// Naive click loss (targets = clicks) or any soft-target listwise loss.
inline Var listwise_softmax_loss(Var scores, const Tensor& targets, const Segments& seg) {
  require_positive_targets(targets, seg);
  return softmax_cross_entropy(scores, targets, seg);
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  as_matrix(out).array() *= as_matrix(b).array();
  return out;
}

// Inverse-propensity-weighted loss on ranker scores.
inline Var ipw_loss(Var scores, const Tensor& clicks, const Tensor& weights, const Segments& seg) {
  require_positive_weights(weights);
  Tensor targets = hadamard(weights, clicks);
  require_positive_targets(targets, seg);
  return softmax_cross_entropy(scores, targets, seg);
}

// Inverse-relevance-weighted loss on propensity scores (same form as IPW with
// the roles of the two models swapped).
inline Var irw_loss(Var propensity_scores, const Tensor& clicks, const Tensor& weights, const Segments& seg) {
  return ipw_loss(propensity_scores, clicks, weights, seg);
}

// Per-segment softmax of a column of plain values.
inline Tensor segment_softmax(const Tensor& scores, const Segments& seg) {
  Tensor out(scores.rows(), 1);
  for (std::size_t s = 0; s < seg.count(); ++s) {
    if (seg.size(s) == 0) continue;
    detail::log_softmax_range(scores.data() + seg.begin(s), out.data() + seg.begin(s), seg.size(s));
  }
  for (double& v : out.values()) v = std::exp(v);
  return out;
}

// Listwise distillation: cross-entropy of the student's list distribution
// against the teacher's. The teacher enters as a constant.
inline Var distill_loss(const Tensor& teacher_scores, Var student_scores, const Segments& seg) {
  return softmax_cross_entropy(student_scores, segment_softmax(teacher_scores, seg), seg);
}

// clamp(p_first / p_i) per list, where p_first is the first entry of the list
// (the document shown at position 1).
inline Tensor ratio_weights(const Tensor& probs, const Segments& seg, double clip_max) {
  if (!(clip_max >= 1.0)) throw ConfigError("weight_clip_max must be >= 1");
  Tensor w(probs.rows(), 1);
  for (std::size_t s = 0; s < seg.count(); ++s) {
    if (seg.size(s) == 0) continue;
    const double first = probs[seg.begin(s)];
    for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) {
      w[i] = std::clamp(first / probs[i], 1.0 / clip_max, clip_max);
    }
  }
  return w;
}

// IRW weights from raw relevance scores: softmax within each list, then ratios.
inline Tensor relevance_weights(const Tensor& ranker_scores, const Segments& seg, double clip_max) {
  return ratio_weights(segment_softmax(ranker_scores, seg), seg, clip_max);
}

// Single-list forms on plain values.

inline double loss_listwise_softmax(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size()) throw ShapeError("scores and targets differ in length");
  Graph g;
  const Segments seg = Segments::single(scores.size());
  return listwise_softmax_loss(g.constant(Tensor::column(scores)), Tensor::column(targets), seg).value().item();
}

inline double loss_ipw(std::span<const double> scores, std::span<const double> clicks, std::span<const double> weights) {
  if (scores.size() != clicks.size() || scores.size() != weights.size()) {
    throw ShapeError("scores, clicks and weights differ in length");
  }
  Graph g;
  const Segments seg = Segments::single(scores.size());
  return ipw_loss(g.constant(Tensor::column(scores)), Tensor::column(clicks), Tensor::column(weights), seg)
      .value()
      .item();
}

inline double loss_irw(std::span<const double> propensity_scores, std::span<const double> clicks,
                       std::span<const double> weights) {
  return loss_ipw(propensity_scores, clicks, weights);
}

inline double loss_distill(std::span<const double> teacher, std::span<const double> student) {
  if (teacher.size() != student.size()) throw ShapeError("teacher and student differ in length");
  Graph g;
  const Segments seg = Segments::single(student.size());
  return distill_loss(Tensor::column(teacher), g.constant(Tensor::column(student)), seg).value().item();
}

// Entropy of softmax(scores); the lower bound of loss_distill for that teacher.
inline double softmax_entropy(std::span<const double> scores) {
  const Tensor p = segment_softmax(Tensor::column(scores), Segments::single(scores.size()));
  double h = 0.0;
  for (double v : p.values()) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace cdla
