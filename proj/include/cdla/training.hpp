#pragma once

// Training procedures for the baselines and the contextual variants.
//
//   naive     ranker on raw clicks
//   ipw       ranker on clicks weighted by a fixed propensity vector
//   dla       pointwise ranker h and propensity g, jointly (IPW + IRW)
//   cdla      listwise ranker f and propensity g, jointly (IPW + IRW)
//   cdla_ld   cdla, plus student h distilled from f in the same step
//   c_dla_ld  teacher f fits raw clicks; h and g run DLA on the teacher's
//             softmax weights in place of the click indicators
//
// Each model owns one AdamW optimizer; every model is stepped once per batch.
// Per-model gradients come from separate graphs, so weights derived from one
// model never carry gradient into another.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdla/adamw.hpp"
#include "cdla/data.hpp"
#include "cdla/error.hpp"
#include "cdla/losses.hpp"
#include "cdla/models.hpp"
#include "cdla/rng.hpp"

namespace cdla {

enum class Method { kNaive, kIpw, kDla, kCdla, kCdlaLd, kCDlaLd };

inline constexpr std::array<Method, 6> kAllMethods = {Method::kNaive, Method::kIpw,   Method::kDla,
                                                      Method::kCdla,  Method::kCdlaLd, Method::kCDlaLd};

constexpr std::string_view method_name(Method m) {
  switch (m) {
    case Method::kNaive: return "naive";
    case Method::kIpw: return "ipw";
    case Method::kDla: return "dla";
    case Method::kCdla: return "cdla";
    case Method::kCdlaLd: return "cdla_ld";
    case Method::kCDlaLd: return "c_dla_ld";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods) {
    if (method_name(m) == s) return m;
  }
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

enum class RankerKind { kPointwise, kListwise };

struct TrainConfig {
  Method method = Method::kCdlaLd;
  std::size_t batch_size = 30;
  std::size_t steps = 1000;
  double learning_rate = 2e-5;
  double propensity_learning_rate = 0.0;  // 0: use learning_rate
  double student_learning_rate = 0.0;     // cdla_ld student h; 0: use learning_rate
  double weight_decay = 0.01;
  double weight_clip_max = 10.0;
  std::uint64_t seed = 1;
  EncoderConfig encoder{};
  // Ranker trained by the naive baseline.
  RankerKind naive_ranker = RankerKind::kPointwise;
  // Fixed examination vector g(1..10) for ipw.
  std::vector<double> ipw_propensity;
  // cdla_ld only: false trains the teacher and propensity model alone.
  bool distill_student = true;
  // Record losses every log_every steps (and at the last step).
  std::size_t log_every = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(weight_clip_max >= 1.0)) throw ConfigError("weight_clip_max must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(propensity_learning_rate >= 0.0)) throw ConfigError("propensity_learning_rate must be >= 0");
    if (!(student_learning_rate >= 0.0)) throw ConfigError("student_learning_rate must be >= 0");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    encoder.validate(kHiddenWidth);
    if (method == Method::kIpw) {
      if (ipw_propensity.size() != kTrainListLength) {
        throw ConfigError("ipw needs a propensity vector of length 10 (ipw_propensity_path)");
      }
      for (double p : ipw_propensity) {
        if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("ipw propensities must be positive");
      }
    }
  }

  double propensity_lr() const { return propensity_learning_rate > 0.0 ? propensity_learning_rate : learning_rate; }
  double student_lr() const {
    return method == Method::kCdlaLd && student_learning_rate > 0.0 ? student_learning_rate : learning_rate;
  }
};

// Which models a method trains.
struct ModelSet {
  bool listwise = false;
  bool pointwise = false;
  bool propensity = false;
};

inline ModelSet models_for(const TrainConfig& cfg) {
  switch (cfg.method) {
    case Method::kNaive:
      return cfg.naive_ranker == RankerKind::kListwise ? ModelSet{true, false, false} : ModelSet{false, true, false};
    case Method::kIpw: return {false, true, false};
    case Method::kDla: return {false, true, true};
    case Method::kCdla: return {true, false, true};
    case Method::kCdlaLd: return {true, cfg.distill_student, true};
    case Method::kCDlaLd: return {true, true, true};
  }
  return {};
}

struct TrainedModels {
  std::optional<ListwiseRanker> listwise;    // f
  std::optional<PointwiseRanker> pointwise;  // h
  std::optional<PropensityModel> propensity; // g
};

// Fresh models for a config. Each model draws its initialization from its own
// seed stream, so adding or removing a model leaves the others unchanged.
inline TrainedModels init_models(const TrainConfig& cfg) {
  const ModelSet need = models_for(cfg);
  TrainedModels m;
  if (need.listwise) m.listwise.emplace(mix_seed(cfg.seed, 2), cfg.encoder);
  if (need.pointwise) m.pointwise.emplace(mix_seed(cfg.seed, 3));
  if (need.propensity) m.propensity.emplace();
  return m;
}

struct LossRecord {
  std::size_t step = 0;
  std::string name;
  double value = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct TrainResult {
  TrainedModels models;
  std::vector<LossRecord> curve;
};

// A stacked minibatch of lists.
struct Batch {
  Tensor features;                 // (N x 14)
  Tensor clicks;                   // (N x 1)
  std::vector<std::size_t> slots;  // position - 1 per row
  Segments seg;
};

inline Batch make_batch(std::span<const Session> sessions, std::span<const std::size_t> picks) {
  Batch b;
  std::size_t total = 0;
  for (std::size_t k : picks) total += sessions[k].size();
  b.features = Tensor(total, kFeatureDim);
  b.clicks = Tensor(total, 1);
  b.slots.reserve(total);
  std::size_t row = 0;
  for (std::size_t k : picks) {
    const Session& s = sessions[k];
    for (const auto& d : s.docs) {
      std::copy(d.features.begin(), d.features.end(), b.features.data() + row * kFeatureDim);
      b.clicks[row] = d.click;
      b.slots.push_back(static_cast<std::size_t>(d.position - 1));
      ++row;
    }
    b.seg.push(s.size());
  }
  return b;
}

namespace detail {

inline Tensor gather_values(std::span<const double> table, std::span<const std::size_t> slots) {
  Tensor out(slots.size(), 1);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i] >= table.size()) throw ConfigError("position " + std::to_string(slots[i] + 1) + " has no propensity");
    out[i] = table[slots[i]];
  }
  return out;
}

struct StepOutput {
  Tensor scores;
  double loss;
};

// One objective on the listwise ranker: builds the graph, backpropagates into
// the parameters and returns the (pre-update) scores.
template <typename LossFn>
StepOutput listwise_objective(ListwiseRanker& f, const Batch& b, LossFn&& loss) {
  Graph g;
  Var s = f.score(g, g.constant(b.features), b.seg);
  Var l = loss(s);
  g.backward(l);
  return {s.value(), l.value().item()};
}

template <typename LossFn>
StepOutput pointwise_objective(PointwiseRanker& h, const Batch& b, LossFn&& loss) {
  Graph g;
  Var s = h.score(g, g.constant(b.features));
  Var l = loss(s);
  g.backward(l);
  return {s.value(), l.value().item()};
}

template <typename LossFn>
double propensity_objective(PropensityModel& pm, const Batch& b, LossFn&& loss) {
  Graph g;
  Var s = gather_rows(pm.scores(g), b.slots);
  Var l = loss(s);
  g.backward(l);
  return l.value().item();
}

}  // namespace detail

class Trainer {
 public:
  Trainer(TrainConfig cfg, TrainedModels models) : cfg_(std::move(cfg)), models_(std::move(models)) {
    cfg_.validate();
    const ModelSet need = models_for(cfg_);
    if (need.listwise != models_.listwise.has_value() || need.pointwise != models_.pointwise.has_value() ||
        need.propensity != models_.propensity.has_value()) {
      throw ConfigError("models supplied do not match method " + std::string(method_name(cfg_.method)));
    }
    const AdamWConfig ranker{cfg_.learning_rate, 0.9, 0.999, 1e-8, cfg_.weight_decay};
    const AdamWConfig prop{cfg_.propensity_lr(), 0.9, 0.999, 1e-8, cfg_.weight_decay};
    opt_f_ = AdamW(ranker);
    opt_h_ = AdamW(AdamWConfig{cfg_.student_lr(), 0.9, 0.999, 1e-8, cfg_.weight_decay});
    opt_g_ = AdamW(prop);
  }

  // Runs cfg.steps steps over the (filtered, normalized) sessions.
  TrainResult run(std::span<const Session> sessions) {
    if (sessions.empty()) throw ConfigError("no training sessions");
    Rng batch_rng(mix_seed(cfg_.seed, 1));
    std::vector<std::size_t> picks(cfg_.batch_size);
    for (std::size_t step = 1; step <= cfg_.steps; ++step) {
      for (auto& p : picks) p = batch_rng.below(sessions.size());
      const Batch batch = make_batch(sessions, picks);
      this->step(batch, step);
    }
    return TrainResult{std::move(models_), std::move(curve_)};
  }

  const TrainedModels& models() const noexcept { return models_; }

  // One optimization step on a batch; appends to the loss curve.
  void step(const Batch& b, std::size_t index) {
    const bool log = index % cfg_.log_every == 0 || index == cfg_.steps;
    auto record = [&](std::string_view name, double v) {
      if (log) curve_.push_back(LossRecord{index, std::string(name), v});
    };
    const double clip = cfg_.weight_clip_max;
    switch (cfg_.method) {
      case Method::kNaive: {
        auto loss = [&](Var s) { return listwise_softmax_loss(s, b.clicks, b.seg); };
        const double v = models_.listwise ? detail::listwise_objective(*models_.listwise, b, loss).loss
                                          : detail::pointwise_objective(*models_.pointwise, b, loss).loss;
        record("naive", v);
        break;
      }
      case Method::kIpw: {
        const Tensor w = ratio_weights(detail::gather_values(cfg_.ipw_propensity, b.slots), b.seg, clip);
        auto out = detail::pointwise_objective(*models_.pointwise, b,
                                               [&](Var s) { return ipw_loss(s, b.clicks, w, b.seg); });
        record("ipw", out.loss);
        break;
      }
      case Method::kDla: {
        const Tensor w = propensity_weights(b);
        auto out = detail::pointwise_objective(*models_.pointwise, b,
                                               [&](Var s) { return ipw_loss(s, b.clicks, w, b.seg); });
        record("ipw", out.loss);
        record("irw", irw_step(b, b.clicks, relevance_weights(out.scores, b.seg, clip)));
        break;
      }
      case Method::kCdla:
      case Method::kCdlaLd: {
        const Tensor w = propensity_weights(b);
        auto out = detail::listwise_objective(*models_.listwise, b,
                                              [&](Var s) { return ipw_loss(s, b.clicks, w, b.seg); });
        record("ipw", out.loss);
        record("irw", irw_step(b, b.clicks, relevance_weights(out.scores, b.seg, clip)));
        if (models_.pointwise) {
          auto st = detail::pointwise_objective(*models_.pointwise, b,
                                                [&](Var s) { return distill_loss(out.scores, s, b.seg); });
          record("distill", st.loss);
        }
        break;
      }
      case Method::kCDlaLd: {
        auto teacher = detail::listwise_objective(*models_.listwise, b,
                                                  [&](Var s) { return listwise_softmax_loss(s, b.clicks, b.seg); });
        record("teacher", teacher.loss);
        const Tensor soft = segment_softmax(teacher.scores, b.seg);
        const Tensor w = propensity_weights(b);
        auto out = detail::pointwise_objective(*models_.pointwise, b,
                                               [&](Var s) { return ipw_loss(s, soft, w, b.seg); });
        record("ipw", out.loss);
        record("irw", irw_step(b, soft, relevance_weights(out.scores, b.seg, clip)));
        break;
      }
    }
    if (models_.listwise) opt_f_.step(models_.listwise->params());
    if (models_.pointwise) opt_h_.step(models_.pointwise->params());
    if (models_.propensity) opt_g_.step(models_.propensity->params());
  }

 private:
  // IPW weights clamp(g(1)/g(i)) from the current propensity model.
  Tensor propensity_weights(const Batch& b) const {
    const PropensityVector pv = models_.propensity->propensity();
    return ratio_weights(detail::gather_values(pv.propensity, b.slots), b.seg, cfg_.weight_clip_max);
  }

  double irw_step(const Batch& b, const Tensor& targets, const Tensor& weights) {
    return detail::propensity_objective(*models_.propensity, b,
                                        [&](Var s) { return irw_loss(s, targets, weights, b.seg); });
  }

  TrainConfig cfg_;
  TrainedModels models_;
  AdamW opt_f_, opt_h_, opt_g_;
  std::vector<LossRecord> curve_;
};

inline TrainResult train(const TrainConfig& cfg, std::span<const Session> sessions) {
  return Trainer(cfg, init_models(cfg)).run(sessions);
}

inline TrainResult train(const TrainConfig& cfg, std::span<const Session> sessions, TrainedModels models) {
  return Trainer(cfg, std::move(models)).run(sessions);
}

inline std::string format_loss_curve(std::span<const LossRecord> curve, std::string_view config_hash) {
  std::string out = provenance_header("loss-curve", config_hash);
  out += "step\tloss\tvalue\n";
  for (const auto& r : curve) {
    out += std::to_string(r.step) + "\t" + r.name + "\t" + format_double(r.value) + "\n";
  }
  return out;
}

}  // namespace cdla
