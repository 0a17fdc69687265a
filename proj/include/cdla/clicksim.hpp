#pragma once

// Synthetic click logs under the examination hypothesis:
//   P(click at position i) = P(relevant | grade) * P(examined | i)
// with examination (1/i)^gamma and the graded relevance model
//   P(relevant | g) = eps + (1 - eps) (2^g - 1) / (2^4 - 1).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cdla/data.hpp"
#include "cdla/error.hpp"
#include "cdla/rng.hpp"
#include "cdla/text.hpp"

namespace cdla {

enum class LoggingPolicy { kRandom, kFeature };

struct ClickModelConfig {
  double gamma = 1.0;
  double epsilon = 0.1;
  int max_grade = kMaxGrade;
  std::uint64_t seed = 1;
  std::size_t display_length = kTrainListLength;
  std::size_t sessions_per_query = 50;
  // Initial ranker that produces the logged lists.
  LoggingPolicy logging_policy = LoggingPolicy::kRandom;
  std::size_t logging_feature = 14;  // 1-based column for kFeature
  double logging_noise = 0.0;        // std of Gaussian noise added to that column per session

  void validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be >= 0");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must be in [0, 1)");
    if (max_grade != kMaxGrade) throw ConfigError("max_grade must be 4");
    if (display_length == 0) throw ConfigError("display_length must be >= 1");
    if (logging_feature < 1 || logging_feature > kFeatureDim) throw ConfigError("logging_feature must be in 1..14");
    if (!(logging_noise >= 0.0)) throw ConfigError("logging_noise must be >= 0");
  }
};

inline double relevance_prob(int grade, double epsilon) {
  if (grade < 0 || grade > kMaxGrade) throw ConfigError("grade " + std::to_string(grade) + " outside 0..4");
  const double gain = (std::ldexp(1.0, grade) - 1.0) / (std::ldexp(1.0, kMaxGrade) - 1.0);
  return epsilon + (1.0 - epsilon) * gain;
}

inline double examination_prob(std::size_t position, double gamma) {
  return std::pow(1.0 / static_cast<double>(position), gamma);
}

// Displays the first cfg.display_length documents of `ranking` (a permutation
// of the query's document indices) and samples clicks independently.
inline Session simulate_session(const AnnotatedQuery& query, std::span<const std::size_t> ranking,
                                const ClickModelConfig& cfg, Rng& rng) {
  const std::size_t n = query.docs.size();
  if (ranking.size() != n) throw ConfigError("ranking length differs from the query's document count");
  std::vector<bool> seen(n, false);
  for (std::size_t idx : ranking) {
    if (idx >= n || seen[idx]) throw ConfigError("ranking for query " + query.query_id + " is not a permutation");
    seen[idx] = true;
  }
  Session s{query.query_id, {}};
  const std::size_t shown = std::min(n, cfg.display_length);
  s.docs.reserve(shown);
  for (std::size_t i = 0; i < shown; ++i) {
    const AnnotatedDoc& d = query.docs[ranking[i]];
    const double p = relevance_prob(d.grade, cfg.epsilon) * examination_prob(i + 1, cfg.gamma);
    s.docs.push_back(SessionDoc{d.features, static_cast<int>(i) + 1, rng.bernoulli(p) ? 1 : 0});
  }
  return s;
}

// Order in which the logging ranker presents a query's documents.
inline std::vector<std::size_t> logging_ranking(const AnnotatedQuery& query, const ClickModelConfig& cfg, Rng& rng) {
  std::vector<std::size_t> order(query.docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (cfg.logging_policy == LoggingPolicy::kRandom) {
    rng.shuffle(order);
    return order;
  }
  std::vector<double> key(order.size());
  for (std::size_t i = 0; i < key.size(); ++i) {
    key[i] = query.docs[i].features[cfg.logging_feature - 1];
    if (cfg.logging_noise > 0.0) key[i] += cfg.logging_noise * rng.normal();
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  return order;
}

struct GroundTruth {
  double gamma = 1.0;
  double epsilon = 0.1;
  // (1/i)^gamma for i = 1..10; entry 0 is 1.
  std::vector<double> normalized_propensity;
  // Per simulated session, the relevance probability of each displayed doc.
  std::vector<std::vector<double>> relevance_probs;

  std::string format(std::string_view config_hash) const {
    std::string out = provenance_header("ground-truth", config_hash);
    out += "# gamma=" + format_double(gamma) + " epsilon=" + format_double(epsilon) + "\n";
    for (std::size_t i = 0; i < normalized_propensity.size(); ++i) {
      if (i) out += ' ';
      out += format_double(normalized_propensity[i]);
    }
    out += '\n';
    return out;
  }

  static GroundTruth parse(std::istream& in) {
    GroundTruth gt;
    std::string line;
    bool have_vector = false;
    while (std::getline(in, line)) {
      const auto body = trim(line);
      if (body.empty()) continue;
      if (body.front() == '#') {
        for (const auto& tok : split_ws(body.substr(1))) {
          if (tok.rfind("gamma=", 0) == 0) gt.gamma = parse_double(tok.substr(6));
          if (tok.rfind("epsilon=", 0) == 0) gt.epsilon = parse_double(tok.substr(8));
        }
        continue;
      }
      if (have_vector) throw ParseError("ground truth has more than one vector line");
      for (const auto& tok : split_ws(body)) gt.normalized_propensity.push_back(parse_double(tok));
      have_vector = true;
    }
    if (!have_vector) throw ParseError("ground truth vector missing");
    return gt;
  }
};

inline GroundTruth export_ground_truth(const ClickModelConfig& cfg) {
  GroundTruth gt;
  gt.gamma = cfg.gamma;
  gt.epsilon = cfg.epsilon;
  for (std::size_t i = 1; i <= kTrainListLength; ++i) {
    gt.normalized_propensity.push_back(examination_prob(i, cfg.gamma) / examination_prob(1, cfg.gamma));
  }
  return gt;
}

struct ClickLog {
  std::vector<Session> sessions;
  GroundTruth truth;
};

// cfg.sessions_per_query sessions for every query, in query order.
inline ClickLog simulate_click_log(std::span<const AnnotatedQuery> queries, const ClickModelConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0x5e55));
  ClickLog log;
  log.truth = export_ground_truth(cfg);
  log.sessions.reserve(queries.size() * cfg.sessions_per_query);
  for (const auto& q : queries) {
    for (std::size_t k = 0; k < cfg.sessions_per_query; ++k) {
      const auto order = logging_ranking(q, cfg, rng);
      log.sessions.push_back(simulate_session(q, order, cfg, rng));
      std::vector<double> probs;
      for (std::size_t i = 0; i < log.sessions.back().size(); ++i) {
        probs.push_back(relevance_prob(q.docs[order[i]].grade, cfg.epsilon));
      }
      log.truth.relevance_probs.push_back(std::move(probs));
    }
  }
  return log;
}

// Synthetic annotated corpus with a known nonlinear relevance function.
struct CorpusConfig {
  std::size_t num_queries = 1000;
  std::size_t docs_min = 20;
  std::size_t docs_max = 30;
  double label_noise = 0.3;
  double proxy_noise = 1.0;  // noise of feature 14, a noisy relevance proxy
  std::uint64_t seed = 1;
  std::string qid_prefix = "q";
};

// Latent relevance of a raw feature vector; grades are cut points on it.
inline double latent_relevance(const FeatureVector& x) {
  return 1.0 * x[0] + 0.8 * x[1] - 0.6 * x[2] + 0.5 * x[3] * x[4] + 0.7 * std::tanh(2.0 * x[5]) +
         0.4 * x[6] * x[6] - 0.4 + 0.3 * x[7];
}

inline int grade_from_latent(double z) {
  static constexpr std::array<double, 4> kCuts = {0.6, 1.4, 2.1, 2.8};
  int g = 0;
  for (double c : kCuts) g += z > c ? 1 : 0;
  return g;
}

inline std::vector<AnnotatedQuery> synthesize_annotated(const CorpusConfig& cfg) {
  if (cfg.docs_min == 0 || cfg.docs_max < cfg.docs_min) throw ConfigError("need 1 <= docs_min <= docs_max");
  Rng rng(mix_seed(cfg.seed, 0xc0de));
  std::vector<AnnotatedQuery> out;
  out.reserve(cfg.num_queries);
  for (std::size_t q = 0; q < cfg.num_queries; ++q) {
    AnnotatedQuery query{cfg.qid_prefix + std::to_string(q + 1), {}};
    const std::size_t n = cfg.docs_min + rng.below(cfg.docs_max - cfg.docs_min + 1);
    for (std::size_t i = 0; i < n; ++i) {
      AnnotatedDoc d;
      for (std::size_t k = 0; k + 1 < kFeatureDim; ++k) d.features[k] = rng.normal();
      const double z = latent_relevance(d.features);
      d.features[kFeatureDim - 1] = z + cfg.proxy_noise * rng.normal();
      d.grade = grade_from_latent(z + cfg.label_noise * rng.normal());
      query.docs.push_back(d);
    }
    out.push_back(std::move(query));
  }
  return out;
}

}  // namespace cdla
