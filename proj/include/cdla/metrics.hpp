#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdla/clicksim.hpp"
#include "cdla/data.hpp"
#include "cdla/error.hpp"
#include "cdla/models.hpp"
#include "cdla/text.hpp"

namespace cdla {

inline constexpr std::array<std::size_t, 4> kCutoffs = {1, 3, 5, 10};
inline constexpr double kSignificanceLevel = 0.05;

inline double graded_gain(int grade) { return std::ldexp(1.0, grade) - 1.0; }

// nDCG@k with gain 2^g - 1 and discount 1/log2(i + 1); 0 when the ideal DCG is 0.
inline double ndcg_at_k(std::span<const int> grades, std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  const std::size_t depth = std::min(k, grades.size());
  double dcg = 0.0;
  for (std::size_t i = 0; i < depth; ++i) dcg += graded_gain(grades[i]) / std::log2(static_cast<double>(i) + 2.0);
  std::vector<int> ideal(grades.begin(), grades.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < depth; ++i) idcg += graded_gain(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

// ERR@k with stopping probability R = (2^g - 1) / 2^4.
inline double err_at_k(std::span<const int> grades, std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  double err = 0.0;
  double reach = 1.0;
  const double denom = std::ldexp(1.0, kMaxGrade);
  for (std::size_t r = 0; r < std::min(k, grades.size()); ++r) {
    if (grades[r] < 0 || grades[r] > kMaxGrade) throw ConfigError("grade outside 0..4");
    const double stop = graded_gain(grades[r]) / denom;
    err += reach * stop / static_cast<double>(r + 1);
    reach *= 1.0 - stop;
  }
  return err;
}

// Document indices ordered by descending score, ties by original index.
inline std::vector<std::size_t> rank_by_scores(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Two-sided paired t-test on a - b. Zero variance of the differences gives
// p = 1 when their mean is 0 and p = 0 otherwise.
inline double paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("paired t-test: lengths differ");
  const std::size_t n = a.size();
  if (n < 2) throw ConfigError("paired t-test needs at least 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const double se = sd / std::sqrt(static_cast<double>(n));
  if (se <= 1e-300 || se <= 1e-15 * std::abs(mean)) return mean == 0.0 ? 1.0 : 0.0;
  const double t = mean / se;
  if (t == 0.0) return 1.0;
  boost::math::students_t dist(static_cast<double>(n - 1));
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

// Kendall tau-b between two score vectors over the same items.
inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("kendall tau: lengths differ");
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0.0 && db == 0.0) continue;
      if (da == 0.0) ++ties_a;
      else if (db == 0.0) ++ties_b;
      else if ((da > 0.0) == (db > 0.0)) ++concordant;
      else ++discordant;
    }
  }
  const double n0 = static_cast<double>(concordant + discordant + ties_a);
  const double n1 = static_cast<double>(concordant + discordant + ties_b);
  if (n0 == 0.0 || n1 == 0.0) return 1.0;
  return static_cast<double>(concordant - discordant) / std::sqrt(n0 * n1);
}

struct MetricColumn {
  std::string metric;  // "ndcg" or "err"
  std::size_t k = 0;
  std::vector<double> per_query;
  std::optional<double> p_value;

  double mean() const {
    if (per_query.empty()) return 0.0;
    double s = 0.0;
    for (double v : per_query) s += v;
    return s / static_cast<double>(per_query.size());
  }

  std::string label() const { return metric + "@" + std::to_string(k); }
};

struct EvalReport {
  std::string method;
  std::vector<std::string> query_ids;
  std::vector<MetricColumn> columns;  // ndcg@1,3,5,10 then err@1,3,5,10

  const MetricColumn& column(std::string_view metric, std::size_t k) const {
    for (const auto& c : columns) {
      if (c.metric == metric && c.k == k) return c;
    }
    throw ConfigError("report has no column " + std::string(metric) + "@" + std::to_string(k));
  }

  double mean(std::string_view metric, std::size_t k) const { return column(metric, k).mean(); }

  // TSV: per-query rows followed by mean rows (qid "*").
  std::string format_tsv(std::string_view config_hash) const {
    std::string out = provenance_header("eval-report", config_hash);
    out += "method\tqid\tK\tmetric\tvalue\tp_value\n";
    for (std::size_t q = 0; q < query_ids.size(); ++q) {
      for (const auto& c : columns) {
        out += method + "\t" + query_ids[q] + "\t" + std::to_string(c.k) + "\t" + c.metric + "\t" +
               format_double(c.per_query[q]) + "\t-\n";
      }
    }
    for (const auto& c : columns) {
      out += method + "\t*\t" + std::to_string(c.k) + "\t" + c.metric + "\t" + format_double(c.mean()) + "\t" +
             (c.p_value ? format_double(*c.p_value) : std::string("-")) + "\n";
    }
    return out;
  }

  static EvalReport parse_tsv(std::istream& in) {
    EvalReport r;
    std::map<std::string, std::size_t> col_index, q_index;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      const auto f = split(line, '\t');
      if (!header_seen) {
        if (f.size() != 6 || f[0] != "method") throw ParseError("report header row missing", line_no);
        header_seen = true;
        continue;
      }
      if (f.size() != 6) throw ParseError("report row needs 6 fields", line_no);
      if (r.method.empty()) r.method = f[0];
      const std::size_t k = parse_size(f[2]);
      const std::string label = f[3] + "@" + f[2];
      auto [cit, new_col] = col_index.try_emplace(label, r.columns.size());
      if (new_col) r.columns.push_back(MetricColumn{f[3], k, {}, std::nullopt});
      MetricColumn& col = r.columns[cit->second];
      if (f[1] == "*") {
        if (f[5] != "-") col.p_value = parse_double(f[5]);
        continue;
      }
      auto [qit, new_q] = q_index.try_emplace(f[1], r.query_ids.size());
      if (new_q) r.query_ids.push_back(f[1]);
      if (col.per_query.size() != qit->second) throw ParseError("report rows out of order", line_no);
      col.per_query.push_back(parse_double(f[4]));
    }
    for (const auto& c : r.columns) {
      if (c.per_query.size() != r.query_ids.size()) throw ParseError("report has ragged per-query columns");
    }
    return r;
  }
};

inline EvalReport empty_report(std::string method) {
  EvalReport r;
  r.method = std::move(method);
  for (const char* m : {"ndcg", "err"}) {
    for (std::size_t k : kCutoffs) r.columns.push_back(MetricColumn{m, k, {}, std::nullopt});
  }
  return r;
}

// Evaluates a scorer (list features -> scores) on annotated queries. Each
// query is ranked by descending score, ties broken by document index.
template <typename Scorer>
EvalReport evaluate_ranker(std::string method, std::span<const AnnotatedQuery> queries, Scorer&& scorer) {
  EvalReport r = empty_report(std::move(method));
  std::vector<int> ranked;
  for (const auto& q : queries) {
    if (q.docs.empty()) throw ConfigError("query " + q.query_id + " has no documents");
    const Tensor x = feature_matrix(std::span<const AnnotatedDoc>(q.docs));
    const std::vector<double> scores = scorer(x);
    ranked.clear();
    for (std::size_t i : rank_by_scores(scores)) ranked.push_back(q.docs[i].grade);
    r.query_ids.push_back(q.query_id);
    for (auto& c : r.columns) {
      c.per_query.push_back(c.metric == "ndcg" ? ndcg_at_k(ranked, c.k) : err_at_k(ranked, c.k));
    }
  }
  return r;
}

// Fills p-values of `report` against `baseline` (paired per query).
inline void annotate_significance(EvalReport& report, const EvalReport& baseline) {
  if (report.query_ids != baseline.query_ids) throw ConfigError("reports cover different queries");
  for (auto& c : report.columns) {
    c.p_value = paired_t_test(c.per_query, baseline.column(c.metric, c.k).per_query);
  }
}

struct ComparisonRow {
  std::string metric;
  std::size_t k = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double p_value = 1.0;
  bool significant = false;
};

// Per-metric comparison of report a against baseline b. A row is marked
// significant exactly when p <= 0.05.
inline std::vector<ComparisonRow> compare_reports(const EvalReport& a, const EvalReport& b) {
  if (a.query_ids != b.query_ids) throw ConfigError("reports cover different queries");
  std::vector<ComparisonRow> rows;
  for (const auto& c : a.columns) {
    const auto& cb = b.column(c.metric, c.k);
    ComparisonRow row{c.metric, c.k, c.mean(), cb.mean(), paired_t_test(c.per_query, cb.per_query), false};
    row.significant = row.p_value <= kSignificanceLevel;
    rows.push_back(row);
  }
  return rows;
}

inline std::string format_comparison(const EvalReport& a, const EvalReport& b, std::span<const ComparisonRow> rows,
                                     std::string_view config_hash) {
  std::string out = provenance_header("comparison", config_hash);
  out += "metric\tK\t" + a.method + "\t" + b.method + "\tdelta\tp_value\tsignificant\n";
  for (const auto& r : rows) {
    out += r.metric + "\t" + std::to_string(r.k) + "\t" + format_double(r.mean_a) + "\t" + format_double(r.mean_b) +
           "\t" + format_double(r.mean_a - r.mean_b) + "\t" + format_double(r.p_value) + "\t" +
           (r.significant ? "*" : "") + "\n";
  }
  return out;
}

struct PropensityRow {
  std::size_t position = 0;
  double learned = 0.0;
  std::optional<double> truth;
  std::optional<double> ctr;
  std::optional<double> deviation;
};

// Click-through rate per position: clicks / sessions that displayed it.
inline std::vector<double> ctr_by_position(std::span<const Session> sessions, std::size_t positions) {
  std::vector<double> clicks(positions, 0.0), shown(positions, 0.0);
  for (const auto& s : sessions) {
    for (const auto& d : s.docs) {
      const auto i = static_cast<std::size_t>(d.position - 1);
      if (i >= positions) continue;
      shown[i] += 1.0;
      clicks[i] += d.click;
    }
  }
  std::vector<double> ctr(positions, 0.0);
  for (std::size_t i = 0; i < positions; ++i) ctr[i] = shown[i] > 0.0 ? clicks[i] / shown[i] : 0.0;
  return ctr;
}

inline std::vector<PropensityRow> propensity_report(const PropensityModel& model, const GroundTruth* truth,
                                                    std::span<const Session> sessions = {}) {
  const PropensityVector pv = model.propensity();
  std::vector<PropensityRow> rows;
  const std::vector<double> ctr = sessions.empty() ? std::vector<double>{} : ctr_by_position(sessions, pv.normalized.size());
  for (std::size_t i = 0; i < pv.normalized.size(); ++i) {
    PropensityRow r{i + 1, pv.normalized[i], std::nullopt, std::nullopt, std::nullopt};
    if (truth != nullptr && i < truth->normalized_propensity.size()) {
      r.truth = truth->normalized_propensity[i];
      r.deviation = std::abs(r.learned - *r.truth);
    }
    if (!ctr.empty()) r.ctr = ctr[i];
    rows.push_back(r);
  }
  return rows;
}

inline std::string format_propensity_report(std::span<const PropensityRow> rows, std::string_view config_hash) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("-"); };
  std::string out = provenance_header("propensity-report", config_hash);
  out += "position\tlearned\ttruth\tctr\tabs_deviation\n";
  for (const auto& r : rows) {
    out += std::to_string(r.position) + "\t" + format_double(r.learned) + "\t" + opt(r.truth) + "\t" + opt(r.ctr) +
           "\t" + opt(r.deviation) + "\n";
  }
  return out;
}

}  // namespace cdla
