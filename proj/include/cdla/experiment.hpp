#pragma once

// Subcommand implementations shared by the CLI and the integration tests.
//
// Output layout under the --out directory:
//   annotated_train.txt, annotated_test.txt        generate
//   sessions.txt, ground_truth.txt                 simulate
//   feature_stats.txt                              train
//   runs/<method>/seed-<s>/{f,g,h}.ckpt, loss.tsv  train
//   reports/<method>.tsv, <method>.json            evaluate
//   reports/summary.tsv                            evaluate
//   propensity/<method>-seed-<s>.tsv               propensity-report
//   compare.tsv                                    compare

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cdla/clicksim.hpp"
#include "cdla/config.hpp"
#include "cdla/data.hpp"
#include "cdla/metrics.hpp"
#include "cdla/models.hpp"
#include "cdla/training.hpp"

namespace cdla {

namespace fs = std::filesystem;

inline fs::path input_or(const fs::path& configured, const fs::path& out, const char* file) {
  return configured.empty() ? out / file : configured;
}

inline fs::path run_dir(const fs::path& out, Method m, std::uint64_t seed) {
  return out / "runs" / std::string(method_name(m)) / ("seed-" + std::to_string(seed));
}

inline void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw IoError(std::string(what) + " '" + p.string() + "' does not exist");
}

struct GenerateResult {
  std::size_t train_queries = 0;
  std::size_t test_queries = 0;
};

inline GenerateResult cmd_generate(const ExperimentConfig& cfg, const fs::path& out) {
  const auto train = synthesize_annotated(cfg.corpus);
  const auto test = synthesize_annotated(cfg.test_corpus);
  const std::string h = provenance_header("annotated", cfg.hash());
  write_file_atomic(out / "annotated_train.txt", h + format_annotated(train));
  write_file_atomic(out / "annotated_test.txt", h + format_annotated(test));
  return {train.size(), test.size()};
}

struct SimulateResult {
  std::size_t sessions = 0;
  GroundTruth truth;
};

inline SimulateResult cmd_simulate(const ExperimentConfig& cfg, const fs::path& out) {
  const fs::path src = input_or(cfg.annotated_train, out, "annotated_train.txt");
  require_file(src, "annotated dataset");
  const auto queries = load_annotated(src);
  const ClickLog log = simulate_click_log(queries, cfg.click);
  write_file_atomic(out / "sessions.txt", provenance_header("sessions", cfg.hash()) + format_sessions(log.sessions));
  write_file_atomic(out / "ground_truth.txt", log.truth.format(cfg.hash()));
  return {log.sessions.size(), log.truth};
}

// Loads, filters and standardizes the training sessions.
inline std::pair<std::vector<Session>, FeatureStats> prepare_sessions(const ExperimentConfig& cfg, const fs::path& out) {
  const fs::path src = input_or(cfg.sessions, out, "sessions.txt");
  require_file(src, "session file");
  const auto filtered = filter_sessions(load_sessions(src));
  if (filtered.empty()) throw ConfigError("no sessions survive filtering");
  FeatureStats st = fit_feature_stats(filtered);
  return {normalize(filtered, st), st};
}

struct TrainRunSummary {
  Method method;
  std::uint64_t seed;
  fs::path dir;
  std::vector<std::string> checkpoints;
};

inline TrainConfig train_config_for(const ExperimentConfig& cfg, Method m, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.method = m;
  t.seed = seed;
  if (m == Method::kIpw) {
    if (cfg.ipw_propensity_path.empty()) throw ConfigError("method ipw needs train.ipw_propensity_path");
    t.ipw_propensity = load_propensity_vector(cfg.ipw_propensity_path);
  }
  return t;
}

inline void save_models(const TrainedModels& m, const fs::path& dir, std::string_view hash,
                        std::vector<std::string>* names) {
  if (m.listwise) {
    m.listwise->save(dir / "f.ckpt", hash);
    names->push_back("f.ckpt");
  }
  if (m.propensity) {
    m.propensity->save(dir / "g.ckpt", hash);
    names->push_back("g.ckpt");
  }
  if (m.pointwise) {
    m.pointwise->save(dir / "h.ckpt", hash);
    names->push_back("h.ckpt");
  }
}

inline std::vector<TrainRunSummary> cmd_train(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.validate();
  const auto [sessions, stats] = prepare_sessions(cfg, out);
  const std::string h = cfg.hash();
  write_file_atomic(out / "feature_stats.txt", provenance_header("feature-stats", h) + stats.format());
  std::vector<TrainRunSummary> runs;
  for (Method m : cfg.methods) {
    for (std::uint64_t seed : cfg.seeds) {
      const TrainConfig t = train_config_for(cfg, m, seed);
      TrainResult r = train(t, sessions);
      TrainRunSummary s{m, seed, run_dir(out, m, seed), {}};
      fs::create_directories(s.dir);
      // Remove checkpoints of an earlier run with a different model set.
      for (const char* f : {"f.ckpt", "g.ckpt", "h.ckpt"}) fs::remove(s.dir / f);
      save_models(r.models, s.dir, h, &s.checkpoints);
      write_file_atomic(s.dir / "loss.tsv", format_loss_curve(r.curve, h));
      runs.push_back(std::move(s));
    }
  }
  return runs;
}

// Scores a list with the model a method is evaluated with: the listwise model
// for cdla (and a listwise naive baseline), the pointwise model otherwise.
class EvalRanker {
 public:
  EvalRanker(const ExperimentConfig& cfg, Method m, const fs::path& dir) {
    const bool listwise = m == Method::kCdla || (m == Method::kNaive && cfg.train.naive_ranker == RankerKind::kListwise);
    if (listwise) {
      require_file(dir / "f.ckpt", "checkpoint");
      f_.emplace(ListwiseRanker::load(dir / "f.ckpt"));
    } else {
      require_file(dir / "h.ckpt", "checkpoint");
      h_.emplace(PointwiseRanker::load(dir / "h.ckpt"));
    }
  }

  std::vector<double> operator()(const Tensor& x) { return f_ ? f_->score(x) : h_->score(x); }

 private:
  std::optional<ListwiseRanker> f_;
  std::optional<PointwiseRanker> h_;
};

inline FeatureStats load_feature_stats(const fs::path& out) {
  require_file(out / "feature_stats.txt", "feature statistics");
  std::istringstream in(read_file(out / "feature_stats.txt"));
  return FeatureStats::parse(in);
}

struct MethodEvaluation {
  Method method;
  std::vector<EvalReport> per_seed;
  EvalReport combined;  // per-query values averaged over seeds
};

inline EvalReport average_reports(std::span<const EvalReport> reports) {
  EvalReport r = reports.front();
  for (std::size_t k = 1; k < reports.size(); ++k) {
    if (reports[k].query_ids != r.query_ids) throw ConfigError("seed reports cover different queries");
    for (std::size_t c = 0; c < r.columns.size(); ++c) {
      for (std::size_t q = 0; q < r.query_ids.size(); ++q) r.columns[c].per_query[q] += reports[k].columns[c].per_query[q];
    }
  }
  for (auto& c : r.columns) {
    for (double& v : c.per_query) v /= static_cast<double>(reports.size());
  }
  return r;
}

inline nlohmann::json report_json(const MethodEvaluation& e, std::span<const std::uint64_t> seeds, std::string_view hash) {
  nlohmann::json j;
  j["method"] = e.combined.method;
  j["version"] = kArtifactVersion;
  j["config_hash"] = hash;
  j["rows"] = nlohmann::json::array();
  for (const auto& c : e.combined.columns) {
    nlohmann::json row{{"method", e.combined.method}, {"K", c.k}, {"metric", c.metric}, {"value", c.mean()}};
    row["p_value"] = c.p_value ? nlohmann::json(*c.p_value) : nlohmann::json(nullptr);
    nlohmann::json per_seed = nlohmann::json::object();
    for (std::size_t s = 0; s < e.per_seed.size(); ++s) {
      per_seed[std::to_string(seeds[s])] = e.per_seed[s].column(c.metric, c.k).mean();
    }
    row["per_seed"] = per_seed;
    j["rows"].push_back(row);
  }
  return j;
}

inline std::vector<MethodEvaluation> cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.validate();
  const fs::path test_path = input_or(cfg.annotated_test, out, "annotated_test.txt");
  require_file(test_path, "annotated test set");
  const FeatureStats stats = load_feature_stats(out);
  const auto test = normalize(load_annotated(test_path), stats);
  const std::string h = cfg.hash();
  std::vector<MethodEvaluation> evals;
  for (Method m : cfg.methods) {
    MethodEvaluation e{m, {}, {}};
    for (std::uint64_t seed : cfg.seeds) {
      EvalRanker ranker(cfg, m, run_dir(out, m, seed));
      e.per_seed.push_back(evaluate_ranker(std::string(method_name(m)), test, ranker));
    }
    e.combined = average_reports(e.per_seed);
    evals.push_back(std::move(e));
  }
  if (cfg.baseline) {
    const MethodEvaluation* base = nullptr;
    for (const auto& e : evals) {
      if (e.method == *cfg.baseline) base = &e;
    }
    if (base != nullptr) {
      const EvalReport base_report = base->combined;
      for (auto& e : evals) annotate_significance(e.combined, base_report);
    }
  }
  std::string summary = provenance_header("eval-summary", h);
  summary += "method\tK\tmetric\tmean\tstd\tper_seed\tp_value\tsignificant\n";
  for (const auto& e : evals) {
    const std::string name(method_name(e.method));
    write_file_atomic(out / "reports" / (name + ".tsv"), e.combined.format_tsv(h));
    write_file_atomic(out / "reports" / (name + ".json"), report_json(e, cfg.seeds, h).dump(2) + "\n");
    for (const auto& c : e.combined.columns) {
      std::vector<double> vals;
      for (const auto& r : e.per_seed) vals.push_back(r.column(c.metric, c.k).mean());
      double mean = 0.0, var = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      for (double v : vals) var += (v - mean) * (v - mean);
      const double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
      std::string per_seed;
      for (double v : vals) per_seed += (per_seed.empty() ? "" : ",") + format_double(v);
      const bool sig = c.p_value && *c.p_value <= kSignificanceLevel && e.method != cfg.baseline;
      summary += name + "\t" + std::to_string(c.k) + "\t" + c.metric + "\t" + format_double(mean) + "\t" +
                 format_double(sd) + "\t" + per_seed + "\t" + (c.p_value ? format_double(*c.p_value) : "-") + "\t" +
                 (sig ? "*" : "") + "\n";
    }
  }
  write_file_atomic(out / "reports" / "summary.tsv", summary);
  return evals;
}

struct PropensityReportResult {
  Method method;
  std::uint64_t seed;
  std::vector<PropensityRow> rows;
};

inline std::vector<PropensityReportResult> cmd_propensity_report(const ExperimentConfig& cfg, const fs::path& out) {
  std::optional<GroundTruth> truth;
  const fs::path gt_path = input_or(cfg.ground_truth, out, "ground_truth.txt");
  if (fs::exists(gt_path)) {
    std::istringstream in(read_file(gt_path));
    truth = GroundTruth::parse(in);
  }
  std::vector<Session> sessions;
  const fs::path sess_path = input_or(cfg.sessions, out, "sessions.txt");
  if (fs::exists(sess_path)) sessions = filter_sessions(load_sessions(sess_path));
  const std::string h = cfg.hash();
  std::vector<PropensityReportResult> results;
  for (Method m : cfg.methods) {
    for (std::uint64_t seed : cfg.seeds) {
      const fs::path ckpt = run_dir(out, m, seed) / "g.ckpt";
      if (!fs::exists(ckpt)) continue;
      const PropensityModel g = PropensityModel::load(ckpt);
      PropensityReportResult r{m, seed, propensity_report(g, truth ? &*truth : nullptr, sessions)};
      write_file_atomic(out / "propensity" / (std::string(method_name(m)) + "-seed-" + std::to_string(seed) + ".tsv"),
                        format_propensity_report(r.rows, h));
      results.push_back(std::move(r));
    }
  }
  if (results.empty()) throw ConfigError("no propensity checkpoints found under '" + (out / "runs").string() + "'");
  return results;
}

inline EvalReport load_report(const fs::path& path) {
  require_file(path, "report");
  std::istringstream in(read_file(path));
  return EvalReport::parse_tsv(in);
}

// Significance table of report a against baseline report b.
inline std::string cmd_compare(const fs::path& report_a, const fs::path& report_b, const fs::path& out,
                               std::string_view config_hash) {
  const EvalReport a = load_report(report_a);
  const EvalReport b = load_report(report_b);
  const auto rows = compare_reports(a, b);
  const std::string text = format_comparison(a, b, rows, config_hash);
  if (!out.empty()) write_file_atomic(out / "compare.tsv", text);
  return text;
}

}  // namespace cdla
