// End-to-end acceptance run on synthetic data with known ground truth.
// Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cdla/cdla.hpp"
#include "gradcheck.hpp"
#include "metric_oracle.hpp"

namespace {

using namespace cdla;
namespace fs = std::filesystem;

// Tolerances and thresholds.
constexpr double kPropensityTolerance = 0.1;
constexpr double kPropensityRuntimeSeconds = 600.0;
constexpr double kMinGainOverNaive = 0.01;
constexpr double kMinMeanKendallTau = 0.9;
constexpr double kDistillGap = 1e-2;
constexpr double kDistillShare = 0.9;
constexpr double kGradTolerance = 1e-4;
constexpr int kGradInstances = 100;
constexpr double kMetricTolerance = 1e-9;
constexpr int kMetricLists = 1000;
constexpr double kReductionTolerance = 1e-12;

// Synthetic setup shared by criteria 1-4: gamma 1, epsilon 0.1, 1000 queries,
// 50 sessions per query, logged by a ranker that sorts on the noisy relevance
// proxy (feature 14), so position bias correlates with relevance.
constexpr const char* kSetup = R"(
[corpus]
num_queries = 1000
docs_min = 20
docs_max = 30
[test_corpus]
num_queries = 200
docs_min = 20
docs_max = 40
[click]
gamma = 1
epsilon = 0.1
sessions_per_query = 50
logging_policy = feature
logging_feature = 14
logging_noise = 0
[train]
batch_size = 30
steps = 10000
learning_rate = 3e-4
propensity_learning_rate = 1e-3
student_learning_rate = 3e-4
encoder_layers = 1
encoder_heads = 4
log_every = 1000
[experiment]
methods = naive, dla, cdla_ld
seeds = 1, 2, 3, 4, 5
baseline = naive
)";

int failures = 0;

void report(int id, bool pass, const std::string& what) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_propensity_deviation(const PropensityModel& g) {
  const auto pv = g.propensity();
  double worst = 0.0;
  for (std::size_t i = 0; i < pv.normalized.size(); ++i) {
    worst = std::max(worst, std::abs(pv.normalized[i] - 1.0 / static_cast<double>(i + 1)));
  }
  return worst;
}

double mean_ndcg10(const EvalReport& r) { return r.mean("ndcg", 10); }

struct Pipeline {
  ExperimentConfig cfg;
  fs::path out;
  std::vector<MethodEvaluation> evals;
  double dla_seconds = 0.0;  // generate + simulate + one DLA training run
};

const MethodEvaluation& eval_of(const Pipeline& p, Method m) {
  for (const auto& e : p.evals) {
    if (e.method == m) return e;
  }
  throw ConfigError("method missing from evaluation");
}

Pipeline run_main_pipeline() {
  Pipeline p{parse_config(kSetup), fs::temp_directory_path() / "cdla_acceptance", {}, 0.0};
  fs::remove_all(p.out);
  fs::create_directories(p.out);

  // Criterion 1 clock: one complete DLA experiment from an empty directory.
  const auto t0 = std::chrono::steady_clock::now();
  cmd_generate(p.cfg, p.out);
  cmd_simulate(p.cfg, p.out);
  ExperimentConfig dla_only = p.cfg;
  dla_only.methods = {Method::kDla};
  dla_only.seeds = {1};
  cmd_train(dla_only, p.out);
  p.dla_seconds = seconds_since(t0);
  std::printf("  dla seed 1 pipeline: %.1f s\n", p.dla_seconds);

  const auto t1 = std::chrono::steady_clock::now();
  cmd_train(p.cfg, p.out);
  std::printf("  training %zu methods x %zu seeds: %.1f s\n", p.cfg.methods.size(), p.cfg.seeds.size(),
              seconds_since(t1));
  p.evals = cmd_evaluate(p.cfg, p.out);
  for (const auto& e : p.evals) {
    std::printf("  %-8s nDCG@10 per seed:", std::string(method_name(e.method)).c_str());
    for (const auto& r : e.per_seed) std::printf(" %.4f", mean_ndcg10(r));
    std::printf("  mean %.4f\n", mean_ndcg10(e.combined));
  }
  return p;
}

void criterion1(const Pipeline& p) {
  const auto dla = PropensityModel::load(run_dir(p.out, Method::kDla, 1) / "g.ckpt");
  const auto cdla_ld = PropensityModel::load(run_dir(p.out, Method::kCdlaLd, 1) / "g.ckpt");
  const double d_dla = max_propensity_deviation(dla);
  const double d_ld = max_propensity_deviation(cdla_ld);
  std::printf("  learned normalized propensity (dla):");
  for (double v : dla.propensity().normalized) std::printf(" %.3f", v);
  std::printf("\n");
  const bool pass = std::min(d_dla, d_ld) <= kPropensityTolerance && p.dla_seconds <= kPropensityRuntimeSeconds;
  report(1, pass,
         "propensity recovery, max |g(i)/g(1) - 1/i|: dla " + fmt("%.4f", d_dla) + ", cdla_ld " + fmt("%.4f", d_ld) +
             " (limit 0.1); dla run " + fmt("%.0f", p.dla_seconds) + " s (limit 600 s)");
}

void criterion2(const Pipeline& p) {
  const double naive = mean_ndcg10(eval_of(p, Method::kNaive).combined);
  const double dla = mean_ndcg10(eval_of(p, Method::kDla).combined);
  const double ld = mean_ndcg10(eval_of(p, Method::kCdlaLd).combined);
  const bool pass = dla > naive && ld >= dla && ld - naive >= kMinGainOverNaive;
  report(2, pass,
         "debiasing gap over 5 seeds, nDCG@10: naive " + fmt("%.4f", naive) + ", dla " + fmt("%.4f", dla) +
             ", cdla_ld " + fmt("%.4f", ld) + " (need dla > naive, cdla_ld >= dla, cdla_ld - naive >= 0.01)");
}

// CDLA is the teacher f of the cdla_ld runs: the student never feeds back into
// f or g, so f is bit-identical to a standalone cdla run. This is re-checked
// here on a short run before the checkpoints are reused.
void criterion3(const Pipeline& p) {
  const auto [sessions, stats] = prepare_sessions(p.cfg, p.out);
  TrainConfig shortcfg = train_config_for(p.cfg, Method::kCdla, 1);
  shortcfg.steps = 200;
  TrainConfig with_student = shortcfg;
  with_student.method = Method::kCdlaLd;
  const auto a = train(shortcfg, sessions);
  const auto b = train(with_student, sessions);
  const bool identical = a.models.listwise->params().same_values(b.models.listwise->params()) &&
                         a.models.propensity->params().same_values(b.models.propensity->params());

  const auto test = normalize(load_annotated(p.out / "annotated_test.txt"), stats);
  std::size_t other_length = 0;
  for (const auto& q : test) other_length += q.docs.size() != kTrainListLength ? 1 : 0;
  std::vector<EvalReport> cdla;
  for (std::uint64_t seed : p.cfg.seeds) {
    ListwiseRanker f = ListwiseRanker::load(run_dir(p.out, Method::kCdlaLd, seed) / "f.ckpt");
    cdla.push_back(evaluate_ranker("cdla", test, [&](const Tensor& x) { return f.score(x); }));
  }
  std::printf("  cdla     nDCG@10 per seed:");
  for (const auto& r : cdla) std::printf(" %.4f", mean_ndcg10(r));
  std::printf("\n");
  const double cdla_mean = mean_ndcg10(average_reports(cdla));
  const double ld = mean_ndcg10(eval_of(p, Method::kCdlaLd).combined);
  const bool pass = identical && other_length == test.size() && ld > cdla_mean;
  report(3, pass,
         "ablation on " + std::to_string(other_length) + "/" + std::to_string(test.size()) +
             " test lists of length != 10, nDCG@10: cdla_ld " + fmt("%.4f", ld) + " vs cdla " + fmt("%.4f", cdla_mean) +
             (identical ? "" : " (teacher not detached!)"));
}

void criterion4(const Pipeline& p) {
  const auto [sessions, stats] = prepare_sessions(p.cfg, p.out);
  double tau_sum = 0.0;
  std::size_t lists = 0, close = 0;
  for (std::uint64_t seed : p.cfg.seeds) {
    ListwiseRanker f = ListwiseRanker::load(run_dir(p.out, Method::kCdlaLd, seed) / "f.ckpt");
    PointwiseRanker h = PointwiseRanker::load(run_dir(p.out, Method::kCdlaLd, seed) / "h.ckpt");
    // Score the training lists in stacked chunks.
    constexpr std::size_t kChunk = 2000;
    for (std::size_t start = 0; start < sessions.size(); start += kChunk) {
      std::vector<std::size_t> picks;
      for (std::size_t k = start; k < std::min(sessions.size(), start + kChunk); ++k) picks.push_back(k);
      const Batch b = make_batch(sessions, picks);
      Graph g;
      const Tensor fs_ = f.score(g, g.constant(b.features), b.seg).value();
      const Tensor hs = h.score(g, g.constant(b.features)).value();
      for (std::size_t s = 0; s < b.seg.count(); ++s) {
        const std::span<const double> fv(fs_.data() + b.seg.begin(s), b.seg.size(s));
        const std::span<const double> hv(hs.data() + b.seg.begin(s), b.seg.size(s));
        tau_sum += kendall_tau(hv, fv);
        const double gap = loss_distill(fv, hv) - softmax_entropy(fv);
        close += gap <= kDistillGap ? 1 : 0;
        ++lists;
      }
    }
  }
  const double tau = tau_sum / static_cast<double>(lists);
  const double share = static_cast<double>(close) / static_cast<double>(lists);
  report(4, tau >= kMinMeanKendallTau && share >= kDistillShare,
         "distillation fidelity on " + std::to_string(lists) + " training lists: mean Kendall tau(h, f) " +
             fmt("%.4f", tau) + " (need >= 0.9); distill loss within 1e-2 of teacher entropy on " +
             fmt("%.1f", 100.0 * share) + "% (need >= 90%)");
}

// Criterion 5: central differences against reverse mode for every model and loss.
void criterion5() {
  Rng rng(20240605);
  struct Audit {
    std::string name;
    double worst = 0.0;
  };
  std::vector<Audit> audits;
  auto run = [&](const std::string& name, const std::function<double(int)>& instance) {
    Audit a{name, 0.0};
    for (int i = 0; i < kGradInstances; ++i) a.worst = std::max(a.worst, instance(i));
    audits.push_back(a);
  };
  auto random_targets = [&](std::size_t n) {
    Tensor t(n, 1);
    for (double& v : t.values()) v = rng.uniform(0.05, 1.0);
    return t;
  };

  run("pointwise ranker h", [&](int i) {
    PointwiseRanker h(1000 + static_cast<std::uint64_t>(i));
    const std::size_t n = 2 + rng.below(8);
    const Tensor x = testing::random_tensor(n, kFeatureDim, rng, -2, 2);
    const Tensor t = random_targets(n);
    const auto seg = Segments::single(n);
    const double ep = testing::check_params(
        h.params(), [&](Graph& g) { return softmax_cross_entropy(h.score(g, g.constant(x)), t, seg); }, rng, 4).rel_error;
    const double ex = testing::check_inputs(
        [&](Graph&, const std::vector<Var>& v) { return softmax_cross_entropy(h.score(v[0].graph(), v[0]), t, seg); },
        {x}).rel_error;
    return std::max(ep, ex);
  });
  run("listwise ranker f", [&](int i) {
    const std::size_t heads = std::array<std::size_t, 3>{2, 4, 8}[static_cast<std::size_t>(i) % 3];
    ListwiseRanker f(2000 + static_cast<std::uint64_t>(i), EncoderConfig{1 + static_cast<std::size_t>(i) % 2, heads});
    const std::vector<std::size_t> sizes = {1 + rng.below(6), 1 + rng.below(6)};
    const auto seg = Segments::from_sizes(sizes);
    const Tensor x = testing::random_tensor(seg.total(), kFeatureDim, rng, -2, 2);
    const Tensor t = random_targets(seg.total());
    const double ep = testing::check_params(
        f.params(), [&](Graph& g) { return softmax_cross_entropy(f.score(g, g.constant(x), seg), t, seg); }, rng, 2)
                          .rel_error;
    const double ex = testing::check_inputs(
        [&](Graph&, const std::vector<Var>& v) {
          return softmax_cross_entropy(f.score(v[0].graph(), v[0], seg), t, seg);
        },
        {x}).rel_error;
    return std::max(ep, ex);
  });
  run("propensity model g", [&](int) {
    PropensityModel g;
    std::vector<double> logits(10);
    for (double& l : logits) l = rng.uniform(-3, 3);
    g.set_logits(logits);
    std::vector<std::size_t> slots;
    for (std::size_t p = 0; p < 10; ++p) slots.push_back(p);
    const Tensor t = random_targets(10);
    return testing::check_params(
               g.params(),
               [&](Graph& gr) { return softmax_cross_entropy(gather_rows(g.scores(gr), slots), t, Segments::single(10)); },
               rng)
        .rel_error;
  });

  auto loss_instance = [&](const std::function<Var(Var, const Tensor&, const Tensor&, const Tensor&, const Segments&)>& fn) {
    return [&, fn](int) {
      const std::vector<std::size_t> sizes = {1 + rng.below(10), 1 + rng.below(10), 1 + rng.below(10)};
      const auto seg = Segments::from_sizes(sizes);
      const std::size_t n = seg.total();
      Tensor clicks(n, 1), weights(n, 1);
      for (std::size_t s = 0; s < seg.count(); ++s) {
        for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) clicks[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
        clicks[seg.begin(s) + rng.below(seg.size(s))] = 1.0;
      }
      for (double& w : weights.values()) w = rng.uniform(0.1, 10.0);
      const Tensor teacher = testing::random_tensor(n, 1, rng, -4, 4);
      const Tensor scores = testing::random_tensor(n, 1, rng, -4, 4);
      return testing::check_inputs(
                 [&](Graph&, const std::vector<Var>& v) { return fn(v[0], clicks, weights, teacher, seg); }, {scores})
          .rel_error;
    };
  };
  run("listwise softmax loss", loss_instance([](Var s, const Tensor& c, const Tensor&, const Tensor&, const Segments& seg) {
        return listwise_softmax_loss(s, c, seg);
      }));
  run("ipw loss", loss_instance([](Var s, const Tensor& c, const Tensor& w, const Tensor&, const Segments& seg) {
        return ipw_loss(s, c, w, seg);
      }));
  run("irw loss", loss_instance([](Var s, const Tensor& c, const Tensor& w, const Tensor&, const Segments& seg) {
        return irw_loss(s, c, w, seg);
      }));
  run("distill loss", loss_instance([](Var s, const Tensor&, const Tensor&, const Tensor& t, const Segments& seg) {
        return distill_loss(t, s, seg);
      }));

  bool pass = true;
  std::string detail;
  for (const auto& a : audits) {
    pass = pass && a.worst < kGradTolerance;
    detail += (detail.empty() ? "" : ", ") + a.name + " " + fmt("%.1e", a.worst);
  }
  report(5, pass, "gradient audit, worst relative error over 100 instances each (limit 1e-4): " + detail);
}

void criterion6() {
  Rng rng(6);
  double worst = 0.0;
  for (int i = 0; i < kMetricLists; ++i) {
    std::vector<int> grades(1 + rng.below(50));
    for (int& g : grades) g = static_cast<int>(rng.below(5));
    for (std::size_t k : kCutoffs) {
      worst = std::max(worst, std::abs(ndcg_at_k(grades, k) - testing::brute_ndcg(grades, k)));
      worst = std::max(worst, std::abs(err_at_k(grades, k) - testing::brute_err(grades, k)));
    }
  }
  const std::string n = fmt("%.4f", ndcg_at_k(std::vector<int>{2, 3, 0}, 3));
  const std::string e1 = fmt("%.4f", err_at_k(std::vector<int>{4}, 1));
  const std::string e2 = fmt("%.4f", err_at_k(std::vector<int>{4, 4}, 2));
  const bool pass = worst <= kMetricTolerance && n == "0.8340" && e1 == "0.9375" && e2 == "0.9668";
  report(6, pass,
         "metric oracles: max |diff| vs brute force over 1000 lists " + fmt("%.1e", worst) + "; nDCG " + n + ", ERR " +
             e1 + ", " + e2);
}

void criterion7(const Pipeline& p) {
  const auto [sessions, stats] = prepare_sessions(p.cfg, p.out);
  TrainConfig naive = train_config_for(p.cfg, Method::kNaive, 1);
  TrainConfig dla = train_config_for(p.cfg, Method::kDla, 1);
  naive.weight_clip_max = dla.weight_clip_max = 1.0;
  naive.steps = dla.steps = 500;
  naive.log_every = dla.log_every = 1;
  const auto rn = train(naive, sessions);
  const auto rd = train(dla, sessions);
  std::size_t steps = 0, equal = 0;
  std::size_t j = 0;
  for (const auto& rec : rd.curve) {
    if (rec.name != "ipw") continue;
    ++steps;
    if (j < rn.curve.size() && rn.curve[j].value == rec.value) ++equal;
    ++j;
  }
  const bool params_equal = rn.models.pointwise->params().same_values(rd.models.pointwise->params());

  Rng rng(7);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(20);
    std::vector<double> s(n), c(n), w(n, 1.0);
    for (double& v : s) v = rng.uniform(-5, 5);
    for (double& v : c) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    c[rng.below(n)] = 1.0;
    worst = std::max(worst, std::abs(loss_ipw(s, c, w) - loss_listwise_softmax(s, c)));
  }
  const bool pass = steps == 500 && equal == steps && params_equal && worst <= kReductionTolerance;
  report(7, pass,
         "reductions: dla with clip 1 equals naive on " + std::to_string(equal) + "/" + std::to_string(steps) +
             " step losses, final parameters " + (params_equal ? "identical" : "DIFFER") +
             "; max |ipw(unit) - softmax| " + fmt("%.1e", worst));
}

void criterion8() {
  ExperimentConfig c = parse_config(kSetup);
  c.corpus.num_queries = 150;
  c.test_corpus.num_queries = 40;
  c.click.sessions_per_query = 10;
  c.train.steps = 200;
  c.train.log_every = 10;
  c.methods = {Method::kNaive, Method::kDla, Method::kCdla, Method::kCdlaLd, Method::kCDlaLd};
  c.seeds = {1, 2};
  const fs::path a = fs::temp_directory_path() / "cdla_acceptance_det_a";
  const fs::path b = fs::temp_directory_path() / "cdla_acceptance_det_b";
  for (const auto& dir : {a, b}) {
    fs::remove_all(dir);
    cmd_generate(c, dir);
    cmd_simulate(c, dir);
    cmd_train(c, dir);
    cmd_evaluate(c, dir);
    cmd_propensity_report(c, dir);
  }
  std::size_t files = 0, same = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), a);
    if (fs::exists(b / rel) && read_file(a / rel) == read_file(b / rel)) ++same;
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file() ? 1 : 0;
  report(8, files > 0 && same == files && files_b == files,
         "determinism: " + std::to_string(same) + "/" + std::to_string(files) +
             " output files byte-identical across two simulate-train-evaluate runs");
  fs::remove_all(a);
  fs::remove_all(b);
}

}  // namespace

// Optional arguments select criteria by number; default is all of them.
int main(int argc, char** argv) {
  std::vector<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.push_back(std::atoi(argv[i]));
  auto want = [&](int c) { return chosen.empty() || std::find(chosen.begin(), chosen.end(), c) != chosen.end(); };
  try {
    if (want(5)) criterion5();
    if (want(6)) criterion6();
    if (want(8)) criterion8();
    if (want(1) || want(2) || want(3) || want(4) || want(7)) {
      const Pipeline p = run_main_pipeline();
      if (want(7)) criterion7(p);
      if (want(1)) criterion1(p);
      if (want(2)) criterion2(p);
      if (want(3)) criterion3(p);
      if (want(4)) criterion4(p);
      fs::remove_all(p.out);
    }
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
