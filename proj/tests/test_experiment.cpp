#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cdla/experiment.hpp"

namespace cdla {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cdla_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t count_data_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') ++n;
  }
  return n;
}

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// A pipeline small enough for a unit test.
ExperimentConfig tiny_config() {
  ExperimentConfig c = parse_config(R"(
[corpus]
num_queries = 40
[test_corpus]
num_queries = 15
[click]
sessions_per_query = 5
logging_policy = feature
[train]
steps = 20
batch_size = 5
learning_rate = 1e-3
encoder_layers = 1
encoder_heads = 2
[experiment]
methods = naive, dla, cdla, cdla_ld
seeds = 1, 2
)");
  return c;
}

void run_pipeline(const ExperimentConfig& c, const fs::path& out) {
  cmd_generate(c, out);
  cmd_simulate(c, out);
  cmd_train(c, out);
  cmd_evaluate(c, out);
  cmd_propensity_report(c, out);
}

TEST(Config, DefaultsMatchDocumentedText) {
  const ExperimentConfig parsed = parse_config(default_config_text());
  const ExperimentConfig built;
  EXPECT_EQ(parsed.canonical(), built.canonical());
  EXPECT_EQ(parsed.hash(), built.hash());
}

TEST(Config, ParsesValuesAndTracksHash) {
  const auto c = parse_config("[click]\ngamma = 0.5  # comment\n[experiment]\nmethods = dla,c_dla_ld\nseeds = 3,4,5\n");
  EXPECT_EQ(c.click.gamma, 0.5);
  EXPECT_EQ(c.methods, (std::vector<Method>{Method::kDla, Method::kCDlaLd}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4, 5}));
  EXPECT_NE(c.hash(), ExperimentConfig().hash());
}

TEST(Config, ErrorsNameTheLine) {
  try {
    parse_config("[train]\nsteps = 10\nstepz = 3\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("train.stepz"), std::string::npos);
  }
  EXPECT_THROW(parse_config("[experiment]\nmethods = best\n"), ParseError);
  EXPECT_THROW(parse_config("[train]\nsteps\n"), ParseError);
  EXPECT_THROW(parse_config("[click]\ngamma = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("[experiment]\nseeds = x\n"), ParseError);
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  const auto c = parse_config("[data]\nsessions = clicks.txt\n", "/data/run");
  EXPECT_EQ(c.sessions, fs::path("/data/run/clicks.txt"));
}

TEST(Simulate, ThousandQueriesFiftySessions) {
  const fs::path dir = fresh_dir("count");
  ExperimentConfig c;
  c.corpus.docs_min = c.corpus.docs_max = 12;
  cmd_generate(c, dir);
  const auto r = cmd_simulate(c, dir);
  EXPECT_EQ(r.sessions, 50000u);
  EXPECT_EQ(count_data_lines(dir / "sessions.txt"), 50000u);
  const std::string gt = read_file(dir / "ground_truth.txt");
  EXPECT_NE(gt.find("gamma=1"), std::string::npos);
  EXPECT_NE(gt.find("epsilon=0.1"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Simulate, MissingInputIsReported) {
  const fs::path dir = fresh_dir("missing");
  EXPECT_THROW(cmd_simulate(ExperimentConfig(), dir), IoError);
  EXPECT_THROW(cmd_train(ExperimentConfig(), dir), IoError);
  fs::remove_all(dir);
}

TEST(Pipeline, CheckpointSetsPerMethod) {
  const fs::path dir = fresh_dir("ckpt");
  ExperimentConfig c = tiny_config();
  c.methods = {Method::kNaive, Method::kDla, Method::kCdla, Method::kCdlaLd, Method::kCDlaLd};
  c.seeds = {1};
  cmd_generate(c, dir);
  cmd_simulate(c, dir);
  const auto runs = cmd_train(c, dir);
  ASSERT_EQ(runs.size(), 5u);
  EXPECT_EQ(runs[0].checkpoints, (std::vector<std::string>{"h.ckpt"}));
  EXPECT_EQ(runs[1].checkpoints, (std::vector<std::string>{"g.ckpt", "h.ckpt"}));
  EXPECT_EQ(runs[2].checkpoints, (std::vector<std::string>{"f.ckpt", "g.ckpt"}));
  EXPECT_EQ(runs[3].checkpoints, (std::vector<std::string>{"f.ckpt", "g.ckpt", "h.ckpt"}));
  EXPECT_EQ(runs[4].checkpoints, (std::vector<std::string>{"f.ckpt", "g.ckpt", "h.ckpt"}));
  EXPECT_FALSE(fs::exists(run_dir(dir, Method::kNaive, 1) / "g.ckpt"));
  for (const auto& f : files_under(dir)) EXPECT_NE(f.extension(), ".tmp") << f;
  fs::remove_all(dir);
}

TEST(Pipeline, RepeatedRunsAreByteIdentical) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  const ExperimentConfig c = tiny_config();
  run_pipeline(c, a);
  run_pipeline(c, b);
  const auto fa = files_under(a), fb = files_under(b);
  ASSERT_EQ(fa, fb);
  for (const auto& f : fa) EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  EXPECT_TRUE(fs::exists(a / "reports" / "summary.tsv"));
  EXPECT_TRUE(fs::exists(a / "reports" / "cdla_ld.json"));
  EXPECT_TRUE(fs::exists(a / "propensity" / "dla-seed-2.tsv"));
  // Evaluating the same checkpoints again changes nothing.
  const std::string before = read_file(a / "reports" / "dla.tsv");
  cmd_evaluate(c, a);
  EXPECT_EQ(read_file(a / "reports" / "dla.tsv"), before);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Compare, MarksSignificanceAndIsStable) {
  const fs::path dir = fresh_dir("compare");
  const ExperimentConfig c = tiny_config();
  run_pipeline(c, dir);
  const std::string t1 = cmd_compare(dir / "reports" / "cdla_ld.tsv", dir / "reports" / "naive.tsv", dir, c.hash());
  const std::string t2 = cmd_compare(dir / "reports" / "cdla_ld.tsv", dir / "reports" / "naive.tsv", dir, c.hash());
  EXPECT_EQ(t1, t2);
  EXPECT_EQ(read_file(dir / "compare.tsv"), t1);
  const auto a = load_report(dir / "reports" / "cdla_ld.tsv");
  const auto b = load_report(dir / "reports" / "naive.tsv");
  for (const auto& row : compare_reports(a, b)) EXPECT_EQ(row.significant, row.p_value <= 0.05);
  const std::string self = cmd_compare(dir / "reports" / "naive.tsv", dir / "reports" / "naive.tsv", {}, "-");
  EXPECT_EQ(self.find("\t*\n"), std::string::npos);
  EXPECT_THROW(cmd_compare(dir / "nope.tsv", dir / "reports" / "naive.tsv", {}, "-"), IoError);
  fs::remove_all(dir);
}

TEST(AtomicWrite, FailedWriteLeavesTargetUntouched) {
  const fs::path dir = fresh_dir("atomic");
  write_file_atomic(dir / "x.txt", "old");
  // A directory squatting on the temporary name makes the write fail.
  fs::create_directories(dir / "x.txt.tmp");
  EXPECT_THROW(write_file_atomic(dir / "x.txt", "new"), IoError);
  EXPECT_EQ(read_file(dir / "x.txt"), "old");
  fs::remove_all(dir);
}

TEST(Ipw, FixedPropensityFromFile) {
  const fs::path dir = fresh_dir("ipw");
  ExperimentConfig c = tiny_config();
  c.methods = {Method::kIpw};
  c.seeds = {1};
  c.baseline = std::nullopt;
  cmd_generate(c, dir);
  cmd_simulate(c, dir);
  EXPECT_THROW(cmd_train(c, dir), ConfigError);
  write_file_atomic(dir / "prop.txt", "1 0.5 0.333 0.25 0.2 0.167 0.143 0.125 0.111 0.1\n");
  c.ipw_propensity_path = dir / "prop.txt";
  const auto runs = cmd_train(c, dir);
  EXPECT_EQ(runs[0].checkpoints, (std::vector<std::string>{"h.ckpt"}));
  write_file_atomic(dir / "short.txt", "1 0.5\n");
  c.ipw_propensity_path = dir / "short.txt";
  EXPECT_THROW(cmd_train(c, dir), ParseError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace cdla
