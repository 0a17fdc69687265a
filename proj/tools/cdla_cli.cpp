// cdla: experiment driver.
//
//   cdla generate          --config exp.cfg --out run/
//   cdla simulate          --config exp.cfg --out run/ [--seed N]
//   cdla train             --config exp.cfg --out run/ [--seed N]
//   cdla evaluate          --config exp.cfg --out run/ [--seed N]
//   cdla propensity-report --config exp.cfg --out run/ [--seed N]
//   cdla compare A.tsv B.tsv [--out dir]
//   cdla default-config

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "cdla/cdla.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

cdla::ExperimentConfig load(const CommonOptions& o, std::string_view command) {
  cdla::ExperimentConfig cfg = o.config.empty() ? cdla::parse_config(cdla::default_config_text())
                                                : cdla::load_config(o.config);
  if (o.seed) {
    // --seed replaces the seed that drives the subcommand.
    if (command == "generate") {
      cfg.corpus.seed = *o.seed;
    } else if (command == "simulate") {
      cfg.click.seed = *o.seed;
    } else {
      cfg.seeds = {*o.seed};
    }
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "experiment config file (key = value sections)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "seed override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unbiased learning to rank with contextual dual learning and listwise distillation"};
  app.require_subcommand(1);

  CommonOptions opts;
  auto* generate = app.add_subcommand("generate", "write a synthetic annotated train/test corpus");
  auto* simulate = app.add_subcommand("simulate", "simulate click sessions over the annotated training set");
  auto* train = app.add_subcommand("train", "train every configured method and seed");
  auto* evaluate = app.add_subcommand("evaluate", "nDCG/ERR of trained checkpoints on the annotated test set");
  auto* prop = app.add_subcommand("propensity-report", "normalized learned propensity vs ground truth and CTR");
  for (auto* c : {generate, simulate, train, evaluate, prop}) add_common(c, opts);

  std::string report_a, report_b;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "paired t-test of report A against baseline report B");
  compare->add_option("report_a", report_a, "evaluation report TSV")->required();
  compare->add_option("report_b", report_b, "baseline evaluation report TSV")->required();
  compare->add_option("--out", compare_out, "directory for compare.tsv");
  compare->add_option("--config", opts.config, "config file (recorded in the output header)");

  auto* defaults = app.add_subcommand("default-config", "print the default config file");

  CLI11_PARSE(app, argc, argv);

  try {
    namespace fs = std::filesystem;
    if (defaults->parsed()) {
      std::cout << cdla::default_config_text();
      return 0;
    }
    if (compare->parsed()) {
      const auto cfg = load(opts, "compare");
      std::cout << cdla::cmd_compare(report_a, report_b, compare_out, cfg.hash());
      return 0;
    }
    const fs::path out = opts.out;
    if (generate->parsed()) {
      const auto r = cdla::cmd_generate(load(opts, "generate"), out);
      std::cout << "wrote " << r.train_queries << " training and " << r.test_queries << " test queries to "
                << out.string() << "\n";
    } else if (simulate->parsed()) {
      const auto r = cdla::cmd_simulate(load(opts, "simulate"), out);
      std::cout << "wrote " << r.sessions << " sessions (gamma=" << r.truth.gamma << ")\n";
    } else if (train->parsed()) {
      for (const auto& r : cdla::cmd_train(load(opts, "train"), out)) {
        std::cout << cdla::method_name(r.method) << " seed " << r.seed << ": " << r.dir.string() << "\n";
      }
    } else if (evaluate->parsed()) {
      for (const auto& e : cdla::cmd_evaluate(load(opts, "evaluate"), out)) {
        std::printf("%-9s", std::string(cdla::method_name(e.method)).c_str());
        for (const auto& c : e.combined.columns) {
          std::printf("  %s=%.4f%s", c.label().c_str(), c.mean(),
                      c.p_value && *c.p_value <= cdla::kSignificanceLevel ? "*" : "");
        }
        std::printf("\n");
      }
    } else if (prop->parsed()) {
      for (const auto& r : cdla::cmd_propensity_report(load(opts, "propensity-report"), out)) {
        std::cout << cdla::method_name(r.method) << " seed " << r.seed << ":";
        for (const auto& row : r.rows) std::printf(" %.3f", row.learned);
        std::cout << "\n";
      }
    }
  } catch (const cdla::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
