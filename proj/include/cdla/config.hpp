#pragma once

// Experiment configuration: one declarative text file of `key = value` lines
// grouped in [sections]. Every key is optional; the defaults are the values
// written by default_config_text().

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cdla/clicksim.hpp"
#include "cdla/error.hpp"
#include "cdla/text.hpp"
#include "cdla/training.hpp"

namespace cdla {

struct ExperimentConfig {
  CorpusConfig corpus;       // training queries
  CorpusConfig test_corpus;  // held-out evaluation queries
  ClickModelConfig click;
  TrainConfig train;
  std::vector<Method> methods = {Method::kNaive, Method::kDla, Method::kCdlaLd};
  std::vector<std::uint64_t> seeds = {1};
  std::optional<Method> baseline = Method::kNaive;
  // Inputs; empty means "the file the previous subcommand wrote under --out".
  std::filesystem::path annotated_train;
  std::filesystem::path annotated_test;
  std::filesystem::path sessions;
  std::filesystem::path ground_truth;
  std::filesystem::path ipw_propensity_path;

  ExperimentConfig() {
    test_corpus.num_queries = 200;
    test_corpus.docs_min = 20;
    test_corpus.docs_max = 40;
    test_corpus.seed = 2;
    test_corpus.qid_prefix = "t";
  }

  // Canonical `section.key=value` listing of every setting.
  std::string canonical() const {
    std::map<std::string, std::string> kv;
    auto put_corpus = [&](const std::string& s, const CorpusConfig& c) {
      kv[s + ".num_queries"] = std::to_string(c.num_queries);
      kv[s + ".docs_min"] = std::to_string(c.docs_min);
      kv[s + ".docs_max"] = std::to_string(c.docs_max);
      kv[s + ".label_noise"] = format_double(c.label_noise);
      kv[s + ".proxy_noise"] = format_double(c.proxy_noise);
      kv[s + ".seed"] = std::to_string(c.seed);
    };
    put_corpus("corpus", corpus);
    put_corpus("test_corpus", test_corpus);
    kv["click.gamma"] = format_double(click.gamma);
    kv["click.epsilon"] = format_double(click.epsilon);
    kv["click.seed"] = std::to_string(click.seed);
    kv["click.display_length"] = std::to_string(click.display_length);
    kv["click.sessions_per_query"] = std::to_string(click.sessions_per_query);
    kv["click.logging_policy"] = click.logging_policy == LoggingPolicy::kRandom ? "random" : "feature";
    kv["click.logging_feature"] = std::to_string(click.logging_feature);
    kv["click.logging_noise"] = format_double(click.logging_noise);
    kv["train.batch_size"] = std::to_string(train.batch_size);
    kv["train.steps"] = std::to_string(train.steps);
    kv["train.learning_rate"] = format_double(train.learning_rate);
    kv["train.propensity_learning_rate"] = format_double(train.propensity_learning_rate);
    kv["train.student_learning_rate"] = format_double(train.student_learning_rate);
    kv["train.weight_decay"] = format_double(train.weight_decay);
    kv["train.weight_clip_max"] = format_double(train.weight_clip_max);
    kv["train.encoder_layers"] = std::to_string(train.encoder.layers);
    kv["train.encoder_heads"] = std::to_string(train.encoder.heads);
    kv["train.naive_ranker"] = train.naive_ranker == RankerKind::kPointwise ? "pointwise" : "listwise";
    kv["train.distill_student"] = train.distill_student ? "true" : "false";
    kv["train.log_every"] = std::to_string(train.log_every);
    kv["train.ipw_propensity_path"] = ipw_propensity_path.string();
    std::string methods_s, seeds_s;
    for (Method m : methods) methods_s += (methods_s.empty() ? "" : ",") + std::string(method_name(m));
    for (auto s : seeds) seeds_s += (seeds_s.empty() ? "" : ",") + std::to_string(s);
    kv["experiment.methods"] = methods_s;
    kv["experiment.seeds"] = seeds_s;
    kv["experiment.baseline"] = baseline ? std::string(method_name(*baseline)) : "none";
    kv["data.annotated_train"] = annotated_train.string();
    kv["data.annotated_test"] = annotated_test.string();
    kv["data.sessions"] = sessions.string();
    kv["data.ground_truth"] = ground_truth.string();
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
  }

  std::string hash() const { return hex64(fnv1a(canonical())); }

  void validate() const {
    if (seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
    if (methods.empty()) throw ConfigError("experiment.methods must not be empty");
    click.validate();
  }
};

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

inline std::uint64_t parse_u64(const std::string& v) {
  const long long x = parse_int(v);
  if (x < 0) throw ConfigError("expected a nonnegative integer, got '" + v + "'");
  return static_cast<std::uint64_t>(x);
}

}  // namespace detail

// Parses config text. Relative paths are resolved against base_dir.
inline ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig c;
  std::string section;
  std::size_t line_no = 0;
  auto path_of = [&](const std::string& v) -> std::filesystem::path {
    if (v.empty()) return {};
    std::filesystem::path p(v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = trim(raw);
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", line_no);
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string key(trim(line.substr(0, eq)));
    const std::string v(trim(line.substr(eq + 1)));
    const std::string full = section + "." + key;
    try {
      auto corpus_key = [&](CorpusConfig& cc) {
        if (key == "num_queries") cc.num_queries = parse_size(v);
        else if (key == "docs_min") cc.docs_min = parse_size(v);
        else if (key == "docs_max") cc.docs_max = parse_size(v);
        else if (key == "label_noise") cc.label_noise = parse_double(v);
        else if (key == "proxy_noise") cc.proxy_noise = parse_double(v);
        else if (key == "seed") cc.seed = detail::parse_u64(v);
        else return false;
        return true;
      };
      bool known = true;
      if (section == "corpus") {
        known = corpus_key(c.corpus);
      } else if (section == "test_corpus") {
        known = corpus_key(c.test_corpus);
      } else if (section == "click") {
        if (key == "gamma") c.click.gamma = parse_double(v);
        else if (key == "epsilon") c.click.epsilon = parse_double(v);
        else if (key == "seed") c.click.seed = detail::parse_u64(v);
        else if (key == "display_length") c.click.display_length = parse_size(v);
        else if (key == "sessions_per_query") c.click.sessions_per_query = parse_size(v);
        else if (key == "logging_policy") {
          if (v == "random") c.click.logging_policy = LoggingPolicy::kRandom;
          else if (v == "feature") c.click.logging_policy = LoggingPolicy::kFeature;
          else throw ConfigError("logging_policy must be 'random' or 'feature'");
        } else if (key == "logging_feature") c.click.logging_feature = parse_size(v);
        else if (key == "logging_noise") c.click.logging_noise = parse_double(v);
        else known = false;
      } else if (section == "train") {
        if (key == "batch_size") c.train.batch_size = parse_size(v);
        else if (key == "steps") c.train.steps = parse_size(v);
        else if (key == "learning_rate") c.train.learning_rate = parse_double(v);
        else if (key == "propensity_learning_rate") c.train.propensity_learning_rate = parse_double(v);
        else if (key == "student_learning_rate") c.train.student_learning_rate = parse_double(v);
        else if (key == "weight_decay") c.train.weight_decay = parse_double(v);
        else if (key == "weight_clip_max") c.train.weight_clip_max = parse_double(v);
        else if (key == "encoder_layers") c.train.encoder.layers = parse_size(v);
        else if (key == "encoder_heads") c.train.encoder.heads = parse_size(v);
        else if (key == "naive_ranker") {
          if (v == "pointwise") c.train.naive_ranker = RankerKind::kPointwise;
          else if (v == "listwise") c.train.naive_ranker = RankerKind::kListwise;
          else throw ConfigError("naive_ranker must be 'pointwise' or 'listwise'");
        } else if (key == "distill_student") c.train.distill_student = detail::parse_bool(v);
        else if (key == "log_every") c.train.log_every = parse_size(v);
        else if (key == "ipw_propensity_path") c.ipw_propensity_path = path_of(v);
        else known = false;
      } else if (section == "experiment") {
        if (key == "methods") {
          c.methods.clear();
          for (const auto& m : split(v, ',')) c.methods.push_back(parse_method(trim(m)));
        } else if (key == "seeds") {
          c.seeds.clear();
          for (const auto& s : split(v, ',')) c.seeds.push_back(detail::parse_u64(std::string(trim(s))));
        } else if (key == "baseline") {
          c.baseline = v == "none" ? std::nullopt : std::optional<Method>(parse_method(v));
        } else known = false;
      } else if (section == "data") {
        if (key == "annotated_train") c.annotated_train = path_of(v);
        else if (key == "annotated_test") c.annotated_test = path_of(v);
        else if (key == "sessions") c.sessions = path_of(v);
        else if (key == "ground_truth") c.ground_truth = path_of(v);
        else known = false;
      } else {
        known = false;
      }
      if (!known) throw ConfigError("unknown setting '" + full + "'");
    } catch (const ParseError& e) {
      throw ParseError(full + ": " + e.what(), line_no);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.parent_path());
}

// The documented default configuration.
inline std::string default_config_text() {
  return R"([corpus]
# synthetic annotated training queries (generate)
num_queries = 1000
docs_min = 20
docs_max = 30
label_noise = 0.3
proxy_noise = 1
seed = 1

[test_corpus]
# held-out evaluation queries; list lengths differ from the training length 10
num_queries = 200
docs_min = 20
docs_max = 40
label_noise = 0.3
proxy_noise = 1
seed = 2

[click]
# examination (1/i)^gamma, relevance eps + (1-eps)(2^g-1)/15
gamma = 1
epsilon = 0.1
seed = 1
display_length = 10
sessions_per_query = 50
# random | feature (sort by logging_feature plus Gaussian noise)
logging_policy = random
logging_feature = 14
logging_noise = 0

[train]
batch_size = 30
steps = 1000
learning_rate = 2e-5
# 0 means: same as learning_rate
propensity_learning_rate = 0
# cdla_ld student; 0 means: same as learning_rate
student_learning_rate = 0
weight_decay = 0.01
weight_clip_max = 10
encoder_layers = 2
encoder_heads = 4
naive_ranker = pointwise
distill_student = true
log_every = 1
# one-line vector of 10 examination probabilities, required by ipw
ipw_propensity_path =

[experiment]
methods = naive, dla, cdla_ld
seeds = 1
baseline = naive

[data]
# empty: use the files written under --out by the previous subcommand
annotated_train =
annotated_test =
sessions =
ground_truth =
)";
}

// One-line float vector, '#' comment lines allowed (the ground-truth file
// format qualifies).
inline std::vector<double> load_propensity_vector(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<double> v;
  while (std::getline(in, line)) {
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    if (!v.empty()) throw ParseError("'" + path.string() + "': more than one vector line");
    for (const auto& tok : split_ws(body)) v.push_back(parse_double(tok));
  }
  if (v.size() != kTrainListLength) {
    throw ParseError("'" + path.string() + "': expected 10 propensities, got " + std::to_string(v.size()));
  }
  return v;
}

}  // namespace cdla
