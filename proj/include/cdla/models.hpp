#pragma once

// The three learnable models:
//   ListwiseRanker   f(x_i | list): 14 -> 64 projection, encoder, MLP head
//   PointwiseRanker  h(x_i):        14 -> 64 projection, MLP head
//   PropensityModel  g(i):          one logit per position 1..10
//
// Checkpoint format (text):
//   # cdla checkpoint version=... config_hash=...
//   model <listwise|pointwise|propensity>
//   [encoder <layers> <heads>]          listwise only
//   params <count>
//   param <name> <rows> <cols>
//   <values>
//   ...

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cdla/data.hpp"
#include "cdla/graph.hpp"
#include "cdla/nn.hpp"
#include "cdla/params.hpp"
#include "cdla/rng.hpp"
#include "cdla/text.hpp"

namespace cdla {

inline constexpr std::size_t kHiddenWidth = 64;
inline constexpr std::array<std::size_t, 3> kHeadWidths = {32, 16, 8};

namespace detail {

inline void check_features(const Tensor& x, const char* who) {
  if (x.cols() != kFeatureDim) {
    throw ShapeError(std::string(who) + ": expected 14 features per document, got " + std::to_string(x.cols()));
  }
  if (x.rows() == 0) throw ShapeError(std::string(who) + ": empty document list");
}

inline std::string checkpoint_text(std::string_view kind, std::string_view extra, const ModelParams& p,
                                   std::string_view config_hash) {
  std::ostringstream os;
  os << provenance_header("checkpoint", config_hash) << "model " << kind << '\n' << extra;
  p.write(os);
  return os.str();
}

// Skips comments, checks the model line and returns the remaining lines.
inline std::istringstream open_checkpoint(const std::filesystem::path& path, std::string_view kind,
                                          std::vector<std::string>* extra_line) {
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line) && (line.empty() || line[0] == '#')) {
  }
  const auto tok = split_ws(line);
  if (tok.size() != 2 || tok[0] != "model") throw ParseError("checkpoint '" + path.string() + "': missing model line");
  if (tok[1] != kind) {
    throw ShapeError("checkpoint '" + path.string() + "' holds a " + tok[1] + " model, expected " + std::string(kind));
  }
  if (extra_line != nullptr) {
    std::getline(in, line);
    *extra_line = split_ws(line);
  }
  return in;
}

}  // namespace detail

class PointwiseRanker {
 public:
  explicit PointwiseRanker(std::uint64_t seed) {
    Rng rng(seed);
    add_linear(params_, "proj", kFeatureDim, kHiddenWidth, rng);
    add_mlp(params_, "head", kHiddenWidth, kHeadWidths, rng);
  }

  // (n x 14) features -> (n x 1) scores. Rows are scored independently.
  Var score(Graph& g, Var features) {
    detail::check_features(features.value(), "pointwise ranker");
    return mlp(g, params_, "head", kHeadWidths.size(), linear(g, params_, "proj", features));
  }

  std::vector<double> score(const Tensor& features) {
    Graph g;
    Var s = score(g, g.constant(features));
    return {s.value().values().begin(), s.value().values().end()};
  }

  double score_one(std::span<const double> features) {
    if (features.size() != kFeatureDim) {
      throw ShapeError("pointwise ranker: expected 14 features, got " + std::to_string(features.size()));
    }
    return score(Tensor(1, kFeatureDim, std::vector<double>(features.begin(), features.end())))[0];
  }

  ModelParams& params() noexcept { return params_; }
  const ModelParams& params() const noexcept { return params_; }

  void save(const std::filesystem::path& path, std::string_view config_hash = "-") const {
    write_file_atomic(path, detail::checkpoint_text("pointwise", "", params_, config_hash));
  }

  static PointwiseRanker load(const std::filesystem::path& path) {
    PointwiseRanker m(0);
    auto in = detail::open_checkpoint(path, "pointwise", nullptr);
    m.params_.read(in);
    return m;
  }

 private:
  ModelParams params_;
};

class ListwiseRanker {
 public:
  ListwiseRanker(std::uint64_t seed, EncoderConfig enc) : enc_(enc) {
    enc_.validate(kHiddenWidth);
    Rng rng(seed);
    add_linear(params_, "proj", kFeatureDim, kHiddenWidth, rng);
    add_encoder(params_, "encoder", kHiddenWidth, enc_, rng);
    add_mlp(params_, "head", kHiddenWidth, kHeadWidths, rng);
  }

  // Stacked lists (segments over rows of `features`) -> one score per row.
  // No positional signal enters: permuting rows within a list permutes the
  // scores the same way.
  Var score(Graph& g, Var features, const Segments& seg) {
    detail::check_features(features.value(), "listwise ranker");
    Var x = linear(g, params_, "proj", features);
    x = attention_encode(g, params_, "encoder", x, seg, enc_);
    return mlp(g, params_, "head", kHeadWidths.size(), x);
  }

  // Scores one list.
  std::vector<double> score(const Tensor& features) {
    Graph g;
    Var s = score(g, g.constant(features), Segments::single(features.rows()));
    return {s.value().values().begin(), s.value().values().end()};
  }

  const EncoderConfig& encoder() const noexcept { return enc_; }
  ModelParams& params() noexcept { return params_; }
  const ModelParams& params() const noexcept { return params_; }

  void save(const std::filesystem::path& path, std::string_view config_hash = "-") const {
    const std::string extra = "encoder " + std::to_string(enc_.layers) + " " + std::to_string(enc_.heads) + "\n";
    write_file_atomic(path, detail::checkpoint_text("listwise", extra, params_, config_hash));
  }

  static ListwiseRanker load(const std::filesystem::path& path) {
    std::vector<std::string> enc_line;
    auto in = detail::open_checkpoint(path, "listwise", &enc_line);
    if (enc_line.size() != 3 || enc_line[0] != "encoder") throw ParseError("listwise checkpoint: missing encoder line");
    ListwiseRanker m(0, EncoderConfig{parse_size(enc_line[1]), parse_size(enc_line[2])});
    m.params_.read(in);
    return m;
  }

 private:
  EncoderConfig enc_;
  ModelParams params_;
};

// Examination estimate for positions 1..n.
struct PropensityVector {
  std::vector<double> scores;      // softplus(logit_i), strictly positive
  std::vector<double> propensity;  // g(i) = softmax(scores)_i
  std::vector<double> normalized;  // g(i) / g(1)
};

// One logit per display position. The positive score s_i = softplus(logit_i)
// is the quantity trained with the position-side softmax loss, so the
// examination estimate is g(i) = softmax(s)_i and g(1)/g(i) = exp(s_1 - s_i).
class PropensityModel {
 public:
  explicit PropensityModel(std::size_t positions = kTrainListLength) {
    params_.add_filled("logits", positions, 1, 0.0);
  }

  std::size_t positions() const { return params_.at("logits").value.rows(); }

  // (positions x 1) softplus scores.
  Var scores(Graph& g) { return softplus(g.parameter(params_.at("logits"))); }

  PropensityVector propensity() const {
    const Tensor& logits = params_.at("logits").value;
    PropensityVector pv;
    for (double l : logits.values()) pv.scores.push_back(softplus(l));
    std::vector<double> ls(pv.scores.size());
    detail::log_softmax_range(pv.scores.data(), ls.data(), ls.size());
    for (double v : ls) pv.propensity.push_back(std::exp(v));
    for (double s : pv.scores) pv.normalized.push_back(std::exp(s - pv.scores[0]));
    return pv;
  }

  void set_logits(std::span<const double> logits) {
    Tensor& t = params_.at("logits").value;
    if (logits.size() != t.size()) throw ShapeError("propensity model has " + std::to_string(t.size()) + " positions");
    std::copy(logits.begin(), logits.end(), t.values().begin());
  }

  ModelParams& params() noexcept { return params_; }
  const ModelParams& params() const noexcept { return params_; }

  void save(const std::filesystem::path& path, std::string_view config_hash = "-") const {
    write_file_atomic(path, detail::checkpoint_text("propensity", "", params_, config_hash));
  }

  static PropensityModel load(const std::filesystem::path& path) {
    PropensityModel m;
    auto in = detail::open_checkpoint(path, "propensity", nullptr);
    m.params_.read(in);
    return m;
  }

 private:
  ModelParams params_;
};

}  // namespace cdla
