#pragma once

// Annotated query sets and click-log sessions: file formats, session
// filtering and feature standardization.
//
// Annotated file, one document per line:
//   <grade> qid:<id> 1:<x1> 2:<x2> ... 14:<x14>
// Session file, one session per line, documents separated by '|':
//   qid:<id> | pos:1 click:0 1:<x1> ... 14:<x14> | pos:2 click:1 ...
// Lines starting with '#' are comments in both formats.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cdla/error.hpp"
#include "cdla/tensor.hpp"
#include "cdla/text.hpp"

namespace cdla {

inline constexpr std::size_t kFeatureDim = 14;
inline constexpr std::size_t kTrainListLength = 10;
inline constexpr int kMaxGrade = 4;

using FeatureVector = std::array<double, kFeatureDim>;

struct SessionDoc {
  FeatureVector features{};
  int position = 0;  // 1-based display rank
  int click = 0;

  friend bool operator==(const SessionDoc&, const SessionDoc&) = default;
};

// One displayed list for a query. docs[i].position == i + 1.
struct Session {
  std::string query_id;
  std::vector<SessionDoc> docs;

  std::size_t size() const noexcept { return docs.size(); }
  friend bool operator==(const Session&, const Session&) = default;
};

struct AnnotatedDoc {
  FeatureVector features{};
  int grade = 0;

  friend bool operator==(const AnnotatedDoc&, const AnnotatedDoc&) = default;
};

struct AnnotatedQuery {
  std::string query_id;
  std::vector<AnnotatedDoc> docs;

  friend bool operator==(const AnnotatedQuery&, const AnnotatedQuery&) = default;
};

// (n x 14) feature matrix of a list of documents.
template <typename Doc>
Tensor feature_matrix(std::span<const Doc> docs) {
  Tensor t(docs.size(), kFeatureDim);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    std::copy(docs[i].features.begin(), docs[i].features.end(), t.data() + i * kFeatureDim);
  }
  return t;
}

namespace detail {

inline std::string_view strip_comment(std::string_view line) {
  const auto hash = line.find('#');
  if (hash != std::string_view::npos) line = line.substr(0, hash);
  return trim(line);
}

inline std::string value_after(std::string_view token, std::string_view key, std::size_t line_no) {
  if (token.substr(0, key.size()) != key) {
    throw ParseError("expected '" + std::string(key) + "...', got '" + std::string(token) + "'", line_no);
  }
  return std::string(token.substr(key.size()));
}

// Parses `k:value` tokens into a dense feature vector; absent features are 0.
inline FeatureVector parse_features(std::span<const std::string> tokens, std::size_t line_no) {
  FeatureVector f{};
  std::array<bool, kFeatureDim> seen{};
  for (const auto& tok : tokens) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw ParseError("malformed feature '" + tok + "'", line_no);
    long long k = 0;
    double v = 0.0;
    try {
      k = parse_int(std::string_view(tok).substr(0, colon));
      v = parse_double(std::string_view(tok).substr(colon + 1));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (k < 1 || k > static_cast<long long>(kFeatureDim)) {
      throw ParseError("feature index " + std::to_string(k) + " outside 1..14", line_no);
    }
    if (seen[static_cast<std::size_t>(k - 1)]) throw ParseError("duplicate feature " + std::to_string(k), line_no);
    if (!std::isfinite(v)) throw ParseError("non-finite feature value", line_no);
    seen[static_cast<std::size_t>(k - 1)] = true;
    f[static_cast<std::size_t>(k - 1)] = v;
  }
  return f;
}

inline void append_features(std::string& out, const FeatureVector& f) {
  for (std::size_t k = 0; k < kFeatureDim; ++k) {
    out += ' ';
    out += std::to_string(k + 1);
    out += ':';
    out += format_double(f[k]);
  }
}

}  // namespace detail

inline std::vector<AnnotatedQuery> parse_annotated(std::istream& in) {
  std::vector<AnnotatedQuery> queries;
  std::map<std::string, std::size_t> by_id;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::strip_comment(line);
    if (body.empty()) continue;
    const auto tokens = split_ws(body);
    if (tokens.size() < 2) throw ParseError("expected '<grade> qid:<id> <k>:<v>...'", line_no);
    long long grade = 0;
    try {
      grade = parse_int(tokens[0]);
    } catch (const ParseError&) {
      throw ParseError("bad grade '" + tokens[0] + "'", line_no);
    }
    if (grade < 0 || grade > kMaxGrade) throw ParseError("grade " + tokens[0] + " outside 0..4", line_no);
    const std::string qid = detail::value_after(tokens[1], "qid:", line_no);
    if (qid.empty()) throw ParseError("empty qid", line_no);
    AnnotatedDoc doc{detail::parse_features(std::span(tokens).subspan(2), line_no), static_cast<int>(grade)};
    auto [it, inserted] = by_id.try_emplace(qid, queries.size());
    if (inserted) queries.push_back(AnnotatedQuery{qid, {}});
    queries[it->second].docs.push_back(doc);
  }
  return queries;
}

inline std::vector<AnnotatedQuery> load_annotated(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return parse_annotated(in);
}

inline std::string format_annotated(std::span<const AnnotatedQuery> queries) {
  std::string out;
  for (const auto& q : queries) {
    for (const auto& d : q.docs) {
      out += std::to_string(d.grade);
      out += " qid:";
      out += q.query_id;
      detail::append_features(out, d.features);
      out += '\n';
    }
  }
  return out;
}

inline Session parse_session_line(std::string_view body, std::size_t line_no) {
  const auto groups = split(body, '|');
  const auto head = split_ws(groups[0]);
  if (head.size() != 1) throw ParseError("session must start with 'qid:<id>'", line_no);
  Session s;
  s.query_id = detail::value_after(head[0], "qid:", line_no);
  if (s.query_id.empty()) throw ParseError("empty qid", line_no);
  for (std::size_t gi = 1; gi < groups.size(); ++gi) {
    const auto tokens = split_ws(groups[gi]);
    if (tokens.size() < 2) throw ParseError("query " + s.query_id + ": document group needs pos and click", line_no);
    SessionDoc d;
    try {
      d.position = static_cast<int>(parse_int(detail::value_after(tokens[0], "pos:", line_no)));
      d.click = static_cast<int>(parse_int(detail::value_after(tokens[1], "click:", line_no)));
    } catch (const ParseError& e) {
      throw ParseError(std::string("query ") + s.query_id + ": " + e.what(), line_no);
    }
    if (d.click != 0 && d.click != 1) throw ParseError("query " + s.query_id + ": click must be 0 or 1", line_no);
    d.features = detail::parse_features(std::span(tokens).subspan(2), line_no);
    s.docs.push_back(d);
  }
  if (s.docs.empty()) throw ParseError("query " + s.query_id + ": session has no documents", line_no);
  std::sort(s.docs.begin(), s.docs.end(), [](const auto& a, const auto& b) { return a.position < b.position; });
  for (std::size_t i = 0; i < s.docs.size(); ++i) {
    const int expect = static_cast<int>(i) + 1;
    if (s.docs[i].position == expect) continue;
    if (i > 0 && s.docs[i].position == s.docs[i - 1].position) {
      throw ParseError("query " + s.query_id + ": duplicate position " + std::to_string(s.docs[i].position), line_no);
    }
    throw ParseError("query " + s.query_id + ": missing position " + std::to_string(expect), line_no);
  }
  return s;
}

inline std::vector<Session> parse_sessions(std::istream& in) {
  std::vector<Session> sessions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::strip_comment(line);
    if (body.empty()) continue;
    sessions.push_back(parse_session_line(body, line_no));
  }
  return sessions;
}

inline std::vector<Session> load_sessions(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return parse_sessions(in);
}

inline std::string format_session(const Session& s) {
  std::string out = "qid:" + s.query_id;
  for (const auto& d : s.docs) {
    out += " | pos:";
    out += std::to_string(d.position);
    out += " click:";
    out += std::to_string(d.click);
    detail::append_features(out, d.features);
  }
  return out;
}

inline std::string format_sessions(std::span<const Session> sessions) {
  std::string out;
  for (const auto& s : sessions) {
    out += format_session(s);
    out += '\n';
  }
  return out;
}

// Keeps sessions with positions 1..10 all present and at least one click in
// the top 10, truncated to those 10 positions.
inline std::vector<Session> filter_sessions(std::span<const Session> sessions) {
  std::vector<Session> kept;
  for (const auto& s : sessions) {
    if (s.docs.size() < kTrainListLength) continue;
    bool contiguous = true;
    bool clicked = false;
    for (std::size_t i = 0; i < kTrainListLength; ++i) {
      contiguous = contiguous && s.docs[i].position == static_cast<int>(i) + 1;
      clicked = clicked || s.docs[i].click == 1;
    }
    if (!contiguous || !clicked) continue;
    Session t{s.query_id, {s.docs.begin(), s.docs.begin() + static_cast<std::ptrdiff_t>(kTrainListLength)}};
    kept.push_back(std::move(t));
  }
  return kept;
}

struct FeatureStats {
  FeatureVector mean{};
  FeatureVector std{};

  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;

  FeatureVector apply(const FeatureVector& x) const {
    FeatureVector y{};
    for (std::size_t k = 0; k < kFeatureDim; ++k) y[k] = std[k] < 1e-12 ? 0.0 : (x[k] - mean[k]) / std[k];
    return y;
  }

  std::string format() const {
    std::string out = "mean";
    for (double m : mean) out += " " + format_double(m);
    out += "\nstd";
    for (double s : std) out += " " + format_double(s);
    out += '\n';
    return out;
  }

  static FeatureStats parse(std::istream& in) {
    FeatureStats st;
    std::string line;
    bool have_mean = false, have_std = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto body = detail::strip_comment(line);
      if (body.empty()) continue;
      const auto tok = split_ws(body);
      if (tok.size() != kFeatureDim + 1) throw ParseError("feature stats row needs 15 fields", line_no);
      FeatureVector& dst = tok[0] == "mean" ? st.mean : st.std;
      if (tok[0] == "mean") have_mean = true;
      else if (tok[0] == "std") have_std = true;
      else throw ParseError("unknown row '" + tok[0] + "'", line_no);
      for (std::size_t k = 0; k < kFeatureDim; ++k) dst[k] = parse_double(tok[k + 1]);
    }
    if (!have_mean || !have_std) throw ParseError("feature stats need 'mean' and 'std' rows");
    return st;
  }
};

// Per-dimension mean and population standard deviation over every document of
// the training sessions.
inline FeatureStats fit_feature_stats(std::span<const Session> train) {
  if (train.empty()) throw ConfigError("cannot fit feature statistics on an empty training set");
  FeatureStats st;
  std::size_t n = 0;
  for (const auto& s : train) {
    for (const auto& d : s.docs) {
      for (std::size_t k = 0; k < kFeatureDim; ++k) st.mean[k] += d.features[k];
      ++n;
    }
  }
  for (double& m : st.mean) m /= static_cast<double>(n);
  for (const auto& s : train) {
    for (const auto& d : s.docs) {
      for (std::size_t k = 0; k < kFeatureDim; ++k) st.std[k] += (d.features[k] - st.mean[k]) * (d.features[k] - st.mean[k]);
    }
  }
  for (double& v : st.std) v = std::sqrt(v / static_cast<double>(n));
  return st;
}

inline std::vector<Session> normalize(std::span<const Session> sessions, const FeatureStats& st) {
  std::vector<Session> out(sessions.begin(), sessions.end());
  for (auto& s : out)
    for (auto& d : s.docs) d.features = st.apply(d.features);
  return out;
}

inline std::vector<AnnotatedQuery> normalize(std::span<const AnnotatedQuery> queries, const FeatureStats& st) {
  std::vector<AnnotatedQuery> out(queries.begin(), queries.end());
  for (auto& q : out)
    for (auto& d : q.docs) d.features = st.apply(d.features);
  return out;
}

struct NormalizedData {
  std::vector<Session> train;
  std::vector<std::vector<AnnotatedQuery>> others;
  FeatureStats stats;
};

// Standardizes the training sessions and every other set with statistics from
// the training sessions only.
inline NormalizedData fit_and_apply_normalization(std::span<const Session> train,
                                                  std::span<const std::vector<AnnotatedQuery>> others) {
  NormalizedData out;
  out.stats = fit_feature_stats(train);
  out.train = normalize(train, out.stats);
  for (const auto& o : others) out.others.push_back(normalize(std::span<const AnnotatedQuery>(o), out.stats));
  return out;
}

}  // namespace cdla
