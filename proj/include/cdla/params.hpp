#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "cdla/error.hpp"
#include "cdla/graph.hpp"
#include "cdla/rng.hpp"
#include "cdla/text.hpp"

namespace cdla {

// Named, ordered store of the learnable tensors of one model. Insertion order
// is the serialization order. References returned by at()/find() stay valid
// for the lifetime of the store.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(const ModelParams& o) : params_(o.params_) { reindex(); }
  ModelParams& operator=(const ModelParams& o) {
    params_ = o.params_;
    reindex();
    return *this;
  }
  ModelParams(ModelParams&& o) noexcept : params_(std::move(o.params_)) { reindex(); }
  ModelParams& operator=(ModelParams&& o) noexcept {
    params_ = std::move(o.params_);
    reindex();
    return *this;
  }

  Parameter& add(std::string name, Tensor value) {
    if (index_.count(name) != 0) throw ConfigError("duplicate parameter '" + name + "'");
    params_.push_back(Parameter{name, std::move(value), std::nullopt});
    index_[std::move(name)] = params_.size() - 1;
    return params_.back();
  }

  // Weight of a fan_in -> fan_out linear map, uniform in +-sqrt(6/(fan_in+fan_out)).
  Parameter& add_weight(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w(fan_in, fan_out);
    for (double& x : w.values()) x = rng.uniform(-limit, limit);
    return add(std::move(name), std::move(w));
  }

  Parameter& add_filled(std::string name, std::size_t rows, std::size_t cols, double fill) {
    return add(std::move(name), Tensor(rows, cols, fill));
  }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.reset();
  }

  // Exact equality of names, shapes and values.
  bool same_values(const ModelParams& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != o.params_[i].name || !(params_[i].value == o.params_[i].value)) return false;
    }
    return true;
  }

  // Text blob: one `param <name> <rows> <cols>` line followed by one line of
  // values in shortest round-trip form.
  void write(std::ostream& os) const {
    os << "params " << params_.size() << '\n';
    for (const auto& p : params_) {
      os << "param " << p.name << ' ' << p.value.rows() << ' ' << p.value.cols() << '\n';
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        if (i) os << ' ';
        os << format_double(p.value[i]);
      }
      os << '\n';
    }
  }

  // Reads values into the existing parameters; every name and shape must match.
  void read(std::istream& is) {
    std::string line;
    auto next = [&]() -> std::vector<std::string> {
      if (!std::getline(is, line)) throw ParseError("checkpoint truncated");
      return split_ws(line);
    };
    auto head = next();
    if (head.size() != 2 || head[0] != "params") throw ParseError("expected 'params <count>'");
    const std::size_t count = parse_size(head[1]);
    if (count != params_.size()) {
      throw ShapeError("checkpoint has " + std::to_string(count) + " parameters, model expects " +
                       std::to_string(params_.size()));
    }
    for (auto& p : params_) {
      auto decl = next();
      if (decl.size() != 4 || decl[0] != "param") throw ParseError("expected 'param <name> <rows> <cols>'");
      if (decl[1] != p.name) throw ShapeError("checkpoint parameter '" + decl[1] + "' where '" + p.name + "' expected");
      const std::size_t r = parse_size(decl[2]), c = parse_size(decl[3]);
      if (r != p.value.rows() || c != p.value.cols()) {
        throw ShapeError("parameter '" + p.name + "': checkpoint shape " + Tensor::shape_string(r, c) +
                         " vs model shape " + p.value.shape_string());
      }
      auto vals = next();
      if (vals.size() != p.value.size()) throw ParseError("parameter '" + p.name + "': wrong value count");
      for (std::size_t i = 0; i < vals.size(); ++i) p.value[i] = parse_double(vals[i]);
      if (!p.value.all_finite()) throw NumericError("parameter '" + p.name + "' has non-finite values");
    }
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
  }

  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace cdla
