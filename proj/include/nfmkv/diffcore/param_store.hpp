#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nfmkv/errors.hpp"

namespace nfmkv {

// Flat parameter vector partitioned into named, contiguous segments.
// Segment order is insertion order and is what gets serialized.
class ParamStore {
 public:
  struct Segment {
    std::size_t offset = 0;
    std::size_t length = 0;
  };

  Segment add(const std::string& name, std::size_t length, double fill = 0.0) {
    if (index_.count(name) != 0) throw InvalidInput("duplicate parameter segment '" + name + "'");
    Segment seg{values_.size(), length};
    values_.resize(values_.size() + length, fill);
    index_.emplace(name, order_.size());
    order_.emplace_back(name, seg);
    return seg;
  }

  Segment segment(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown parameter segment '" + name + "'");
    return order_[it->second].second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::span<double> view(const Segment& s) { return {values_.data() + s.offset, s.length}; }
  std::span<const double> view(const Segment& s) const { return {values_.data() + s.offset, s.length}; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  const std::vector<std::pair<std::string, Segment>>& segments() const noexcept { return order_; }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.order_.size() != b.order_.size() || a.values_ != b.values_) return false;
    for (std::size_t i = 0; i < a.order_.size(); ++i) {
      if (a.order_[i].first != b.order_[i].first ||
          a.order_[i].second.offset != b.order_[i].second.offset ||
          a.order_[i].second.length != b.order_[i].second.length)
        return false;
    }
    return true;
  }

 private:
  std::vector<double> values_;
  std::vector<std::pair<std::string, Segment>> order_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace nfmkv
