#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "nfmkv/diffcore/param_store.hpp"
#include "nfmkv/errors.hpp"
#include "nfmkv/matrix.hpp"

namespace nfmkv {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives
// and has not been cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double scalar() const { return value().data.at(0); }
  double operator()(std::size_t r, std::size_t c) const { return value()(r, c); }

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Dynamically recorded reverse-mode tape over matrix-valued primitives.
// Parameters belonging to the trainable store are gradient leaves; every
// other input is a constant. A tape built with no trainable store only
// evaluates values and never stores backward closures.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  explicit Tape(const ParamStore* trainable = nullptr) : trainable_(trainable) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m) { return push("constant", std::move(m), false, {}, -1); }
  Var constant(double v) { return constant(Matrix::scalar(v)); }

  Var param(const ParamStore& store, const ParamStore::Segment& seg, std::size_t rows, std::size_t cols) {
    if (rows * cols != seg.length) throw InvalidInput("parameter view shape does not match segment length");
    auto span = store.view(seg);
    Matrix m(rows, cols, std::vector<double>(span.begin(), span.end()));
    const bool leaf = (&store == trainable_);
    return push("param", std::move(m), leaf, {}, leaf ? static_cast<long>(seg.offset) : -1);
  }

  // Records a primitive. The closure runs during backward only when at least
  // one input needs a gradient.
  Var record(const char* op, Matrix value, std::initializer_list<Var> inputs, Backward fn) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(const char* op, Matrix value, std::span<const Var> inputs, Backward fn) {
    for (double v : value.data) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from primitive '") + op + "'");
    }
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].needs_grad;
    return push(op, std::move(value), needs, needs ? std::move(fn) : Backward{}, -1);
  }

  const Matrix& value(std::uint32_t id) const { return nodes_[id].value; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
  const char* op(std::uint32_t id) const { return nodes_[id].op; }

  // Upstream gradient of a node (allocated on first use).
  Matrix& grad(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.rows != n.value.rows || n.grad.cols != n.value.cols) n.grad = Matrix(n.value.rows, n.value.cols);
    return n.grad;
  }

  // Gradient buffer of an input, or nullptr when the input is constant.
  Matrix* grad_if(const Var& v) { return nodes_[v.id()].needs_grad ? &grad(v.id()) : nullptr; }

  // Accumulates d(root)/d(trainable params) into param_grad (same layout as
  // the trainable store). root must be 1x1.
  void backward(Var root, std::span<double> param_grad) {
    if (root.value().size() != 1) throw InvalidInput("backward requires a scalar root");
    if (!nodes_[root.id()].needs_grad) return;
    if (trainable_ != nullptr && param_grad.size() != trainable_->size())
      throw InvalidInput("gradient buffer does not match trainable store");
    grad(root.id()).data[0] += 1.0;
    for (std::uint32_t id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      for (double g : n.grad.data) {
        if (!std::isfinite(g))
          throw NumericError(std::string("non-finite gradient at primitive '") + n.op + "'");
      }
      if (n.param_offset >= 0) {
        auto off = static_cast<std::size_t>(n.param_offset);
        for (std::size_t i = 0; i < n.grad.size(); ++i) param_grad[off + i] += n.grad.data[i];
      } else if (n.backward) {
        n.backward(*this, id);
      }
    }
  }

  std::vector<double> gradient(Var root) {
    std::vector<double> g(trainable_ ? trainable_->size() : 0, 0.0);
    backward(root, g);
    return g;
  }

  const ParamStore* trainable() const noexcept { return trainable_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
    const char* op = "";
    long param_offset = -1;
  };

  Var push(const char* op, Matrix value, bool needs, Backward fn, long param_offset) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    n.backward = std::move(fn);
    n.op = op;
    n.param_offset = param_offset;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  const ParamStore* trainable_;
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

}  // namespace nfmkv
