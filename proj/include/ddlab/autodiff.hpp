#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddlab/tensor.hpp"

namespace ddlab {

// Flat parameter vector with a parallel gradient buffer and a table of named
// blocks. Blocks are laid out in insertion order.
class ParamStore {
 public:
  struct Segment {
    std::string name;
    std::size_t offset = 0;
    Shape shape;
    std::size_t size() const { return shape_numel(shape); }
  };

  std::size_t add(std::string name, Shape shape);

  bool contains(std::string_view name) const;
  const Segment& segment(std::string_view name) const;
  const std::vector<Segment>& segments() const { return segments_; }

  std::span<double> values(std::string_view name);
  std::span<const double> values(std::string_view name) const;
  std::span<double> grads(std::string_view name);
  std::span<const double> grads(std::string_view name) const;

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& grads() { return grads_; }
  const std::vector<double>& grads() const { return grads_; }

  std::size_t size() const { return values_.size(); }
  void zero_grad();
  double grad_norm() const;

 private:
  std::vector<Segment> segments_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Recorded operation list for one forward pass. Rebuilt every step. Nodes are
// appended in evaluation order, so reverse insertion order is a reverse
// topological order.
class Tape {
 public:
  // Receives the tape and the node id; reads grad(self) and accumulates into
  // grad_of(input).
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor value);
  // Leaf bound to a named block of `store`; backward accumulates into store.grads.
  Var param(ParamStore& store, std::string_view name);

  // Generic node constructor for custom operations.
  Var add_node(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  // Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor& grad_of(std::size_t id);
  const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse pass from a scalar node; parameter gradients are added to the
  // bound stores (callers zero them beforehand).
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    ParamStore* store = nullptr;
    std::size_t offset = 0;
  };
  std::vector<Node> nodes_;
};

// Elementwise and structural operations. Shapes follow the comments.
Var add(Var a, Var b);                  // same shape
Var sub(Var a, Var b);                  // same shape
Var mul(Var a, Var b);                  // same shape
Var scale(Var a, double c);
Var matmul(Var a, Var b);               // [M,N] x [N,P]
Var add_bias(Var x, Var bias);          // [R,H] + [H]
Var add_tiled(Var x, Var rows);         // [B*D,H] + [D,H] tiled over B
Var repeat_rows(Var x, std::size_t reps);  // [B,H] -> [B*reps,H]
Var gather_rows(Var table, std::span<const int> index);  // [V,H] -> [N,H]
// out[b*D+d] = sum_e mix[d,e] * u[b*D+e]; mix is [D,D], u is [B*D,H].
Var mix_positions(Var mix, Var u, std::size_t positions);
Var tanh(Var x);
Var square(Var x);
Var log(Var x);
Var softmax(Var x);                     // last axis
Var log_softmax(Var x);                 // last axis
Var reshape(Var x, Shape shape);
Var sum(Var x);                         // -> scalar
Var weighted_sum(Var x, const Tensor& weights);  // sum(w * x) -> scalar
Var stop_gradient(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

struct FiniteDiffOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, scale_floor).
  double scale_floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded random subset.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
  bool passed = true;
};

// Compares the reverse-mode gradient of `loss` with respect to `params`
// against central differences. `loss` must be deterministic.
FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& loss, ParamStore& params,
                                   const FiniteDiffOptions& options = {});

}  // namespace ddlab
