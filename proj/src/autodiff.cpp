#include "ddlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ddlab/categorical.hpp"
#include "ddlab/rng.hpp"

namespace ddlab {

// ---------------------------------------------------------------- ParamStore

std::size_t ParamStore::add(std::string name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate block " + name);
  Segment seg{std::move(name), values_.size(), std::move(shape)};
  values_.resize(values_.size() + seg.size(), 0.0);
  grads_.resize(values_.size(), 0.0);
  segments_.push_back(std::move(seg));
  return segments_.size() - 1;
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(segments_.begin(), segments_.end(),
                     [&](const Segment& s) { return s.name == name; });
}

const ParamStore::Segment& ParamStore::segment(std::string_view name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("ParamStore: no block named " + std::string(name));
}

std::span<double> ParamStore::values(std::string_view name) {
  const auto& s = segment(name);
  return std::span<double>(values_).subspan(s.offset, s.size());
}
std::span<const double> ParamStore::values(std::string_view name) const {
  const auto& s = segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}
std::span<double> ParamStore::grads(std::string_view name) {
  const auto& s = segment(name);
  return std::span<double>(grads_).subspan(s.offset, s.size());
}
std::span<const double> ParamStore::grads(std::string_view name) const {
  const auto& s = segment(name);
  return std::span<const double>(grads_).subspan(s.offset, s.size());
}

void ParamStore::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

double ParamStore::grad_norm() const {
  double acc = 0.0;
  for (double g : grads_) acc += g * g;
  return std::sqrt(acc);
}

// ---------------------------------------------------------------------- Tape

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(ParamStore& store, std::string_view name) {
  const auto& seg = store.segment(name);
  Node n;
  auto vals = store.values(name);
  n.value = Tensor(seg.shape, std::vector<double>(vals.begin(), vals.end()));
  n.requires_grad = true;
  n.store = &store;
  n.offset = seg.offset;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::add_node(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (auto i : inputs) {
    if (i > nodes_.size()) throw std::out_of_range("Tape: input refers to unknown node");
    if (i < nodes_.size() && nodes_[i].requires_grad) n.requires_grad = true;
  }
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_of(std::size_t id) {
  auto& n = nodes_.at(id);
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor(n.value.shape(), 0.0);
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (nodes_.at(loss.id).value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(nodes_[loss.id].value.shape()));
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    for (auto in : nodes_[i].inputs) {
      if (in >= i) throw std::logic_error("backward: cycle in tape at node " + std::to_string(i));
    }
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_of(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.store != nullptr) {
      auto& g = n.store->grads();
      for (std::size_t k = 0; k < n.grad.size(); ++k) g[n.offset + k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

// ------------------------------------------------------------------ helpers

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("autodiff: operands on different tapes");
  return *a.tape;
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

// Accumulates g into input `id` if that input takes gradients.
template <typename F>
void accumulate(Tape& t, std::size_t id, F&& fn) {
  if (!t.requires_grad(id)) return;
  fn(t.grad_of(id));
}

}  // namespace

// ---------------------------------------------------------------------- ops

Var add(Var a, Var b) {
  auto& t = tape_of(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ia = a.id, ib = b.id;
  return t.add_node(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    for (auto in : {ia, ib}) {
      accumulate(tp, in, [&](Tensor& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
    }
  });
}

Var sub(Var a, Var b) {
  auto& t = tape_of(a, b);
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ia = a.id, ib = b.id;
  return t.add_node(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    accumulate(tp, ia, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    accumulate(tp, ib, [&](Tensor& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  });
}

Var mul(Var a, Var b) {
  auto& t = tape_of(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id, ib = b.id;
  return t.add_node(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.value(ia);
    const auto& bv = tp.value(ib);
    accumulate(tp, ia, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    });
    accumulate(tp, ib, [&](Tensor& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.vec()) v *= c;
  const auto ia = a.id;
  return a.tape->add_node(std::move(out), {ia}, [ia, c](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    accumulate(tp, ia, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  });
}

Var matmul(Var a, Var b) {
  auto& t = tape_of(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape()) + " x " +
                                shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), n = av.dim(1), p = bv.dim(1);
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out[i * p];
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = av[i * n + k];
      if (aik == 0.0) continue;
      const double* brow = &bv[k * p];
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  const auto ia = a.id, ib = b.id;
  return t.add_node(std::move(out), {ia, ib}, [ia, ib, m, n, p](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.value(ia);
    const auto& bv = tp.value(ib);
    accumulate(tp, ia, [&](Tensor& ga) {
      // ga[i,k] += sum_j g[i,j] b[k,j]
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * p];
        for (std::size_t k = 0; k < n; ++k) {
          const double* brow = &bv[k * p];
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
          ga[i * n + k] += acc;
        }
      }
    });
    accumulate(tp, ib, [&](Tensor& gb) {
      // gb[k,j] += sum_i a[i,k] g[i,j]
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * p];
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = av[i * n + k];
          if (aik == 0.0) continue;
          double* gbrow = &gb[k * p];
          for (std::size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
        }
      }
    });
  });
}

Var add_bias(Var x, Var bias) {
  auto& t = tape_of(x, bias);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (xv.rank() != 2 || bv.size() != xv.dim(1)) {
    throw std::invalid_argument("add_bias: bias " + shape_str(bv.shape()) + " does not fit " +
                                shape_str(xv.shape()));
  }
  const std::size_t r = xv.dim(0), h = xv.dim(1);
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < h; ++j) out[i * h + j] += bv[j];
  }
  const auto ix = x.id, ib = bias.id;
  return t.add_node(std::move(out), {ix, ib}, [ix, ib, r, h](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    accumulate(tp, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    accumulate(tp, ib, [&](Tensor& gb) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < h; ++j) gb[j] += g[i * h + j];
      }
    });
  });
}

Var add_tiled(Var x, Var rows) {
  auto& t = tape_of(x, rows);
  const auto& xv = x.value();
  const auto& pv = rows.value();
  if (xv.rank() != 2 || pv.rank() != 2 || pv.dim(1) != xv.dim(1) || xv.dim(0) % pv.dim(0) != 0) {
    throw std::invalid_argument("add_tiled: " + shape_str(pv.shape()) + " does not tile " +
                                shape_str(xv.shape()));
  }
  const std::size_t r = xv.dim(0), d = pv.dim(0), h = xv.dim(1);
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < h; ++j) out[i * h + j] += pv[(i % d) * h + j];
  }
  const auto ix = x.id, ip = rows.id;
  return t.add_node(std::move(out), {ix, ip}, [ix, ip, r, d, h](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    accumulate(tp, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    accumulate(tp, ip, [&](Tensor& gp) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < h; ++j) gp[(i % d) * h + j] += g[i * h + j];
      }
    });
  });
}

Var repeat_rows(Var x, std::size_t reps) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw std::invalid_argument("repeat_rows: expected a matrix");
  const std::size_t b = xv.dim(0), h = xv.dim(1);
  Tensor out({b * reps, h});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t r = 0; r < reps; ++r) {
      std::copy_n(&xv[i * h], h, &out[(i * reps + r) * h]);
    }
  }
  const auto ix = x.id;
  return x.tape->add_node(std::move(out), {ix}, [ix, b, reps, h](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    accumulate(tp, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t r = 0; r < reps; ++r) {
          for (std::size_t j = 0; j < h; ++j) gx[i * h + j] += g[(i * reps + r) * h + j];
        }
      }
    });
  });
}

Var gather_rows(Var table, std::span<const int> index) {
  const auto& tv = table.value();
  if (tv.rank() != 2) throw std::invalid_argument("gather_rows: expected a matrix");
  const std::size_t v = tv.dim(0), h = tv.dim(1), n = index.size();
  std::vector<int> idx(index.begin(), index.end());
  Tensor out({n, h});
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx[i]) +
                                  " out of range for " + std::to_string(v) + " rows");
    }
    std::copy_n(&tv[static_cast<std::size_t>(idx[i]) * h], h, &out[i * h]);
  }
  const auto it = table.id;
  return table.tape->add_node(
      std::move(out), {it}, [it, idx = std::move(idx), h](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        accumulate(tp, it, [&](Tensor& gt) {
          for (std::size_t i = 0; i < idx.size(); ++i) {
            double* dst = &gt[static_cast<std::size_t>(idx[i]) * h];
            for (std::size_t j = 0; j < h; ++j) dst[j] += g[i * h + j];
          }
        });
      });
}

Var mix_positions(Var mix, Var u, std::size_t positions) {
  auto& t = tape_of(mix, u);
  const auto& mv = mix.value();
  const auto& uv = u.value();
  const std::size_t d = positions;
  if (mv.shape() != Shape{d, d} || uv.rank() != 2 || uv.dim(0) % d != 0) {
    throw std::invalid_argument("mix_positions: shapes " + shape_str(mv.shape()) + ", " +
                                shape_str(uv.shape()));
  }
  const std::size_t b = uv.dim(0) / d, h = uv.dim(1);
  Tensor out(uv.shape());
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < d; ++i) {
      double* orow = &out[(bi * d + i) * h];
      for (std::size_t e = 0; e < d; ++e) {
        const double w = mv[i * d + e];
        const double* urow = &uv[(bi * d + e) * h];
        for (std::size_t j = 0; j < h; ++j) orow[j] += w * urow[j];
      }
    }
  }
  const auto im = mix.id, iu = u.id;
  return t.add_node(std::move(out), {im, iu}, [im, iu, b, d, h](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& mv = tp.value(im);
    const auto& uv = tp.value(iu);
    accumulate(tp, im, [&](Tensor& gm) {
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t i = 0; i < d; ++i) {
          const double* grow = &g[(bi * d + i) * h];
          for (std::size_t e = 0; e < d; ++e) {
            const double* urow = &uv[(bi * d + e) * h];
            double acc = 0.0;
            for (std::size_t j = 0; j < h; ++j) acc += grow[j] * urow[j];
            gm[i * d + e] += acc;
          }
        }
      }
    });
    accumulate(tp, iu, [&](Tensor& gu) {
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t i = 0; i < d; ++i) {
          const double* grow = &g[(bi * d + i) * h];
          for (std::size_t e = 0; e < d; ++e) {
            const double w = mv[i * d + e];
            double* gurow = &gu[(bi * d + e) * h];
            for (std::size_t j = 0; j < h; ++j) gurow[j] += w * grow[j];
          }
        }
      }
    });
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v = std::tanh(v);
  const auto ix = x.id;
  return x.tape->add_node(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self);
    accumulate(tp, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  });
}

Var square(Var x) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v = v * v;
  const auto ix = x.id;
  return x.tape->add_node(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& xv = tp.value(ix);
    accumulate(tp, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * xv[i] * g[i];
    });
  });
}

Var log(Var x) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v = std::log(v);
  const auto ix = x.id;
  return x.tape->add_node(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& xv = tp.value(ix);
    accumulate(tp, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] != 0.0) gx[i] += g[i] / xv[i];
      }
    });
  });
}

Var softmax(Var x) {
  Tensor out = ddlab::softmax(x.value(), -1);
  const auto ix = x.id;
  return x.tape->add_node(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self);
    accumulate(tp, ix, [&](Tensor& gx) {
      const std::size_t k = y.last_dim();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < k; ++c) dot += g[r * k + c] * y[r * k + c];
        for (std::size_t c = 0; c < k; ++c) gx[r * k + c] += y[r * k + c] * (g[r * k + c] - dot);
      }
    });
  });
}

Var log_softmax(Var x) {
  Tensor out = ddlab::log_softmax(x.value(), -1);
  const auto ix = x.id;
  return x.tape->add_node(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self);
    accumulate(tp, ix, [&](Tensor& gx) {
      const std::size_t k = y.last_dim();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double gs = 0.0;
        for (std::size_t c = 0; c < k; ++c) gs += g[r * k + c];
        for (std::size_t c = 0; c < k; ++c) {
          gx[r * k + c] += g[r * k + c] - std::exp(y[r * k + c]) * gs;
        }
      }
    });
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const auto ix = x.id;
  return x.tape->add_node(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    accumulate(tp, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
}

Var sum(Var x) {
  const auto& xv = x.value();
  const double s = std::accumulate(xv.vec().begin(), xv.vec().end(), 0.0);
  const auto ix = x.id;
  return x.tape->add_node(Tensor::scalar(s), {ix}, [ix](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    accumulate(tp, ix, [&](Tensor& gx) {
      for (auto& v : gx.vec()) v += g;
    });
  });
}

Var weighted_sum(Var x, const Tensor& weights) {
  const auto& xv = x.value();
  if (weights.size() != xv.size()) {
    throw std::invalid_argument("weighted_sum: weights " + shape_str(weights.shape()) +
                                " vs input " + shape_str(xv.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (weights[i] != 0.0) s += weights[i] * xv[i];
  }
  const auto ix = x.id;
  return x.tape->add_node(Tensor::scalar(s), {ix}, [ix, w = weights](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    accumulate(tp, ix, [&](Tensor& gx) {
      for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
    });
  });
}

Var stop_gradient(Var x) { return x.tape->constant(x.value()); }

// --------------------------------------------------------- finite differences

FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& loss, ParamStore& params,
                                   const FiniteDiffOptions& options) {
  params.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  const std::vector<double> analytic = params.grads();
  params.zero_grad();

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (options.max_coords > 0 && options.max_coords < coords.size()) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.max_coords; ++i) {
      const auto j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(options.max_coords);
  }

  auto eval = [&]() {
    Tape tape;
    return loss(tape).value().item();
  };

  FiniteDiffReport report;
  auto& vals = params.values();
  for (auto c : coords) {
    const double orig = vals[c];
    vals[c] = orig + options.epsilon;
    const double fp = eval();
    vals[c] = orig - options.epsilon;
    const double fm = eval();
    vals[c] = orig;
    const double numeric = (fp - fm) / (2.0 * options.epsilon);
    const double abs_err = std::abs(numeric - analytic[c]);
    const double denom =
        std::max({std::abs(numeric), std::abs(analytic[c]), options.scale_floor});
    const double rel = abs_err / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = c;
    }
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    ++report.coords_checked;
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace ddlab
