#pragma once

// Reverse-mode autodiff on a per-episode tape. Operations record a backward
// closure as they execute; backward() replays them in exact reverse order and
// flushes leaf gradients into their Parameters. One tape per episode.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nestrec/rng.hpp"
#include "nestrec/tensor.hpp"

namespace nestrec {

// A named learnable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor init)
      : name(std::move(n)), value(std::move(init)), grad(Tensor::zeros(value.shape)) {}
};

// Owns Parameters in registration order; that order is the deterministic
// iteration order for the optimizer, clipping and checkpointing.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    if (by_name_.count(name)) throw InternalError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    by_name_[name] = params_.back().get();
    return *params_.back();
  }

  Parameter* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::vector<Parameter*> all() const {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t count() const { return params_.size(); }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (const auto& p : params_)
      std::fill(p->grad.v.begin(), p->grad.v.end(), 0.0);
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

class Tape;

// Lightweight handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  double scalar() const;
};

class Tape {
 public:
  // Leases a parameter as a leaf node (one node per parameter per tape, so
  // repeated uses accumulate into a single gradient).
  Var leaf(Parameter& p) {
    auto it = leased_.find(&p);
    if (it != leased_.end()) return Var{this, it->second};
    std::uint32_t id = push(p.value);
    leased_[&p] = id;
    return Var{this, id};
  }

  Var constant(Tensor t) { return Var{this, push(std::move(t))}; }

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  Tensor& grad(std::uint32_t id) { return grads_[id]; }

  std::size_t node_count() const { return nodes_.size(); }

  std::uint32_t push(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}});
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }

  void set_back(std::uint32_t id, std::function<void()> back) {
    nodes_[id].back = std::move(back);
  }

  // Seeds d(loss)/d(loss) = 1, traverses in reverse execution order, then
  // adds every leased leaf's gradient into its Parameter.
  void backward(const Var& loss) {
    if (loss.tape != this) throw InternalError("backward on a foreign tape");
    if (nodes_[loss.id].value.size() != 1)
      throw InternalError("backward requires a scalar loss");
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (const auto& node : nodes_) grads_.emplace_back(Tensor::zeros(node.value.shape));
    grads_[loss.id].v[0] = 1.0;
    for (std::uint32_t id = static_cast<std::uint32_t>(nodes_.size()); id-- > 0;)
      if (nodes_[id].back) nodes_[id].back();
    for (auto& [param, id] : leased_) {
      const auto& g = grads_[id];
      for (std::size_t i = 0; i < g.size(); ++i) param->grad.v[i] += g.v[i];
    }
  }

  void clear() {
    nodes_.clear();
    grads_.clear();
    leased_.clear();
  }

 private:
  struct Node {
    Tensor value;
    std::function<void()> back;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<Parameter*, std::uint32_t> leased_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline double Var::scalar() const {
  const Tensor& t = value();
  if (t.size() != 1) throw InternalError("scalar() on a non-scalar value");
  return t.v[0];
}

namespace detail {

inline Tape* same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw InternalError("operands from different tapes");
  return a.tape;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  Tape* t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv))
    throw InternalError("add shape mismatch: " + shape_string(av) + " vs " + shape_string(bv));
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += bv.v[i];
  std::uint32_t id = t->push(std::move(out));
  std::uint32_t ai = a.id, bi = b.id;
  t->set_back(id, [t, ai, bi, id] {
    const Tensor& g = t->grad(id);
    Tensor& ga = t->grad(ai);
    Tensor& gb = t->grad(bi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.v[i] += g.v[i];
      gb.v[i] += g.v[i];
    }
  });
  return Var{t, id};
}

// Elementwise product.
inline Var cmult(const Var& a, const Var& b) {
  Tape* t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv))
    throw InternalError("cmult shape mismatch: " + shape_string(av) + " vs " + shape_string(bv));
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= bv.v[i];
  std::uint32_t id = t->push(std::move(out));
  std::uint32_t ai = a.id, bi = b.id;
  t->set_back(id, [t, ai, bi, id] {
    const Tensor& g = t->grad(id);
    const Tensor& av = t->value(ai);
    const Tensor& bv = t->value(bi);
    Tensor& ga = t->grad(ai);
    Tensor& gb = t->grad(bi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.v[i] += g.v[i] * bv.v[i];
      gb.v[i] += g.v[i] * av.v[i];
    }
  });
  return Var{t, id};
}

inline Var tanh(const Var& x) {
  Tape* t = x.tape;
  Tensor out = x.value();
  for (double& v : out.v) v = std::tanh(v);
  std::uint32_t id = t->push(std::move(out));
  std::uint32_t xi = x.id;
  t->set_back(id, [t, xi, id] {
    const Tensor& g = t->grad(id);
    const Tensor& y = t->value(id);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * (1.0 - y.v[i] * y.v[i]);
  });
  return Var{t, id};
}

inline Var sigmoid(const Var& x) {
  Tape* t = x.tape;
  Tensor out = x.value();
  for (double& v : out.v) v = 1.0 / (1.0 + std::exp(-v));
  std::uint32_t id = t->push(std::move(out));
  std::uint32_t xi = x.id;
  t->set_back(id, [t, xi, id] {
    const Tensor& g = t->grad(id);
    const Tensor& y = t->value(id);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * y.v[i] * (1.0 - y.v[i]);
  });
  return Var{t, id};
}

// [m,k] x [k,n] -> [m,n], or [m,k] x [k] -> [m].
inline Var matmul(const Var& a, const Var& b) {
  Tape* t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2)
    throw InternalError("matmul left operand must be 2-d, got " + shape_string(av));
  std::size_t m = av.rows(), k = av.cols();
  Tensor out;
  if (bv.rank() == 1) {
    if (bv.size() != k)
      throw InternalError("matmul shape mismatch: " + shape_string(av) + " x " + shape_string(bv));
    out = Tensor({m});
    for (std::size_t r = 0; r < m; ++r) {
      double s = 0;
      const double* row = &av.v[r * k];
      for (std::size_t j = 0; j < k; ++j) s += row[j] * bv.v[j];
      out.v[r] = s;
    }
  } else if (bv.rank() == 2 && bv.rows() == k) {
    std::size_t n = bv.cols();
    out = Tensor({m, n});
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        double arj = av.v[r * k + j];
        for (std::size_t c = 0; c < n; ++c) out.v[r * n + c] += arj * bv.v[j * n + c];
      }
  } else {
    throw InternalError("matmul shape mismatch: " + shape_string(av) + " x " + shape_string(bv));
  }
  std::uint32_t id = t->push(std::move(out));
  std::uint32_t ai = a.id, bi = b.id;
  t->set_back(id, [t, ai, bi, id] {
    const Tensor& g = t->grad(id);
    const Tensor& av = t->value(ai);
    const Tensor& bv = t->value(bi);
    Tensor& ga = t->grad(ai);
    Tensor& gb = t->grad(bi);
    std::size_t m = av.rows(), k = av.cols();
    if (bv.rank() == 1) {
      for (std::size_t r = 0; r < m; ++r) {
        double gr = g.v[r];
        for (std::size_t j = 0; j < k; ++j) {
          ga.v[r * k + j] += gr * bv.v[j];
          gb.v[j] += gr * av.v[r * k + j];
        }
      }
    } else {
      std::size_t n = bv.cols();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          double grc = g.v[r * n + c];
          for (std::size_t j = 0; j < k; ++j) {
            ga.v[r * k + j] += grc * bv.v[j * n + c];
            gb.v[j * n + c] += grc * av.v[r * k + j];
          }
        }
    }
  });
  return Var{t, id};
}

// W x + b for a vector x; the workhorse of every projection.
inline Var affine(const Var& w, const Var& x, const Var& b) {
  return add(matmul(w, x), b);
}

inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw InternalError("concat of nothing");
  Tape* t = parts[0].tape;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.value().rank() != 1) throw InternalError("concat expects vectors");
    total += p.value().size();
  }
  Tensor out({total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& pv = p.value();
    std::copy(pv.v.begin(), pv.v.end(), out.v.begin() + offset);
    offset += pv.size();
  }
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) ids.push_back(p.id);
  std::uint32_t id = t->push(std::move(out));
  t->set_back(id, [t, ids, id] {
    const Tensor& g = t->grad(id);
    std::size_t offset = 0;
    for (auto pid : ids) {
      Tensor& gp = t->grad(pid);
      for (std::size_t i = 0; i < gp.size(); ++i) gp.v[i] += g.v[offset + i];
      offset += gp.size();
    }
  });
  return Var{t, id};
}

inline Var slice(const Var& x, std::size_t offset, std::size_t length) {
  Tape* t = x.tape;
  const Tensor& xv = x.value();
  if (xv.rank() != 1 || offset + length > xv.size())
    throw InternalError("slice out of range on " + shape_string(xv));
  Tensor out({length});
  std::copy(xv.v.begin() + offset, xv.v.begin() + offset + length, out.v.begin());
  std::uint32_t id = t->push(std::move(out));
  std::uint32_t xi = x.id;
  t->set_back(id, [t, xi, id, offset, length] {
    const Tensor& g = t->grad(id);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < length; ++i) gx.v[offset + i] += g.v[i];
  });
  return Var{t, id};
}

// Row lookup into a 2-d table (embedding fetch).
inline Var pick_row(const Var& table, std::size_t row) {
  Tape* t = table.tape;
  const Tensor& tv = table.value();
  if (tv.rank() != 2 || row >= tv.rows())
    throw InternalError("pick_row out of range on " + shape_string(tv));
  std::size_t cols = tv.cols();
  Tensor out({cols});
  std::copy(tv.v.begin() + row * cols, tv.v.begin() + (row + 1) * cols, out.v.begin());
  std::uint32_t id = t->push(std::move(out));
  std::uint32_t ti = table.id;
  t->set_back(id, [t, ti, id, row, cols] {
    const Tensor& g = t->grad(id);
    Tensor& gt = t->grad(ti);
    for (std::size_t i = 0; i < cols; ++i) gt.v[row * cols + i] += g.v[i];
  });
  return Var{t, id};
}

// Inverted dropout: zero with probability rate, survivors scaled by
// 1/(1-rate). Training-time only; evaluation passes tensors through unchanged.
inline Var dropout(const Var& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw DataError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  Tape* t = x.tape;
  const Tensor& xv = x.value();
  double scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.bernoulli(rate) ? 0.0 : scale;
    out.v[i] *= (*mask)[i];
  }
  std::uint32_t id = t->push(std::move(out));
  std::uint32_t xi = x.id;
  t->set_back(id, [t, xi, id, mask] {
    const Tensor& g = t->grad(id);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * (*mask)[i];
  });
  return Var{t, id};
}

inline Var scale(const Var& x, double factor) {
  Tape* t = x.tape;
  Tensor out = x.value();
  for (double& v : out.v) v *= factor;
  std::uint32_t id = t->push(std::move(out));
  std::uint32_t xi = x.id;
  t->set_back(id, [t, xi, id, factor] {
    const Tensor& g = t->grad(id);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * factor;
  });
  return Var{t, id};
}

inline Var sum(const Var& x) {
  Tape* t = x.tape;
  double total = 0;
  for (double v : x.value().v) total += v;
  std::uint32_t id = t->push(Tensor::scalar(total));
  std::uint32_t xi = x.id;
  t->set_back(id, [t, xi, id] {
    double g = t->grad(id).v[0];
    Tensor& gx = t->grad(xi);
    for (double& v : gx.v) v += g;
  });
  return Var{t, id};
}

// Softmax restricted to the masked-in entries; masked-out probabilities are
// exactly zero. Forward-only helper shared by the loss and by decoding.
inline std::vector<double> masked_softmax(const Tensor& logits,
                                          const std::vector<bool>& mask) {
  if (logits.rank() != 1 || logits.size() != mask.size())
    throw InternalError("masked_softmax arity mismatch");
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      any = true;
      best = std::max(best, logits.v[i]);
    }
  if (!any) throw InternalError("masked_softmax with an empty mask");
  std::vector<double> probs(mask.size(), 0.0);
  double z = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      probs[i] = std::exp(logits.v[i] - best);
      z += probs[i];
    }
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) probs[i] /= z;
  return probs;
}

// Negative log-likelihood of the gold entry under the mask-restricted
// softmax. The gold entry must be masked-in.
inline Var nll_masked_softmax(const Var& logits, const std::vector<bool>& mask,
                              std::size_t gold) {
  if (gold >= mask.size() || !mask[gold])
    throw InternalError("gold action is masked out");
  Tape* t = logits.tape;
  auto probs = std::make_shared<std::vector<double>>(masked_softmax(logits.value(), mask));
  double p_gold = (*probs)[gold];
  std::uint32_t id = t->push(Tensor::scalar(-std::log(p_gold)));
  std::uint32_t li = logits.id;
  auto mask_copy = std::make_shared<std::vector<bool>>(mask);
  t->set_back(id, [t, li, id, probs, mask_copy, gold] {
    double g = t->grad(id).v[0];
    Tensor& gl = t->grad(li);
    for (std::size_t i = 0; i < probs->size(); ++i) {
      if (!(*mask_copy)[i]) continue;
      double indicator = (i == gold) ? 1.0 : 0.0;
      gl.v[i] += g * ((*probs)[i] - indicator);
    }
  });
  return Var{t, id};
}

// --- Gradient verification -------------------------------------------------
//
// Compares tape gradients against central differences. The differencing side
// only ever evaluates the forward pass, so it stays independent of the
// backward implementation it checks.

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

// `build` must construct the same scalar loss on any fresh tape (re-seed any
// internal randomness on every call). Relative error uses a floored
// denominator so that near-zero gradients are compared absolutely.
inline GradCheckResult grad_check(const std::function<Var(Tape&)>& build,
                                  std::span<Parameter* const> params, double eps = 1e-5,
                                  int max_coords_per_param = -1,
                                  std::uint64_t coord_seed = 12345) {
  for (Parameter* p : params) std::fill(p->grad.v.begin(), p->grad.v.end(), 0.0);
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  auto f = [&build]() {
    Tape tape;
    return build(tape).scalar();
  };
  GradCheckResult result;
  Rng rng(coord_seed);
  for (Parameter* p : params) {
    std::vector<std::size_t> coords;
    std::size_t n = p->value.size();
    if (max_coords_per_param < 0 || static_cast<std::size_t>(max_coords_per_param) >= n) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (int i = 0; i < max_coords_per_param; ++i)
        coords.push_back(static_cast<std::size_t>(rng.below(static_cast<int>(n))));
    }
    for (std::size_t c : coords) {
      double saved = p->value.v[c];
      p->value.v[c] = saved + eps;
      double up = f();
      p->value.v[c] = saved - eps;
      double down = f();
      p->value.v[c] = saved;
      double fd = (up - down) / (2.0 * eps);
      double analytic = p->grad.v[c];
      if (!std::isfinite(fd) || !std::isfinite(analytic))
        throw InternalError("non-finite value during gradient check of " + p->name);
      double rel = std::abs(fd - analytic) /
                   std::max({std::abs(fd), std::abs(analytic), 1e-5});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_parameter = p->name + "[" + std::to_string(c) + "]";
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace nestrec
