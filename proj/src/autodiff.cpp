#include "xmodal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

using Grads = std::vector<std::optional<Tensor>>;

void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_string(t.shape()));
}

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Gradient of cos(u, v) with respect to u, scaled by g and added into out.
void add_cosine_grad(std::span<const double> u, std::span<const double> v, double nu, double nv, double cos,
                     double g, std::span<double> out) {
  const double inv_uv = 1.0 / (nu * nv);
  const double inv_uu = 1.0 / (nu * nu);
  for (std::size_t i = 0; i < u.size(); ++i) out[i] += g * (v[i] * inv_uv - cos * u[i] * inv_uu);
}

std::vector<double> row_norms(const Tensor& t, const char* what) {
  std::vector<double> norms(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    norms[r] = euclidean_norm(t.row(r));
    if (norms[r] <= kNormFloor) {
      throw DegenerateInputError(std::string(what) + ": row " + std::to_string(r) + " has zero norm");
    }
  }
  return norms;
}

// Cosine of aligned rows; the output gets `out_shape` (one entry per row).
Var aligned_cosine(const Var& a, const Var& b, Shape out_shape, const char* what) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()) + " differ");
  }
  const std::size_t m = av.rows();
  const auto na = row_norms(av, what);
  const auto nb = row_norms(bv, what);
  std::vector<double> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double aa = dot(av.row(r), av.row(r));
    const double bb = dot(bv.row(r), bv.row(r));
    out[r] = dot(av.row(r), bv.row(r)) / std::sqrt(aa * bb);
  }
  Tensor value(std::move(out_shape), out);
  return a.tape().record(std::move(value), {a.id(), b.id()},
                         [&av, &bv, na, nb, out](const Tensor& g, const Tensor&) -> Grads {
                           Tensor ga = Tensor::zeros_like(av);
                           Tensor gb = Tensor::zeros_like(bv);
                           for (std::size_t r = 0; r < av.rows(); ++r) {
                             add_cosine_grad(av.row(r), bv.row(r), na[r], nb[r], out[r], g[r], ga.row(r));
                             add_cosine_grad(bv.row(r), av.row(r), nb[r], na[r], out[r], g[r], gb.row(r));
                           }
                           return {std::move(ga), std::move(gb)};
                         });
}

Var unary(const Var& a, Tensor value, std::function<double(double x, double y)> derivative) {
  const Tensor& x = a.value();
  return a.tape().record(std::move(value), {a.id()}, [&x, derivative](const Tensor& g, const Tensor& y) -> Grads {
    Tensor gx = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * derivative(x[i], y[i]);
    return {std::move(gx)};
  });
}

}  // namespace

// --------------------------------------------------------------------------------------
// Var / Tape / Gradients
// --------------------------------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor* Gradients::find(NodeId id) const {
  if (id >= grads_.size() || !grads_[id]) return nullptr;
  return &*grads_[id];
}

Tensor Gradients::of(const Var& v) const {
  if (const Tensor* g = find(v.id())) return *g;
  return Tensor::zeros_like(v.value());
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
  bool needs = false;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw ContractError("record: input node does not precede output");
    needs = needs || nodes_[in].requires_grad;
  }
  needs = needs && static_cast<bool>(backward);
  if (!needs) {
    inputs.clear();
    backward = nullptr;
  }
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), needs});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
  if (&loss.tape() != this) throw ContractError("backward: loss recorded on another tape");
  if (!loss.value().is_scalar()) {
    throw ContractError("backward: loss must be scalar, got " + shape_string(loss.value().shape()));
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss.id()] = Tensor(loss.value().shape(), 1.0);
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (!grads[k] || !node.backward) continue;
    auto input_grads = node.backward(*grads[k], node.value);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const NodeId in = node.inputs[i];
      if (i >= input_grads.size() || !input_grads[i] || !nodes_[in].requires_grad) continue;
      if (grads[in]) {
        *grads[in] += *input_grads[i];
      } else {
        grads[in] = std::move(*input_grads[i]);
      }
    }
  }
  return Gradients(std::move(grads));
}

// --------------------------------------------------------------------------------------
// Linear algebra
// --------------------------------------------------------------------------------------

namespace {

// c[m x n] += a[m x k] * b[k x n], with optional transposes expressed via strides.
Tensor matmul_values(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(k) + " and " + std::to_string(kb) +
                         " differ");
  }
  Tensor c(Shape{m, n});
  const std::size_t ac = a.cols();
  const std::size_t bc = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ta ? a[p * ac + i] : a[i * ac + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        const double bpj = tb ? b[j * bc + p] : b[p * bc + j];
        c[i * n + j] += aip * bpj;
      }
    }
  }
  return c;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  return a.tape().record(matmul_values(av, false, bv, false), {a.id(), b.id()}, [&av, &bv](const Tensor& g, const Tensor&) -> Grads {
    return {matmul_values(g, false, bv, true), matmul_values(av, true, g, false)};
  });
}

Var affine(const Var& x, const Var& weight, const Var& bias) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "affine");
  require_matrix(wv, "affine");
  if (bv.size() != wv.cols()) {
    throw DimensionError("affine: bias " + shape_string(bv.shape()) + " does not match weight " +
                         shape_string(wv.shape()));
  }
  Tensor y = matmul_values(xv, false, wv, false);
  const std::size_t n = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] += bv[c];
  }
  return x.tape().record(std::move(y), {x.id(), weight.id(), bias.id()},
                         [&xv, &wv, &bv](const Tensor& g, const Tensor&) -> Grads {
                           Tensor gb = Tensor::zeros_like(bv);
                           const std::size_t n = g.cols();
                           for (std::size_t r = 0; r < g.rows(); ++r) {
                             for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
                           }
                           return {matmul_values(g, false, wv, true), matmul_values(xv, true, g, false),
                                   std::move(gb)};
                         });
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  require_matrix(av, "transpose");
  const std::size_t m = av.rows();
  const std::size_t n = av.cols();
  Tensor t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = av[i * n + j];
  }
  return a.tape().record(std::move(t), {a.id()}, [m, n](const Tensor& g, const Tensor&) -> Grads {
    Tensor ga(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[j * m + i];
    }
    return {std::move(ga)};
  });
}

// --------------------------------------------------------------------------------------
// Elementwise
// --------------------------------------------------------------------------------------

Var apply(BinaryOp op, const Var& a, const Var& b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw DimensionError("elementwise: shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()) +
                         " differ");
  }
  Tensor out = Tensor::zeros_like(av);
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (op) {
      case BinaryOp::kAdd: out[i] = av[i] + bv[i]; break;
      case BinaryOp::kSub: out[i] = av[i] - bv[i]; break;
      case BinaryOp::kMul: out[i] = av[i] * bv[i]; break;
    }
  }
  return a.tape().record(std::move(out), {a.id(), b.id()}, [op, &av, &bv](const Tensor& g, const Tensor&) -> Grads {
    switch (op) {
      case BinaryOp::kAdd:
        return {g, g};
      case BinaryOp::kSub: {
        Tensor neg = g;
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
        return {g, std::move(neg)};
      }
      case BinaryOp::kMul: {
        Tensor ga = Tensor::zeros_like(g);
        Tensor gb = Tensor::zeros_like(g);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] = g[i] * bv[i];
          gb[i] = g[i] * av[i];
        }
        return {std::move(ga), std::move(gb)};
      }
    }
    return {};
  });
}

Var apply(UnaryOp op, const Var& a) {
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros_like(x);
  switch (op) {
    case UnaryOp::kTanh:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
      return unary(a, std::move(y), [](double, double out) { return 1.0 - out * out; });
    case UnaryOp::kRelu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      return unary(a, std::move(y), [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
    case UnaryOp::kSoftplus:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_softplus(x[i]);
      return unary(a, std::move(y), [](double in, double) { return sigmoid(in); });
    case UnaryOp::kExp:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]);
      return unary(a, std::move(y), [](double, double out) { return out; });
    case UnaryOp::kLog:
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) throw std::domain_error("log of non-positive value " + std::to_string(x[i]));
        y[i] = std::log(x[i]);
      }
      return unary(a, std::move(y), [](double in, double) { return 1.0 / in; });
  }
  throw ContractError("unknown unary op");
}

Var add(const Var& a, const Var& b) { return apply(BinaryOp::kAdd, a, b); }
Var sub(const Var& a, const Var& b) { return apply(BinaryOp::kSub, a, b); }
Var mul(const Var& a, const Var& b) { return apply(BinaryOp::kMul, a, b); }
Var tanh(const Var& a) { return apply(UnaryOp::kTanh, a); }
Var relu(const Var& a) { return apply(UnaryOp::kRelu, a); }
Var softplus(const Var& a) { return apply(UnaryOp::kSoftplus, a); }
Var exp(const Var& a) { return apply(UnaryOp::kExp, a); }
Var log(const Var& a) { return apply(UnaryOp::kLog, a); }

Var scale(const Var& a, double factor) {
  Tensor y = a.value();
  for (double& v : y.data()) v *= factor;
  return a.tape().record(std::move(y), {a.id()}, [factor](const Tensor& g, const Tensor&) -> Grads {
    Tensor ga = g;
    for (double& v : ga.data()) v *= factor;
    return {std::move(ga)};
  });
}

// --------------------------------------------------------------------------------------
// Reductions and indexing
// --------------------------------------------------------------------------------------

Var sum(const Var& a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  const Shape shape = x.shape();
  return a.tape().record(Tensor::scalar(s), {a.id()}, [shape](const Tensor& g, const Tensor&) -> Grads {
    return {Tensor(shape, g.item())};
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sum(const Var& a) {
  const Tensor& x = a.value();
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  Tensor out(Shape{m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v;
    out[r] = s;
  }
  const Shape shape = x.shape();
  return a.tape().record(std::move(out), {a.id()}, [shape, m, n](const Tensor& g, const Tensor&) -> Grads {
    Tensor ga(shape);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] = g[r];
    }
    return {std::move(ga)};
  });
}

Var gather(const Var& a, std::vector<std::size_t> flat_indices) {
  const Tensor& x = a.value();
  if (flat_indices.empty()) throw ContractError("gather: no indices");
  Tensor out(Shape{flat_indices.size(), 1});
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= x.size()) throw IndexError("gather: index out of range");
    out[i] = x[flat_indices[i]];
  }
  const Shape shape = x.shape();
  return a.tape().record(std::move(out), {a.id()}, [shape, idx = std::move(flat_indices)](const Tensor& g, const Tensor&) -> Grads {
    Tensor ga(shape);
    for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
    return {std::move(ga)};
  });
}

Var select_rows(const Var& a, std::vector<std::size_t> rows) {
  const Tensor& x = a.value();
  require_matrix(x, "select_rows");
  if (rows.empty()) throw ContractError("select_rows: no rows");
  const std::size_t n = x.cols();
  Tensor out(Shape{rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw IndexError("select_rows: row index out of range");
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  const Shape shape = x.shape();
  return a.tape().record(std::move(out), {a.id()}, [shape, n, idx = std::move(rows)](const Tensor& g, const Tensor&) -> Grads {
    Tensor ga(shape);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < n; ++c) ga[idx[i] * n + c] += g[i * n + c];
    }
    return {std::move(ga)};
  });
}

// --------------------------------------------------------------------------------------
// Normalization and similarity
// --------------------------------------------------------------------------------------

Var l2_normalize(const Var& v, bool* degenerate) {
  const Tensor& x = v.value();
  const double norm = euclidean_norm(x.data());
  auto result = xmodal::l2_normalize(x);
  if (degenerate) *degenerate = result.degenerate;
  if (result.degenerate) {
    return v.tape().record(std::move(result.value), {v.id()}, [](const Tensor& g, const Tensor&) -> Grads { return {g}; });
  }
  return v.tape().record(std::move(result.value), {v.id()}, [norm](const Tensor& g, const Tensor& n) -> Grads {
    const double ng = dot(n.data(), g.data());
    Tensor gv = Tensor::zeros_like(g);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] = (g[i] - n[i] * ng) / norm;
    return {std::move(gv)};
  });
}

Var cosine_similarity(const Var& u, const Var& v) {
  if (u.value().size() != v.value().size()) throw DimensionError("cosine_similarity: length mismatch");
  if (u.value().rows() != 1 || v.value().rows() != 1) {
    throw DimensionError("cosine_similarity: expected vectors, got " + shape_string(u.value().shape()));
  }
  return aligned_cosine(u, v, Shape{}, "cosine_similarity");
}

Var row_cosine(const Var& a, const Var& b) {
  require_matrix(a.value(), "row_cosine");
  return aligned_cosine(a, b, Shape{a.value().rows(), 1}, "row_cosine");
}

Var cosine_matrix(const Var& a, const Var& b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "cosine_matrix");
  require_matrix(bv, "cosine_matrix");
  if (av.cols() != bv.cols()) throw DimensionError("cosine_matrix: embedding widths differ");
  const std::size_t m = av.rows();
  const std::size_t n = bv.rows();
  const auto na = row_norms(av, "cosine_matrix");
  const auto nb = row_norms(bv, "cosine_matrix");
  std::vector<double> sq_a(m), sq_b(n);
  for (std::size_t i = 0; i < m; ++i) sq_a[i] = dot(av.row(i), av.row(i));
  for (std::size_t j = 0; j < n; ++j) sq_b[j] = dot(bv.row(j), bv.row(j));
  Tensor c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = dot(av.row(i), bv.row(j)) / std::sqrt(sq_a[i] * sq_b[j]);
  }
  return a.tape().record(std::move(c), {a.id(), b.id()}, [&av, &bv, na, nb, m, n](const Tensor& g, const Tensor& cv) -> Grads {
    Tensor ga = Tensor::zeros_like(av);
    Tensor gb = Tensor::zeros_like(bv);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = g[i * n + j];
        if (gij == 0.0) continue;
        const double cij = cv[i * n + j];
        add_cosine_grad(av.row(i), bv.row(j), na[i], nb[j], cij, gij, ga.row(i));
        add_cosine_grad(bv.row(j), av.row(i), nb[j], na[i], cij, gij, gb.row(j));
      }
    }
    return {std::move(ga), std::move(gb)};
  });
}

Var masked_row_logsumexp(const Var& a, std::vector<std::uint8_t> include) {
  const Tensor& x = a.value();
  require_matrix(x, "masked_row_logsumexp");
  if (include.size() != x.size()) throw DimensionError("masked_row_logsumexp: mask size mismatch");
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  Tensor out(Shape{m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    double shift = -std::numeric_limits<double>::infinity();
    std::size_t included = 0;
    bool has_nan = false;
    for (std::size_t c = 0; c < n; ++c) {
      if (!include[r * n + c]) continue;
      ++included;
      has_nan = has_nan || std::isnan(x[r * n + c]);
      shift = std::max(shift, x[r * n + c]);
    }
    if (included == 0) {
      throw ContractError("masked_row_logsumexp: row " + std::to_string(r) + " has no included entries");
    }
    if (has_nan || shift == -std::numeric_limits<double>::infinity()) {
      out[r] = has_nan ? std::numeric_limits<double>::quiet_NaN() : shift;
      continue;
    }
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (include[r * n + c]) s += std::exp(x[r * n + c] - shift);
    }
    out[r] = shift + std::log(s);
  }
  return a.tape().record(std::move(out), {a.id()}, [&x, m, n, mask = std::move(include)](const Tensor& g, const Tensor& lse) -> Grads {
    Tensor ga = Tensor::zeros_like(x);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        if (mask[r * n + c]) ga[r * n + c] = g[r] * std::exp(x[r * n + c] - lse[r]);
      }
    }
    return {std::move(ga)};
  });
}

}  // namespace xmodal
