#include "permflow/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "permflow/blas.hpp"

namespace permflow::nn {

namespace {

thread_local bool g_grad_enabled = true;

enum class Bcast { Same, Tail, Col, Scalar, Invalid };

// How `b` broadcasts against `a`.
Bcast bcast_kind(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (b.size() == 1) return Bcast::Scalar;
  if (b.ndim() == 1 && a.ndim() >= 1 && a.dim(a.ndim() - 1) == b.dim(0)) return Bcast::Tail;
  if (b.ndim() == 2 && a.ndim() == 2 && b.dim(0) == a.dim(0) && b.dim(1) == 1) return Bcast::Col;
  return Bcast::Invalid;
}

Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backfn) {
  Var out(std::move(val), false);
  bool req = false;
  if (g_grad_enabled) {
    for (const Var& p : parents)
      if (p.defined() && p.requires_grad()) req = true;
  }
  if (req) {
    Node& n = *out.node();
    n.requires_grad = true;
    for (const Var& p : parents) n.parents.push_back(p.node());
    n.backfn = std::move(backfn);
  }
  return out;
}

void accumulate_bcast(Node& parent, const Tensor& g, const Tensor& a_val, Bcast kind) {
  Tensor& pg = parent.ensure_grad();
  switch (kind) {
    case Bcast::Same:
      for (int64_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      break;
    case Bcast::Scalar: {
      double acc = 0.0;
      for (int64_t i = 0; i < g.size(); ++i) acc += g[i];
      pg[0] += acc;
      break;
    }
    case Bcast::Tail: {
      int64_t d = pg.size();
      int64_t rows = g.size() / d;
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) pg[j] += g[r * d + j];
      break;
    }
    case Bcast::Col: {
      int64_t bdim = a_val.dim(0);
      int64_t d = a_val.dim(1);
      for (int64_t r = 0; r < bdim; ++r) {
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j) acc += g[r * d + j];
        pg[r] += acc;
      }
      break;
    }
    case Bcast::Invalid:
      throw std::logic_error("invalid broadcast in backward");
  }
}

double bval(const Tensor& b, int64_t flat_index, const Tensor& a, Bcast kind) {
  switch (kind) {
    case Bcast::Same: return b[flat_index];
    case Bcast::Scalar: return b[0];
    case Bcast::Tail: {
      int64_t d = b.size();
      return b[flat_index % d];
    }
    case Bcast::Col: {
      int64_t d = a.dim(1);
      return b[flat_index / d];
    }
    default: throw std::logic_error("invalid broadcast");
  }
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->val = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::param(Tensor value, std::string name) {
  Var v(std::move(value), true);
  v.node_->name = std::move(name);
  return v;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  if (!root.defined() || !root.requires_grad())
    throw std::invalid_argument("backward: root does not require grad");
  // Iterative topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  Tensor& g = root.node()->ensure_grad();
  for (int64_t i = 0; i < g.size(); ++i) g[i] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn && n->has_grad) n->backfn(*n);
  }
}

// ---------------- elementwise ----------------

namespace {

Var binary_op(const Var& a, const Var& b, bool is_mul, double sign_b) {
  Bcast kind = bcast_kind(a.val(), b.val());
  if (kind == Bcast::Invalid)
    throw std::invalid_argument("elementwise op: incompatible shapes " + a.val().shape_str() +
                                " vs " + b.val().shape_str());
  Tensor out(a.val().shape());
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (is_mul) {
    for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] * bval(bv, i, av, kind);
  } else {
    for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign_b * bval(bv, i, av, kind);
  }
  return make_op(std::move(out), {a, b}, [a, b, kind, is_mul, sign_b](Node& n) {
    const Tensor& g = n.grad;
    if (a.requires_grad()) {
      Tensor& ga = a.node()->ensure_grad();
      if (is_mul) {
        const Tensor& bv = b.val();
        const Tensor& av = a.val();
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bval(bv, i, av, kind);
      } else {
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    }
    if (b.requires_grad()) {
      if (is_mul) {
        Tensor gb(n.val.shape());
        const Tensor& av = a.val();
        for (int64_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
        accumulate_bcast(*b.node(), gb, av, kind);
      } else if (sign_b == 1.0) {
        accumulate_bcast(*b.node(), g, a.val(), kind);
      } else {
        Tensor gb(n.val.shape());
        for (int64_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
        accumulate_bcast(*b.node(), gb, a.val(), kind);
      }
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary_op(a, b, false, 1.0); }
Var sub(const Var& a, const Var& b) { return binary_op(a, b, false, -1.0); }
Var mul(const Var& a, const Var& b) { return binary_op(a, b, true, 1.0); }

Var scale(const Var& a, double s) {
  Tensor out(a.val().shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] * s;
  return make_op(std::move(out), {a}, [a, s](Node& n) {
    Tensor& ga = a.node()->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * s;
  });
}

Var square(const Var& a) { return mul(a, a); }

Var gelu(const Var& a) {
  const Tensor& av = a.val();
  Tensor out(av.shape());
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
  return make_op(std::move(out), {a}, [a](Node& n) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    const Tensor& av = a.val();
    Tensor& ga = a.node()->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) {
      double x = av[i];
      double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      ga[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

Var relu(const Var& a) {
  const Tensor& av = a.val();
  Tensor out(av.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return make_op(std::move(out), {a}, [a](Node& n) {
    const Tensor& av = a.val();
    Tensor& ga = a.node()->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i)
      if (av[i] > 0.0) ga[i] += n.grad[i];
  });
}

Var softmax_lastdim(const Var& a) {
  const Tensor& av = a.val();
  if (av.ndim() < 1) throw std::invalid_argument("softmax: needs at least 1-D");
  int64_t d = av.dim(av.ndim() - 1);
  int64_t rows = av.size() / d;
  Tensor out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double* y = out.data() + r * d;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < d; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int64_t j = 0; j < d; ++j) y[j] /= sum;
  }
  Tensor saved = out;
  return make_op(std::move(out), {a}, [a, saved, d](Node& n) {
    int64_t rows = saved.size() / d;
    Tensor& ga = a.node()->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = saved.data() + r * d;
      const double* g = n.grad.data() + r * d;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
      double* out_g = ga.data() + r * d;
      for (int64_t j = 0; j < d; ++j) out_g[j] += y[j] * (g[j] - dot);
    }
  });
}

Var layer_norm(const Var& a, double eps) {
  const Tensor& av = a.val();
  if (av.ndim() < 1) throw std::invalid_argument("layer_norm: needs at least 1-D");
  int64_t d = av.dim(av.ndim() - 1);
  int64_t rows = av.size() / d;
  Tensor out(av.shape());
  Tensor mu({rows}), rstd({rows});
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double m = 0.0;
    for (int64_t j = 0; j < d; ++j) m += x[j];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = x[j] - m;
      v += c * c;
    }
    v /= static_cast<double>(d);
    double rs = 1.0 / std::sqrt(v + eps);
    mu[r] = m;
    rstd[r] = rs;
    double* y = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) y[j] = (x[j] - m) * rs;
  }
  return make_op(std::move(out), {a}, [a, mu, rstd, d](Node& n) {
    int64_t rows = mu.size();
    const Tensor& av = a.val();
    Tensor& ga = a.node()->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* x = av.data() + r * d;
      const double* g = n.grad.data() + r * d;
      double* og = ga.data() + r * d;
      double m = mu[r], rs = rstd[r];
      double mean_g = 0.0, mean_gx = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        double xh = (x[j] - m) * rs;
        mean_g += g[j];
        mean_gx += g[j] * xh;
      }
      mean_g /= static_cast<double>(d);
      mean_gx /= static_cast<double>(d);
      for (int64_t j = 0; j < d; ++j) {
        double xh = (x[j] - m) * rs;
        og[j] += rs * (g[j] - mean_g - xh * mean_gx);
      }
    }
  });
}

// ---------------- shape ops ----------------

Var reshape(const Var& a, std::vector<int64_t> shape) {
  Tensor out = a.val().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a.node()->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  });
}

namespace {

void permute_copy(const Tensor& src, Tensor& dst, const std::vector<int>& axes) {
  int nd = src.ndim();
  std::vector<int64_t> in_strides(static_cast<size_t>(nd), 1);
  for (int i = nd - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * src.dim(i + 1);
  std::vector<int64_t> out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = src.dim(axes[static_cast<size_t>(i)]);
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  int64_t total = src.size();
  for (int64_t o = 0; o < total; ++o) {
    int64_t src_off = 0;
    for (int i = 0; i < nd; ++i)
      src_off += idx[static_cast<size_t>(i)] * in_strides[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    dst[o] = src[src_off];
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
}

}  // namespace

Var permute(const Var& a, const std::vector<int>& axes) {
  const Tensor& av = a.val();
  int nd = av.ndim();
  if (static_cast<int>(axes.size()) != nd) throw std::invalid_argument("permute: axes size mismatch");
  std::vector<int64_t> out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = av.dim(axes[static_cast<size_t>(i)]);
  Tensor out(out_shape);
  permute_copy(av, out, axes);
  return make_op(std::move(out), {a}, [a, axes, nd](Node& n) {
    std::vector<int> inv(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) inv[static_cast<size_t>(axes[static_cast<size_t>(i)])] = i;
    Tensor gperm(a.val().shape());
    permute_copy(n.grad, gperm, inv);
    Tensor& ga = a.node()->ensure_grad();
    for (int64_t i = 0; i < gperm.size(); ++i) ga[i] += gperm[i];
  });
}

Var transpose_last2(const Var& a) {
  int nd = a.val().ndim();
  if (nd < 2) throw std::invalid_argument("transpose_last2: needs >= 2-D");
  std::vector<int> axes(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) axes[static_cast<size_t>(i)] = i;
  std::swap(axes[static_cast<size_t>(nd - 1)], axes[static_cast<size_t>(nd - 2)]);
  return permute(a, axes);
}

Var slice_lastdim(const Var& a, int64_t start, int64_t len) {
  const Tensor& av = a.val();
  int64_t d = av.dim(av.ndim() - 1);
  if (start < 0 || len < 1 || start + len > d) throw std::invalid_argument("slice: out of range");
  std::vector<int64_t> shape = av.shape();
  shape.back() = len;
  int64_t rows = av.size() / d;
  Tensor out(shape);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < len; ++j) out[r * len + j] = av[r * d + start + j];
  return make_op(std::move(out), {a}, [a, start, len, d](Node& n) {
    int64_t rows = n.grad.size() / len;
    Tensor& ga = a.node()->ensure_grad();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < len; ++j) ga[r * d + start + j] += n.grad[r * len + j];
  });
}

Var concat_lastdim(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty");
  int64_t d_total = 0;
  const Tensor& first = parts[0].val();
  int64_t rows = first.size() / first.dim(first.ndim() - 1);
  for (const Var& p : parts) {
    const Tensor& pv = p.val();
    if (pv.size() / pv.dim(pv.ndim() - 1) != rows)
      throw std::invalid_argument("concat: row count mismatch");
    d_total += pv.dim(pv.ndim() - 1);
  }
  std::vector<int64_t> shape = first.shape();
  shape.back() = d_total;
  Tensor out(shape);
  int64_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.val();
    int64_t d = pv.dim(pv.ndim() - 1);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j) out[r * d_total + off + j] = pv[r * d + j];
    off += d;
  }
  return make_op(std::move(out), parts, [parts, d_total, rows](Node& n) {
    int64_t off = 0;
    for (const Var& p : parts) {
      int64_t d = p.val().dim(p.val().ndim() - 1);
      if (p.requires_grad()) {
        Tensor& gp = p.node()->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) gp[r * d + j] += n.grad[r * d_total + off + j];
      }
      off += d;
    }
  });
}

Var sum_all(const Var& a) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.val().size(); ++i) acc += a.val()[i];
  return make_op(Tensor::scalar(acc), {a}, [a](Node& n) {
    Tensor& ga = a.node()->ensure_grad();
    double g = n.grad[0];
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.val().size())); }

// ---------------- dense algebra ----------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
    throw std::invalid_argument("matmul: shape mismatch " + av.shape_str() + " x " + bv.shape_str());
  int m = static_cast<int>(av.dim(0)), k = static_cast<int>(av.dim(1)), n = static_cast<int>(bv.dim(1));
  Tensor out({m, n});
  gemm(false, false, m, n, k, 1.0, av.data(), k, bv.data(), n, 0.0, out.data(), n);
  return make_op(std::move(out), {a, b}, [a, b, m, k, n](Node& nd) {
    if (a.requires_grad()) {
      Tensor& ga = a.node()->ensure_grad();
      gemm(false, true, m, k, n, 1.0, nd.grad.data(), n, b.val().data(), n, 1.0, ga.data(), k);
    }
    if (b.requires_grad()) {
      Tensor& gb = b.node()->ensure_grad();
      gemm(true, false, k, n, m, 1.0, a.val().data(), k, nd.grad.data(), n, 1.0, gb.data(), n);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  if (wv.ndim() != 2) throw std::invalid_argument("linear: weight must be 2-D");
  int in = static_cast<int>(wv.dim(0)), out_d = static_cast<int>(wv.dim(1));
  if (xv.dim(xv.ndim() - 1) != in)
    throw std::invalid_argument("linear: input dim " + xv.shape_str() + " vs weight " + wv.shape_str());
  int64_t rows = xv.size() / in;
  std::vector<int64_t> out_shape = xv.shape();
  out_shape.back() = out_d;
  Tensor out(out_shape);
  gemm(false, false, static_cast<int>(rows), out_d, in, 1.0, xv.data(), in, wv.data(), out_d, 0.0,
       out.data(), out_d);
  if (b.defined()) {
    if (b.val().size() != out_d) throw std::invalid_argument("linear: bias dim mismatch");
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < out_d; ++j) out[r * out_d + j] += b.val()[j];
  }
  return make_op(std::move(out), {x, w, b}, [x, w, b, rows, in, out_d](Node& n) {
    if (x.requires_grad()) {
      Tensor& gx = x.node()->ensure_grad();
      gemm(false, true, static_cast<int>(rows), in, out_d, 1.0, n.grad.data(), out_d,
           w.val().data(), out_d, 1.0, gx.data(), in);
    }
    if (w.requires_grad()) {
      Tensor& gw = w.node()->ensure_grad();
      gemm(true, false, in, out_d, static_cast<int>(rows), 1.0, x.val().data(), in,
           n.grad.data(), out_d, 1.0, gw.data(), out_d);
    }
    if (b.defined() && b.requires_grad()) {
      Tensor& gb = b.node()->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < out_d; ++j) gb[j] += n.grad[r * out_d + j];
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
    throw std::invalid_argument("bmm: shape mismatch " + av.shape_str() + " x " + bv.shape_str());
  int nb = static_cast<int>(av.dim(0));
  int m = static_cast<int>(av.dim(1)), k = static_cast<int>(av.dim(2)), n = static_cast<int>(bv.dim(2));
  Tensor out({nb, m, n});
  for (int i = 0; i < nb; ++i)
    gemm(false, false, m, n, k, 1.0, av.data() + static_cast<int64_t>(i) * m * k, k,
         bv.data() + static_cast<int64_t>(i) * k * n, n, 0.0,
         out.data() + static_cast<int64_t>(i) * m * n, n);
  return make_op(std::move(out), {a, b}, [a, b, nb, m, k, n](Node& nd) {
    for (int i = 0; i < nb; ++i) {
      const double* g = nd.grad.data() + static_cast<int64_t>(i) * m * n;
      if (a.requires_grad()) {
        Tensor& ga = a.node()->ensure_grad();
        gemm(false, true, m, k, n, 1.0, g, n, b.val().data() + static_cast<int64_t>(i) * k * n, n,
             1.0, ga.data() + static_cast<int64_t>(i) * m * k, k);
      }
      if (b.requires_grad()) {
        Tensor& gb = b.node()->ensure_grad();
        gemm(true, false, k, n, m, 1.0, a.val().data() + static_cast<int64_t>(i) * m * k, k, g, n,
             1.0, gb.data() + static_cast<int64_t>(i) * k * n, n);
      }
    }
  });
}

namespace {

// col is [C*K, B*Lout]; x is [B,C,L].
void im2col(const Tensor& x, int kernel, int stride, int pad, int l_out, Tensor& col) {
  int bsz = static_cast<int>(x.dim(0)), ch = static_cast<int>(x.dim(1)), l = static_cast<int>(x.dim(2));
  int64_t ncol = static_cast<int64_t>(bsz) * l_out;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < bsz; ++b) {
    for (int c = 0; c < ch; ++c) {
      const double* xp = x.data() + (static_cast<int64_t>(b) * ch + c) * l;
      for (int kk = 0; kk < kernel; ++kk) {
        double* cp = col.data() + (static_cast<int64_t>(c) * kernel + kk) * ncol +
                     static_cast<int64_t>(b) * l_out;
        for (int lo = 0; lo < l_out; ++lo) {
          int li = lo * stride + kk - pad;
          cp[lo] = (li >= 0 && li < l) ? xp[li] : 0.0;
        }
      }
    }
  }
}

}  // namespace

Var conv1d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  if (xv.ndim() != 3 || wv.ndim() != 3 || xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("conv1d: shape mismatch " + xv.shape_str() + " with " + wv.shape_str());
  int bsz = static_cast<int>(xv.dim(0)), ci = static_cast<int>(xv.dim(1)), l = static_cast<int>(xv.dim(2));
  int co = static_cast<int>(wv.dim(0)), kernel = static_cast<int>(wv.dim(2));
  int l_out = (l + 2 * pad - kernel) / stride + 1;
  if (l_out < 1) throw std::invalid_argument("conv1d: output length < 1");

  int64_t ncol = static_cast<int64_t>(bsz) * l_out;
  Tensor col({static_cast<int64_t>(ci) * kernel, ncol});
  im2col(xv, kernel, stride, pad, l_out, col);
  Tensor y2({co, ncol});
  gemm(false, false, co, static_cast<int>(ncol), ci * kernel, 1.0, wv.data(), ci * kernel,
       col.data(), static_cast<int>(ncol), 0.0, y2.data(), static_cast<int>(ncol));

  Tensor out({bsz, co, l_out});
#pragma omp parallel for schedule(static)
  for (int bb = 0; bb < bsz; ++bb)
    for (int c = 0; c < co; ++c) {
      const double* src = y2.data() + static_cast<int64_t>(c) * ncol + static_cast<int64_t>(bb) * l_out;
      double bias = b.defined() ? b.val()[c] : 0.0;
      double* dst = out.data() + (static_cast<int64_t>(bb) * co + c) * l_out;
      for (int lo = 0; lo < l_out; ++lo) dst[lo] = src[lo] + bias;
    }

  return make_op(std::move(out), {x, w, b}, [x, w, b, bsz, ci, l, co, kernel, stride, pad,
                                             l_out](Node& n) {
    int64_t ncol = static_cast<int64_t>(bsz) * l_out;
    // regroup incoming grad as [Co, B*Lout]
    Tensor g2({co, ncol});
#pragma omp parallel for schedule(static)
    for (int bb = 0; bb < bsz; ++bb)
      for (int c = 0; c < co; ++c) {
        const double* src = n.grad.data() + (static_cast<int64_t>(bb) * co + c) * l_out;
        double* dst = g2.data() + static_cast<int64_t>(c) * ncol + static_cast<int64_t>(bb) * l_out;
        for (int lo = 0; lo < l_out; ++lo) dst[lo] = src[lo];
      }
    if (b.defined() && b.requires_grad()) {
      Tensor& gb = b.node()->ensure_grad();
      for (int c = 0; c < co; ++c) {
        double acc = 0.0;
        const double* row = g2.data() + static_cast<int64_t>(c) * ncol;
        for (int64_t i = 0; i < ncol; ++i) acc += row[i];
        gb[c] += acc;
      }
    }
    if (w.requires_grad()) {
      Tensor col({static_cast<int64_t>(ci) * kernel, ncol});
      im2col(x.val(), kernel, stride, pad, l_out, col);
      Tensor& gw = w.node()->ensure_grad();
      gemm(false, true, co, ci * kernel, static_cast<int>(ncol), 1.0, g2.data(),
           static_cast<int>(ncol), col.data(), static_cast<int>(ncol), 1.0, gw.data(), ci * kernel);
    }
    if (x.requires_grad()) {
      Tensor gcol({static_cast<int64_t>(ci) * kernel, ncol});
      gemm(true, false, ci * kernel, static_cast<int>(ncol), co, 1.0, w.val().data(), ci * kernel,
           g2.data(), static_cast<int>(ncol), 0.0, gcol.data(), static_cast<int>(ncol));
      Tensor& gx = x.node()->ensure_grad();
#pragma omp parallel for schedule(static)
      for (int bb = 0; bb < bsz; ++bb) {
        for (int c = 0; c < ci; ++c) {
          double* gxp = gx.data() + (static_cast<int64_t>(bb) * ci + c) * l;
          for (int kk = 0; kk < kernel; ++kk) {
            const double* gcp = gcol.data() + (static_cast<int64_t>(c) * kernel + kk) * ncol +
                                static_cast<int64_t>(bb) * l_out;
            for (int lo = 0; lo < l_out; ++lo) {
              int li = lo * stride + kk - pad;
              if (li >= 0 && li < l) gxp[li] += gcp[lo];
            }
          }
        }
      }
    }
  });
}

// ---------------- conditioning and token ops ----------------

namespace {

void check_cond_shapes(const Tensor& xv, const Tensor& sv, int64_t& bsz, int64_t& t, int64_t& d) {
  if (sv.ndim() != 2) throw std::invalid_argument("modulate: conditioning must be [B,D]");
  bsz = sv.dim(0);
  d = sv.dim(1);
  if (xv.ndim() == 2) {
    t = 1;
    if (xv.dim(0) != bsz || xv.dim(1) != d) throw std::invalid_argument("modulate: shape mismatch");
  } else if (xv.ndim() == 3) {
    t = xv.dim(1);
    if (xv.dim(0) != bsz || xv.dim(2) != d) throw std::invalid_argument("modulate: shape mismatch");
  } else {
    throw std::invalid_argument("modulate: input must be 2-D or 3-D");
  }
}

}  // namespace

Var modulate(const Var& x, const Var& s, const Var& sh) {
  int64_t bsz, t, d;
  check_cond_shapes(x.val(), s.val(), bsz, t, d);
  const Tensor& xv = x.val();
  Tensor out(xv.shape());
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t tt = 0; tt < t; ++tt)
      for (int64_t j = 0; j < d; ++j) {
        int64_t i = (b * t + tt) * d + j;
        out[i] = xv[i] * s.val()[b * d + j] + sh.val()[b * d + j];
      }
  return make_op(std::move(out), {x, s, sh}, [x, s, sh, bsz, t, d](Node& n) {
    const Tensor& g = n.grad;
    if (x.requires_grad()) {
      Tensor& gx = x.node()->ensure_grad();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t tt = 0; tt < t; ++tt)
          for (int64_t j = 0; j < d; ++j) {
            int64_t i = (b * t + tt) * d + j;
            gx[i] += g[i] * s.val()[b * d + j];
          }
    }
    if (s.requires_grad()) {
      Tensor& gs = s.node()->ensure_grad();
      const Tensor& xv = x.val();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t tt = 0; tt < t; ++tt)
          for (int64_t j = 0; j < d; ++j) {
            int64_t i = (b * t + tt) * d + j;
            gs[b * d + j] += g[i] * xv[i];
          }
    }
    if (sh.requires_grad()) {
      Tensor& gsh = sh.node()->ensure_grad();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t tt = 0; tt < t; ++tt)
          for (int64_t j = 0; j < d; ++j) gsh[b * d + j] += g[(b * t + tt) * d + j];
    }
  });
}

Var gate(const Var& x, const Var& g) {
  int64_t bsz, t, d;
  check_cond_shapes(x.val(), g.val(), bsz, t, d);
  const Tensor& xv = x.val();
  Tensor out(xv.shape());
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t tt = 0; tt < t; ++tt)
      for (int64_t j = 0; j < d; ++j) {
        int64_t i = (b * t + tt) * d + j;
        out[i] = xv[i] * g.val()[b * d + j];
      }
  return make_op(std::move(out), {x, g}, [x, g, bsz, t, d](Node& n) {
    const Tensor& gr = n.grad;
    if (x.requires_grad()) {
      Tensor& gx = x.node()->ensure_grad();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t tt = 0; tt < t; ++tt)
          for (int64_t j = 0; j < d; ++j) {
            int64_t i = (b * t + tt) * d + j;
            gx[i] += gr[i] * g.val()[b * d + j];
          }
    }
    if (g.requires_grad()) {
      Tensor& gg = g.node()->ensure_grad();
      const Tensor& xv = x.val();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t tt = 0; tt < t; ++tt)
          for (int64_t j = 0; j < d; ++j) {
            int64_t i = (b * t + tt) * d + j;
            gg[b * d + j] += gr[i] * xv[i];
          }
    }
  });
}

Var row_gather(const Var& x, const std::vector<int>& idx) {
  const Tensor& xv = x.val();
  if (xv.ndim() != 2) throw std::invalid_argument("row_gather: expected 2-D");
  int64_t d = xv.dim(1);
  Tensor out({static_cast<int64_t>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int64_t j = 0; j < d; ++j) out[static_cast<int64_t>(r) * d + j] = xv[static_cast<int64_t>(idx[r]) * d + j];
  return make_op(std::move(out), {x}, [x, idx, d](Node& n) {
    Tensor& gx = x.node()->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t j = 0; j < d; ++j)
        gx[static_cast<int64_t>(idx[r]) * d + j] += n.grad[static_cast<int64_t>(r) * d + j];
  });
}

Var select_rows_or_vector(const Var& a, const Var& vec, const std::vector<uint8_t>& mask) {
  const Tensor& av = a.val();
  if (av.ndim() != 2) throw std::invalid_argument("select_rows_or_vector: expected 2-D");
  int64_t bsz = av.dim(0), d = av.dim(1);
  if (static_cast<int64_t>(mask.size()) != bsz || vec.val().size() != d)
    throw std::invalid_argument("select_rows_or_vector: size mismatch");
  Tensor out(av.shape());
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t j = 0; j < d; ++j)
      out[b * d + j] = mask[static_cast<size_t>(b)] ? vec.val()[j] : av[b * d + j];
  return make_op(std::move(out), {a, vec}, [a, vec, mask, bsz, d](Node& n) {
    if (a.requires_grad()) {
      Tensor& ga = a.node()->ensure_grad();
      for (int64_t b = 0; b < bsz; ++b)
        if (!mask[static_cast<size_t>(b)])
          for (int64_t j = 0; j < d; ++j) ga[b * d + j] += n.grad[b * d + j];
    }
    if (vec.requires_grad()) {
      Tensor& gv = vec.node()->ensure_grad();
      for (int64_t b = 0; b < bsz; ++b)
        if (mask[static_cast<size_t>(b)])
          for (int64_t j = 0; j < d; ++j) gv[j] += n.grad[b * d + j];
    }
  });
}

Var osc_tokens(const Var& x, int k) {
  const Tensor& xv = x.val();
  if (xv.ndim() != 2 || xv.dim(1) != 3 * k)
    throw std::invalid_argument("osc_tokens: expected [B,3k]");
  int64_t bsz = xv.dim(0);
  Tensor out({bsz, k, 3});
  for (int64_t b = 0; b < bsz; ++b)
    for (int i = 0; i < k; ++i)
      for (int f = 0; f < 3; ++f)
        out[(b * k + i) * 3 + f] = xv[b * 3 * k + f * k + i];
  return make_op(std::move(out), {x}, [x, k, bsz](Node& n) {
    Tensor& gx = x.node()->ensure_grad();
    for (int64_t b = 0; b < bsz; ++b)
      for (int i = 0; i < k; ++i)
        for (int f = 0; f < 3; ++f)
          gx[b * 3 * k + f * k + i] += n.grad[(b * k + i) * 3 + f];
  });
}

Var osc_untokens(const Var& tokens, int k) {
  const Tensor& tv = tokens.val();
  if (tv.ndim() != 3 || tv.dim(1) != k || tv.dim(2) != 3)
    throw std::invalid_argument("osc_untokens: expected [B,k,3]");
  int64_t bsz = tv.dim(0);
  Tensor out({bsz, static_cast<int64_t>(3 * k)});
  for (int64_t b = 0; b < bsz; ++b)
    for (int i = 0; i < k; ++i)
      for (int f = 0; f < 3; ++f)
        out[b * 3 * k + f * k + i] = tv[(b * k + i) * 3 + f];
  return make_op(std::move(out), {tokens}, [tokens, k, bsz](Node& n) {
    Tensor& gt = tokens.node()->ensure_grad();
    for (int64_t b = 0; b < bsz; ++b)
      for (int i = 0; i < k; ++i)
        for (int f = 0; f < 3; ++f)
          gt[(b * k + i) * 3 + f] += n.grad[b * 3 * k + f * k + i];
  });
}

Var row_scale_embed(const Var& z, const Var& x) {
  const Tensor& zv = z.val();
  const Tensor& xv = x.val();
  if (zv.ndim() != 2 || xv.ndim() != 2 || xv.dim(1) != zv.dim(0))
    throw std::invalid_argument("row_scale_embed: shapes " + zv.shape_str() + ", " + xv.shape_str());
  int64_t bsz = xv.dim(0), kk = zv.dim(0), d = zv.dim(1);
  Tensor out({bsz, kk, d});
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t i = 0; i < kk; ++i) {
      double xi = xv[b * kk + i];
      for (int64_t j = 0; j < d; ++j) out[(b * kk + i) * d + j] = xi * zv[i * d + j];
    }
  return make_op(std::move(out), {z, x}, [z, x, bsz, kk, d](Node& n) {
    if (z.requires_grad()) {
      Tensor& gz = z.node()->ensure_grad();
      const Tensor& xv = x.val();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t i = 0; i < kk; ++i) {
          double xi = xv[b * kk + i];
          for (int64_t j = 0; j < d; ++j) gz[i * d + j] += xi * n.grad[(b * kk + i) * d + j];
        }
    }
    if (x.requires_grad()) {
      Tensor& gx = x.node()->ensure_grad();
      const Tensor& zv = z.val();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t i = 0; i < kk; ++i) {
          double acc = 0.0;
          for (int64_t j = 0; j < d; ++j) acc += zv[i * d + j] * n.grad[(b * kk + i) * d + j];
          gx[b * kk + i] += acc;
        }
    }
  });
}

Var tokens_project(const Var& a, const Var& h) {
  const Tensor& av = a.val();
  const Tensor& hv = h.val();
  if (av.ndim() != 2 || hv.ndim() != 3 || av.dim(1) != hv.dim(1))
    throw std::invalid_argument("tokens_project: shapes " + av.shape_str() + ", " + hv.shape_str());
  int n_tok = static_cast<int>(av.dim(0)), kk = static_cast<int>(av.dim(1));
  int bsz = static_cast<int>(hv.dim(0)), d = static_cast<int>(hv.dim(2));
  Tensor out({bsz, n_tok, d});
  for (int b = 0; b < bsz; ++b)
    gemm(false, false, n_tok, d, kk, 1.0, av.data(), kk,
         hv.data() + static_cast<int64_t>(b) * kk * d, d, 0.0,
         out.data() + static_cast<int64_t>(b) * n_tok * d, d);
  return make_op(std::move(out), {a, h}, [a, h, n_tok, kk, bsz, d](Node& n) {
    for (int b = 0; b < bsz; ++b) {
      const double* g = n.grad.data() + static_cast<int64_t>(b) * n_tok * d;
      if (a.requires_grad()) {
        Tensor& ga = a.node()->ensure_grad();
        gemm(false, true, n_tok, kk, d, 1.0, g, d, h.val().data() + static_cast<int64_t>(b) * kk * d,
             d, 1.0, ga.data(), kk);
      }
      if (h.requires_grad()) {
        Tensor& gh = h.node()->ensure_grad();
        gemm(true, false, kk, d, n_tok, 1.0, a.val().data(), kk, g, d, 1.0,
             gh.data() + static_cast<int64_t>(b) * kk * d, d);
      }
    }
  });
}

Var p2t_inverse_op(const Var& zp, const Var& a, const Var& x) {
  const Tensor& zv = zp.val();
  const Tensor& av = a.val();
  const Tensor& xv = x.val();
  if (zv.ndim() != 2 || av.ndim() != 2 || xv.ndim() != 3)
    throw std::invalid_argument("p2t_inverse: bad ranks");
  int kk = static_cast<int>(zv.dim(0)), d = static_cast<int>(zv.dim(1));
  int n_tok = static_cast<int>(av.dim(0));
  int bsz = static_cast<int>(xv.dim(0));
  if (av.dim(1) != kk || xv.dim(1) != n_tok || xv.dim(2) != d)
    throw std::invalid_argument("p2t_inverse: shape mismatch");
  // G[b] = A^T X[b] : [k,d]
  Tensor gmat({bsz, kk, d});
  for (int b = 0; b < bsz; ++b)
    gemm(true, false, kk, d, n_tok, 1.0, av.data(), kk,
         xv.data() + static_cast<int64_t>(b) * n_tok * d, d, 0.0,
         gmat.data() + static_cast<int64_t>(b) * kk * d, d);
  Tensor out({bsz, kk});
  for (int b = 0; b < bsz; ++b)
    for (int i = 0; i < kk; ++i) {
      double acc = 0.0;
      const double* gr = gmat.data() + (static_cast<int64_t>(b) * kk + i) * d;
      const double* zr = zv.data() + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) acc += gr[j] * zr[j];
      out[static_cast<int64_t>(b) * kk + i] = acc;
    }
  return make_op(std::move(out), {zp, a, x}, [zp, a, x, gmat, kk, d, n_tok, bsz](Node& n) {
    // dG[b,i,:] = grad[b,i] * Zp[i,:]
    Tensor dg({bsz, kk, d});
    const Tensor& zv = zp.val();
    for (int b = 0; b < bsz; ++b)
      for (int i = 0; i < kk; ++i) {
        double gi = n.grad[static_cast<int64_t>(b) * kk + i];
        const double* zr = zv.data() + static_cast<int64_t>(i) * d;
        double* dgr = dg.data() + (static_cast<int64_t>(b) * kk + i) * d;
        for (int j = 0; j < d; ++j) dgr[j] = gi * zr[j];
      }
    if (zp.requires_grad()) {
      Tensor& gz = zp.node()->ensure_grad();
      for (int b = 0; b < bsz; ++b)
        for (int i = 0; i < kk; ++i) {
          double gi = n.grad[static_cast<int64_t>(b) * kk + i];
          const double* gr = gmat.data() + (static_cast<int64_t>(b) * kk + i) * d;
          double* gzr = gz.data() + static_cast<int64_t>(i) * d;
          for (int j = 0; j < d; ++j) gzr[j] += gi * gr[j];
        }
    }
    if (x.requires_grad()) {
      Tensor& gx = x.node()->ensure_grad();
      for (int b = 0; b < bsz; ++b)
        gemm(false, false, n_tok, d, kk, 1.0, a.val().data(), kk,
             dg.data() + static_cast<int64_t>(b) * kk * d, d, 1.0,
             gx.data() + static_cast<int64_t>(b) * n_tok * d, d);
    }
    if (a.requires_grad()) {
      Tensor& ga = a.node()->ensure_grad();
      for (int b = 0; b < bsz; ++b)
        gemm(false, true, n_tok, kk, d, 1.0, x.val().data() + static_cast<int64_t>(b) * n_tok * d,
             d, dg.data() + static_cast<int64_t>(b) * kk * d, d, 1.0, ga.data(), kk);
    }
  });
}

// ---------------- losses ----------------

Var mse_loss(const Var& pred, const Tensor& target) {
  if (!pred.val().same_shape(target))
    throw std::invalid_argument("mse_loss: shape mismatch");
  Var diff = sub(pred, Var::constant(target));
  return mean_all(mul(diff, diff));
}

Var chamfer_loss(const Var& pred, const Tensor& target, int k) {
  const Tensor& pv = pred.val();
  if (pv.ndim() != 2 || pv.dim(1) != 3 * k || !pv.same_shape(target))
    throw std::invalid_argument("chamfer_loss: expected matching [B,3k]");
  int64_t bsz = pv.dim(0);

  auto triple_d = [k](const double* xa, int ia, const double* xb, int ib) {
    double acc = 0.0;
    for (int f = 0; f < 3; ++f) {
      double d = xa[f * k + ia] - xb[f * k + ib];
      acc += d * d;
    }
    return acc / 3.0;
  };

  // Record argmins so the backward pass only touches selected pairs.
  std::vector<int> min_over_pred(static_cast<size_t>(bsz * k));    // for each target triple
  std::vector<int> min_over_target(static_cast<size_t>(bsz * k));  // for each pred triple
  double total = 0.0;
  for (int64_t b = 0; b < bsz; ++b) {
    const double* p = pv.data() + b * 3 * k;
    const double* t = target.data() + b * 3 * k;
    for (int j = 0; j < k; ++j) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int i = 0; i < k; ++i) {
        double d = triple_d(p, i, t, j);
        if (d < best) {
          best = d;
          arg = i;
        }
      }
      min_over_pred[static_cast<size_t>(b * k + j)] = arg;
      total += best;
    }
    for (int i = 0; i < k; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int j = 0; j < k; ++j) {
        double d = triple_d(p, i, t, j);
        if (d < best) {
          best = d;
          arg = j;
        }
      }
      min_over_target[static_cast<size_t>(b * k + i)] = arg;
      total += best;
    }
  }
  total /= static_cast<double>(bsz);

  return make_op(Tensor::scalar(total), {pred},
                 [pred, target, k, bsz, min_over_pred, min_over_target](Node& n) {
                   double g = n.grad[0] / static_cast<double>(bsz);
                   Tensor& gp = pred.node()->ensure_grad();
                   const Tensor& pv = pred.val();
                   auto add_pair = [&](int64_t b, int i, int j) {
                     const double* p = pv.data() + b * 3 * k;
                     const double* t = target.data() + b * 3 * k;
                     for (int f = 0; f < 3; ++f)
                       gp[b * 3 * k + f * k + i] += g * 2.0 / 3.0 * (p[f * k + i] - t[f * k + j]);
                   };
                   for (int64_t b = 0; b < bsz; ++b) {
                     for (int j = 0; j < k; ++j) add_pair(b, min_over_pred[static_cast<size_t>(b * k + j)], j);
                     for (int i = 0; i < k; ++i) add_pair(b, i, min_over_target[static_cast<size_t>(b * k + i)]);
                   }
                 });
}

Var l1_sum(const Var& a) {
  const Tensor& av = a.val();
  double acc = 0.0;
  for (int64_t i = 0; i < av.size(); ++i) acc += std::abs(av[i]);
  return make_op(Tensor::scalar(acc), {a}, [a](Node& n) {
    Tensor& ga = a.node()->ensure_grad();
    const Tensor& av = a.val();
    double g = n.grad[0];
    for (int64_t i = 0; i < av.size(); ++i) {
      if (av[i] > 0.0)
        ga[i] += g;
      else if (av[i] < 0.0)
        ga[i] -= g;
    }
  });
}

}  // namespace permflow::nn
