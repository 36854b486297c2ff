#pragma once

// Differentiable primitives over Tape-recorded arrays. Every op computes its
// forward value eagerly and records a closure that maps the output adjoint to
// input adjoints. Reductions always run in a fixed index order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedbiot/compute/array.hpp"
#include "fedbiot/compute/tape.hpp"

namespace fedbiot {

using Mask = std::vector<std::uint8_t>;

namespace kernel {

// c += a * b for a [m x k], b [k x n].
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c += a * b^T for a [m x k], b [n x k]. b is transposed into a scratch
// buffer so the inner loop runs over contiguous memory.
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  thread_local std::vector<T> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

// c += a^T * b for a [k x m], b [k x n].
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t k, std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T api = ap[i];
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

template <class T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

}  // namespace kernel

namespace detail {

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
  return *a.tape;
}

inline void check_mask(std::span<const std::uint8_t> mask, std::size_t rows, const char* op) {
  if (mask.size() != rows) {
    throw DimensionError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                         " does not match " + std::to_string(rows) + " positions");
  }
}

inline std::size_t mask_count(std::span<const std::uint8_t> mask) {
  std::size_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(av.shape()) + " by " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Array<T> out({m, n});
  kernel::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.record(std::move(out), rg, [ia = a.id, ib = b.id, m, k, n](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    if (t.requires_grad(ia)) kernel::gemm_nt(g.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k);
    if (t.requires_grad(ib)) kernel::gemm_tn(t.value(ia).data(), g.data(), t.grad(ib).data(), m, k, n);
  });
}

// a * b^T without materialising the transpose.
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: cannot multiply " + shape_string(av.shape()) + " by transpose of " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Array<T> out({m, n});
  kernel::gemm_nt(av.data(), bv.data(), out.data(), m, k, n);
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.record(std::move(out), rg, [ia = a.id, ib = b.id, m, k, n](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    // out = a b^T: da = g b, db = g^T a
    if (t.requires_grad(ia)) kernel::gemm_nn(g.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k);
    if (t.requires_grad(ib)) kernel::gemm_tn(g.data(), t.value(ia).data(), t.grad(ib).data(), m, n, k);
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  const Array<T>& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_string(av.shape()));
  const std::size_t r = av.rows(), c = av.cols();
  Array<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = av(i, j);
  return a.tape->record(std::move(out), a.requires_grad(), [ia = a.id, r, c](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    Array<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += g(j, i);
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Array<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.record(std::move(out), rg, [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Array<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.record(std::move(out), rg, [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) {
      Array<T>& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Array<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.record(std::move(out), rg, [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Array<T>& ga = t.grad(ia);
      const Array<T>& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Array<T>& gb = t.grad(ib);
      const Array<T>& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Array<T> out = a.value();
  for (auto& x : out.values()) x *= s;
  return a.tape->record(std::move(out), a.requires_grad(), [ia = a.id, s](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    Array<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

// Adds a length-d bias to every row of x [T x d]. The only broadcast supported.
template <class T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  Tape<T>& tape = detail::same_tape(x, bias);
  const Array<T>& xv = x.value();
  const Array<T>& bv = bias.value();
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match trailing axis of " +
                         shape_string(xv.shape()));
  }
  Array<T> out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  const bool rg = x.requires_grad() || bias.requires_grad();
  return tape.record(std::move(out), rg, [ix = x.id, ib = bias.id](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) {
      Array<T>& gb = t.grad(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

template <class T>
Var<T> silu(Var<T> x) {
  Array<T> out = x.value();
  for (auto& v : out.values()) v = v * kernel::sigmoid(v);
  return x.tape->record(std::move(out), x.requires_grad(), [ix = x.id](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    const Array<T>& xv = t.value(ix);
    Array<T>& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = kernel::sigmoid(xv[i]);
      gx[i] += g[i] * s * (T{1} + xv[i] * (T{1} - s));
    }
  });
}

// Row-wise RMS normalisation with a learned per-feature gain.
template <class T>
Var<T> rms_norm(Var<T> x, Var<T> gain, T eps = T(1e-5)) {
  Tape<T>& tape = detail::same_tape(x, gain);
  const Array<T>& xv = x.value();
  const Array<T>& gv = gain.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (gv.size() != d) {
    throw DimensionError("rms_norm: gain " + shape_string(gv.shape()) + " does not match " +
                         shape_string(xv.shape()));
  }
  Array<T> out(xv.shape());
  std::vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss{0};
    for (std::size_t c = 0; c < d; ++c) ss += xv(r, c) * xv(r, c);
    inv[r] = T{1} / std::sqrt(ss / static_cast<T>(d) + eps);
    for (std::size_t c = 0; c < d; ++c) out(r, c) = xv(r, c) * inv[r] * gv[c];
  }
  const bool rg = x.requires_grad() || gain.requires_grad();
  return tape.record(std::move(out), rg,
                     [ix = x.id, ig = gain.id, inv = std::move(inv), rows, d](Tape<T>& t, std::size_t self) {
                       const Array<T>& g = t.grad(self);
                       const Array<T>& xv = t.value(ix);
                       const Array<T>& gv = t.value(ig);
                       const bool gx_on = t.requires_grad(ix);
                       const bool gg_on = t.requires_grad(ig);
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (gg_on) {
                           Array<T>& gg = t.grad(ig);
                           for (std::size_t c = 0; c < d; ++c) gg[c] += g(r, c) * xv(r, c) * inv[r];
                         }
                         if (gx_on) {
                           Array<T>& gx = t.grad(ix);
                           T dot{0};
                           for (std::size_t c = 0; c < d; ++c) dot += g(r, c) * gv[c] * xv(r, c) * inv[r];
                           dot /= static_cast<T>(d);
                           for (std::size_t c = 0; c < d; ++c) {
                             const T n = xv(r, c) * inv[r];
                             gx(r, c) += inv[r] * (g(r, c) * gv[c] - n * dot);
                           }
                         }
                       }
                     });
}

// Rotary position embedding applied independently within each head; row index
// is the token position.
template <class T>
Var<T> rope(Var<T> x, std::size_t n_heads, T base = T(10000)) {
  const Array<T>& xv = x.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (n_heads == 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0) {
    throw DimensionError("rope: width " + std::to_string(d) + " is not divisible into " +
                         std::to_string(n_heads) + " even-sized heads");
  }
  const std::size_t dh = d / n_heads;
  std::vector<T> cos_t(rows * dh / 2), sin_t(rows * dh / 2);
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t i = 0; i < dh / 2; ++i) {
      const T freq = std::pow(base, -static_cast<T>(2 * i) / static_cast<T>(dh));
      const T ang = static_cast<T>(p) * freq;
      cos_t[p * dh / 2 + i] = std::cos(ang);
      sin_t[p * dh / 2 + i] = std::sin(ang);
    }
  }
  Array<T> out(xv.shape());
  for (std::size_t p = 0; p < rows; ++p)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t i = 0; i < dh / 2; ++i) {
        const std::size_t c0 = h * dh + 2 * i;
        const T cs = cos_t[p * dh / 2 + i], sn = sin_t[p * dh / 2 + i];
        out(p, c0) = xv(p, c0) * cs - xv(p, c0 + 1) * sn;
        out(p, c0 + 1) = xv(p, c0) * sn + xv(p, c0 + 1) * cs;
      }
  return x.tape->record(
      std::move(out), x.requires_grad(),
      [ix = x.id, cos_t = std::move(cos_t), sin_t = std::move(sin_t), rows, n_heads, dh](Tape<T>& t,
                                                                                         std::size_t self) {
        const Array<T>& g = t.grad(self);
        Array<T>& gx = t.grad(ix);
        for (std::size_t p = 0; p < rows; ++p)
          for (std::size_t h = 0; h < n_heads; ++h)
            for (std::size_t i = 0; i < dh / 2; ++i) {
              const std::size_t c0 = h * dh + 2 * i;
              const T cs = cos_t[p * dh / 2 + i], sn = sin_t[p * dh / 2 + i];
              gx(p, c0) += g(p, c0) * cs + g(p, c0 + 1) * sn;
              gx(p, c0 + 1) += -g(p, c0) * sn + g(p, c0 + 1) * cs;
            }
      });
}

template <class T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t width) {
  const Array<T>& xv = x.value();
  if (start + width > xv.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                         ") outside " + shape_string(xv.shape()));
  }
  const std::size_t rows = xv.rows();
  Array<T> out({rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = xv(r, start + c);
  return x.tape->record(std::move(out), x.requires_grad(),
                        [ix = x.id, start, width, rows](Tape<T>& t, std::size_t self) {
                          const Array<T>& g = t.grad(self);
                          Array<T>& gx = t.grad(ix);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < width; ++c) gx(r, start + c) += g(r, c);
                        });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape<T>& tape = *parts.front().tape;
  const std::size_t rows = parts.front().value().rows();
  std::size_t width = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    if (p.tape != &tape) throw Error("concat_cols: operands recorded on different tapes");
    if (p.value().rows() != rows) {
      throw DimensionError("concat_cols: row count mismatch " + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()));
    }
    width += p.value().cols();
    rg = rg || p.requires_grad();
    ids.push_back(p.id);
  }
  Array<T> out({rows, width});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Array<T>& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    off += pv.cols();
  }
  return tape.record(std::move(out), rg, [ids = std::move(ids), rows](Tape<T>& t, std::size_t self) {
    const Array<T>& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t w = t.value(id).cols();
      if (t.requires_grad(id)) {
        Array<T>& gp = t.grad(id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, off + c);
      }
      off += w;
    }
  });
}

// Row-wise softmax over the causal prefix: row i attends to columns 0..i and
// columns beyond i are exactly zero.
template <class T>
Var<T> causal_softmax(Var<T> scores) {
  const Array<T>& sv = scores.value();
  const std::size_t rows = sv.rows(), cols = sv.cols();
  if (rows > cols) {
    throw DimensionError("causal_softmax: expected at least as many columns as rows, got " +
                         shape_string(sv.shape()));
  }
  Array<T> out(sv.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    T mx = sv(i, 0);
    for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, sv(i, j));
    T z{0};
    for (std::size_t j = 0; j <= i; ++j) {
      out(i, j) = std::exp(sv(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j <= i; ++j) out(i, j) /= z;
  }
  return scores.tape->record(std::move(out), scores.requires_grad(),
                             [is = scores.id, rows](Tape<T>& t, std::size_t self) {
                               const Array<T>& g = t.grad(self);
                               const Array<T>& y = t.value(self);
                               Array<T>& gs = t.grad(is);
                               for (std::size_t i = 0; i < rows; ++i) {
                                 T dot{0};
                                 for (std::size_t j = 0; j <= i; ++j) dot += y(i, j) * g(i, j);
                                 for (std::size_t j = 0; j <= i; ++j) gs(i, j) += y(i, j) * (g(i, j) - dot);
                               }
                             });
}

// Causal multi-head self-attention over already-projected q, k, v [T x d].
template <class T>
Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t n_heads) {
  const std::size_t d = q.value().cols();
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("causal_attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) +
                         ", v " + shape_string(v.shape()));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = d / n_heads;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
  std::vector<Var<T>> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Var<T> qh = slice_cols(q, h * dh, dh);
    Var<T> kh = slice_cols(k, h * dh, dh);
    Var<T> vh = slice_cols(v, h * dh, dh);
    Var<T> probs = causal_softmax(scale(matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(matmul(probs, vh));
  }
  return n_heads == 1 ? heads.front() : concat_cols(heads);
}

// Row lookup into an embedding table [V x d].
template <class T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids) {
  const Array<T>& tv = table.value();
  const std::size_t d = tv.cols();
  Array<T> out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw InputError("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.row(static_cast<std::size_t>(ids[r])).data(), d, out.row(r).data());
  }
  return table.tape->record(std::move(out), table.requires_grad(),
                            [it = table.id, ids = std::vector<int>(ids.begin(), ids.end()), d](Tape<T>& t,
                                                                                               std::size_t self) {
                              const Array<T>& g = t.grad(self);
                              Array<T>& gt = t.grad(it);
                              for (std::size_t r = 0; r < ids.size(); ++r)
                                for (std::size_t c = 0; c < d; ++c) gt(static_cast<std::size_t>(ids[r]), c) += g(r, c);
                            });
}

// Mean over masked positions of -log softmax(logits)[target].
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const Array<T>& lv = logits.value();
  const std::size_t rows = lv.rows(), vocab = lv.cols();
  if (targets.size() != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(lv.shape()));
  }
  detail::check_mask(mask, rows, "softmax_cross_entropy");
  const std::size_t count = detail::mask_count(mask);
  if (count == 0) throw EmptySupervisionError("softmax_cross_entropy: mask selects no positions");
  Array<T> probs({rows, vocab});
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw InputError("softmax_cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    T mx = lv(r, 0);
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, lv(r, c));
    T z{0};
    for (std::size_t c = 0; c < vocab; ++c) {
      probs(r, c) = std::exp(lv(r, c) - mx);
      z += probs(r, c);
    }
    for (std::size_t c = 0; c < vocab; ++c) probs(r, c) /= z;
    total += mx + std::log(z) - lv(r, static_cast<std::size_t>(targets[r]));
  }
  const T inv = T{1} / static_cast<T>(count);
  return logits.tape->record(
      Array<T>::scalar(total * inv), logits.requires_grad(),
      [il = logits.id, probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()),
       mk = Mask(mask.begin(), mask.end()), inv, rows, vocab](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] * inv;
        Array<T>& gl = t.grad(il);
        for (std::size_t r = 0; r < rows; ++r) {
          if (!mk[r]) continue;
          for (std::size_t c = 0; c < vocab; ++c) gl(r, c) += g * probs(r, c);
          gl(r, static_cast<std::size_t>(tg[r])) -= g;
        }
      });
}

// Mean over masked positions of KL(softmax(p) || softmax(q)). The p side is a
// fixed reference: no gradient is propagated into p_logits. An all-zero mask
// yields 0.
template <class T>
Var<T> kl_divergence(Var<T> p_logits, Var<T> q_logits, std::span<const std::uint8_t> mask) {
  Tape<T>& tape = detail::same_tape(p_logits, q_logits);
  const Array<T>& pv = p_logits.value();
  const Array<T>& qv = q_logits.value();
  require_same_shape(pv, qv, "kl_divergence");
  const std::size_t rows = pv.rows(), vocab = pv.cols();
  detail::check_mask(mask, rows, "kl_divergence");
  const std::size_t count = detail::mask_count(mask);
  Array<T> p_prob({rows, vocab}), q_prob({rows, vocab});
  auto log_softmax_row = [vocab](const Array<T>& src, std::size_t r, std::vector<T>& logp) {
    T mx = src(r, 0);
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, src(r, c));
    T z{0};
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(src(r, c) - mx);
    const T lz = mx + std::log(z);
    for (std::size_t c = 0; c < vocab; ++c) logp[c] = src(r, c) - lz;
  };
  std::vector<T> lp(vocab), lq(vocab);
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    log_softmax_row(pv, r, lp);
    log_softmax_row(qv, r, lq);
    T row{0};
    for (std::size_t c = 0; c < vocab; ++c) {
      p_prob(r, c) = std::exp(lp[c]);
      q_prob(r, c) = std::exp(lq[c]);
      row += p_prob(r, c) * (lp[c] - lq[c]);
    }
    total += row;
  }
  const T inv = count ? T{1} / static_cast<T>(count) : T{0};
  return tape.record(Array<T>::scalar(total * inv), q_logits.requires_grad(),
                     [iq = q_logits.id, p_prob = std::move(p_prob), q_prob = std::move(q_prob),
                      mk = Mask(mask.begin(), mask.end()), inv, rows, vocab](Tape<T>& t, std::size_t self) {
                       const T g = t.grad(self)[0] * inv;
                       Array<T>& gq = t.grad(iq);
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (!mk[r]) continue;
                         for (std::size_t c = 0; c < vocab; ++c) gq(r, c) += g * (q_prob(r, c) - p_prob(r, c));
                       }
                     });
}

// Sum of squared differences, optionally restricted to masked rows.
template <class T>
Var<T> l2_distance_sq(Var<T> a, Var<T> b, std::optional<std::span<const std::uint8_t>> mask = std::nullopt) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  require_same_shape(av, bv, "l2_distance_sq");
  const std::size_t rows = av.rows(), cols = av.cols();
  Mask mk(rows, 1);
  if (mask) {
    detail::check_mask(*mask, rows, "l2_distance_sq");
    mk.assign(mask->begin(), mask->end());
  }
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mk[r]) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      const T diff = av(r, c) - bv(r, c);
      total += diff * diff;
    }
  }
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.record(Array<T>::scalar(total), rg,
                     [ia = a.id, ib = b.id, mk = std::move(mk), rows, cols](Tape<T>& t, std::size_t self) {
                       const T g = t.grad(self)[0];
                       const Array<T>& av = t.value(ia);
                       const Array<T>& bv = t.value(ib);
                       T* ga = t.requires_grad(ia) ? t.grad(ia).data() : nullptr;
                       T* gb = t.requires_grad(ib) ? t.grad(ib).data() : nullptr;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (!mk[r]) continue;
                         for (std::size_t c = 0; c < cols; ++c) {
                           const T d = T{2} * g * (av(r, c) - bv(r, c));
                           if (ga) ga[r * cols + c] += d;
                           if (gb) gb[r * cols + c] -= d;
                         }
                       }
                     });
}

}  // namespace fedbiot
