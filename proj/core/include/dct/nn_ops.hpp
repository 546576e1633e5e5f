#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "dct/autograd.hpp"

namespace dct::ag {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

namespace detail {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Unpack conv patches: cols[(c*kh*kw + ki*kw + kj)*ld + off + (ho*Wo+wo)].
// ld is the row stride of the destination matrix, off a column offset, so a
// batch can share one [K x B*S] matrix.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* cols, int64_t ld, int64_t off) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* dst = cols + ((c * kh + ki) * kw + kj) * ld + off;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          int64_t h = ho * stride - pad + ki;
          if (h < 0 || h >= H) {
            for (int64_t wo = 0; wo < Wo; ++wo) dst[ho * Wo + wo] = T{0};
            continue;
          }
          const T* src_row = x + (c * H + h) * W;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            int64_t w = wo * stride - pad + kj;
            dst[ho * Wo + wo] = (w >= 0 && w < W) ? src_row[w] : T{0};
          }
        }
      }
    }
  }
}

// Scatter-add of cols back into the image; adjoint of im2col.
template <typename T>
void col2im(const T* cols, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* img, int64_t ld, int64_t off) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* src = cols + ((c * kh + ki) * kw + kj) * ld + off;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          int64_t h = ho * stride - pad + ki;
          if (h < 0 || h >= H) continue;
          T* dst_row = img + (c * H + h) * W;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            int64_t w = wo * stride - pad + kj;
            if (w >= 0 && w < W) dst_row[w] += src[ho * Wo + wo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor<T> out = a->value;
  out.add_(b->value);
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->needs_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->needs_grad) self.parents[1]->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->needs_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->needs_grad) {
      Tensor<T> g = self.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
      self.parents[1]->accumulate(g);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const Tensor<T>& av = self.parents[0]->value;
    const Tensor<T>& bv = self.parents[1]->value;
    if (self.parents[0]->needs_grad) {
      Tensor<T> g = self.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= bv[i];
      self.parents[0]->accumulate(g);
    }
    if (self.parents[1]->needs_grad) {
      Tensor<T> g = self.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= av[i];
      self.parents[1]->accumulate(g);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make_node<T>(std::move(out), {a}, [s](Node<T>& self) {
    Tensor<T> g = self.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < T{0}) out[i] = T{0};
  return make_node<T>(std::move(out), {a}, [](Node<T>& self) {
    const Tensor<T>& x = self.parents[0]->value;
    Tensor<T> g = self.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (x[i] <= T{0}) g[i] = T{0};
    self.parents[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a->value.reshaped(s);
  return make_node<T>(std::move(out), {a}, [](Node<T>& self) {
    self.parents[0]->accumulate(self.grad.reshaped(self.parents[0]->value.shape()));
  });
}

namespace detail {
template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<int>& perm) {
  const Shape& in = x.shape();
  size_t nd = in.size();
  Shape out_shape(nd);
  for (size_t i = 0; i < nd; ++i) out_shape[i] = in[static_cast<size_t>(perm[i])];
  Tensor<T> out(out_shape);
  std::vector<int64_t> in_strides(nd, 1), out_strides(nd, 1);
  for (size_t i = nd - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in[i];
  for (size_t i = nd - 1; i > 0; --i) out_strides[i - 1] = out_strides[i] * out_shape[i];
  std::vector<int64_t> idx(nd, 0);
  const T* src = x.data();
  T* dst = out.data();
  int64_t n = x.numel();
  // idx walks the output in row-major order; out[idx] = in[j] with j[perm[i]] = idx[i]
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t src_off = 0;
    for (size_t i = 0; i < nd; ++i) src_off += idx[i] * in_strides[static_cast<size_t>(perm[i])];
    dst[flat] = src[src_off];
    for (size_t i = nd; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}
}  // namespace detail

template <typename T>
Var<T> permute(const Var<T>& a, std::vector<int> perm) {
  detail::check(perm.size() == a->value.ndim(), "permute: rank mismatch");
  Tensor<T> out = detail::permute_tensor(a->value, perm);
  return make_node<T>(std::move(out), {a}, [perm](Node<T>& self) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    self.parents[0]->accumulate(detail::permute_tensor(self.grad, inv));
  });
}

// ---------------------------------------------------------------------------
// broadcasting adds
// ---------------------------------------------------------------------------

// y[n,c,h,w] = x[n,c,h,w] + b[c]
template <typename T>
Var<T> add_bias_nchw(const Var<T>& x, const Var<T>& b) {
  detail::check(x->value.ndim() == 4 && b->value.ndim() == 1 && b->value.dim(0) == x->value.dim(1),
                "add_bias_nchw: bad shapes");
  Tensor<T> out = x->value;
  int64_t B = out.dim(0), C = out.dim(1), S = out.dim(2) * out.dim(3);
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c) {
      T bias = b->value[c];
      T* p = out.data() + (n * C + c) * S;
      for (int64_t s = 0; s < S; ++s) p[s] += bias;
    }
  return make_node<T>(std::move(out), {x, b}, [](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    int64_t B = g.dim(0), C = g.dim(1), S = g.dim(2) * g.dim(3);
    if (self.parents[0]->needs_grad) self.parents[0]->accumulate(g);
    if (self.parents[1]->needs_grad) {
      Tensor<T> db(Shape{C});
      for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T* p = g.data() + (n * C + c) * S;
          T acc{0};
          for (int64_t s = 0; s < S; ++s) acc += p[s];
          db[c] += acc;
        }
      self.parents[1]->accumulate(db);
    }
  });
}

// y[n,...] = x[n,...] + p[...]; p broadcast over the leading dim.
template <typename T>
Var<T> add_broadcast0(const Var<T>& x, const Var<T>& p) {
  int64_t rest = p->value.numel();
  detail::check(x->value.numel() % rest == 0, "add_broadcast0: shape mismatch");
  Tensor<T> out = x->value;
  int64_t B = out.numel() / rest;
  for (int64_t n = 0; n < B; ++n) {
    T* dst = out.data() + n * rest;
    const T* src = p->value.data();
    for (int64_t i = 0; i < rest; ++i) dst[i] += src[i];
  }
  return make_node<T>(std::move(out), {x, p}, [rest](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    int64_t B = g.numel() / rest;
    if (self.parents[0]->needs_grad) self.parents[0]->accumulate(g);
    if (self.parents[1]->needs_grad) {
      Tensor<T> dp(self.parents[1]->value.shape());
      for (int64_t n = 0; n < B; ++n) {
        const T* src = g.data() + n * rest;
        for (int64_t i = 0; i < rest; ++i) dp[i] += src[i];
      }
      self.parents[1]->accumulate(dp);
    }
  });
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::check(a->value.ndim() == 2 && b->value.ndim() == 2 && a->value.dim(1) == b->value.dim(0),
                "matmul: shape mismatch");
  int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  Tensor<T> out(Shape{m, n});
  EMap<T>(out.data(), m, n).noalias() = ECMap<T>(a->value.data(), m, k) * ECMap<T>(b->value.data(), k, n);
  return make_node<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    ECMap<T> g(self.grad.data(), m, n);
    if (self.parents[0]->needs_grad) {
      Tensor<T> da(Shape{m, k});
      EMap<T>(da.data(), m, k).noalias() = g * ECMap<T>(self.parents[1]->value.data(), k, n).transpose();
      self.parents[0]->accumulate(da);
    }
    if (self.parents[1]->needs_grad) {
      Tensor<T> db(Shape{k, n});
      EMap<T>(db.data(), k, n).noalias() = ECMap<T>(self.parents[0]->value.data(), m, k).transpose() * g;
      self.parents[1]->accumulate(db);
    }
  });
}

// y = x * w^T (+ b); x [r,in], w [out,in], b [out] (optional, may be null)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = nullptr) {
  detail::check(x->value.ndim() == 2 && w->value.ndim() == 2 && x->value.dim(1) == w->value.dim(1),
                "linear: shape mismatch");
  int64_t r = x->value.dim(0), in = x->value.dim(1), out_dim = w->value.dim(0);
  Tensor<T> out(Shape{r, out_dim});
  EMap<T>(out.data(), r, out_dim).noalias() =
      ECMap<T>(x->value.data(), r, in) * ECMap<T>(w->value.data(), out_dim, in).transpose();
  if (b) {
    detail::check(b->value.ndim() == 1 && b->value.dim(0) == out_dim, "linear: bad bias");
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < out_dim; ++j) out.at2(i, j) += b->value[j];
  }
  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_node<T>(std::move(out), std::move(parents), [r, in, out_dim](Node<T>& self) {
    ECMap<T> g(self.grad.data(), r, out_dim);
    if (self.parents[0]->needs_grad) {
      Tensor<T> dx(Shape{r, in});
      EMap<T>(dx.data(), r, in).noalias() = g * ECMap<T>(self.parents[1]->value.data(), out_dim, in);
      self.parents[0]->accumulate(dx);
    }
    if (self.parents[1]->needs_grad) {
      Tensor<T> dw(Shape{out_dim, in});
      EMap<T>(dw.data(), out_dim, in).noalias() = g.transpose() * ECMap<T>(self.parents[0]->value.data(), r, in);
      self.parents[1]->accumulate(dw);
    }
    if (self.parents.size() > 2 && self.parents[2]->needs_grad) {
      Tensor<T> db(Shape{out_dim});
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < out_dim; ++j) db[j] += self.grad.at2(i, j);
      self.parents[2]->accumulate(db);
    }
  });
}

// Batched matmul over the leading dim; b is [g,k,n], or [g,n,k] with trans_b.
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_b = false) {
  detail::check(a->value.ndim() == 3 && b->value.ndim() == 3 && a->value.dim(0) == b->value.dim(0),
                "bmm: shape mismatch");
  int64_t G = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
  int64_t n = trans_b ? b->value.dim(1) : b->value.dim(2);
  detail::check((trans_b ? b->value.dim(2) : b->value.dim(1)) == k, "bmm: inner dim mismatch");
  Tensor<T> out(Shape{G, m, n});
  for (int64_t i = 0; i < G; ++i) {
    ECMap<T> A(a->value.data() + i * m * k, m, k);
    EMap<T> Y(out.data() + i * m * n, m, n);
    if (trans_b)
      Y.noalias() = A * ECMap<T>(b->value.data() + i * n * k, n, k).transpose();
    else
      Y.noalias() = A * ECMap<T>(b->value.data() + i * k * n, k, n);
  }
  return make_node<T>(std::move(out), {a, b}, [G, m, k, n, trans_b](Node<T>& self) {
    for (int64_t i = 0; i < G; ++i) {
      ECMap<T> g(self.grad.data() + i * m * n, m, n);
      ECMap<T> A(self.parents[0]->value.data() + i * m * k, m, k);
      if (self.parents[0]->needs_grad) {
        if (!self.parents[0]->grad_set) self.parents[0]->grad_ref();
        EMap<T> da(self.parents[0]->grad.data() + i * m * k, m, k);
        if (trans_b)
          da.noalias() += g * ECMap<T>(self.parents[1]->value.data() + i * n * k, n, k);
        else
          da.noalias() += g * ECMap<T>(self.parents[1]->value.data() + i * k * n, k, n).transpose();
      }
      if (self.parents[1]->needs_grad) {
        if (!self.parents[1]->grad_set) self.parents[1]->grad_ref();
        if (trans_b) {
          EMap<T> db(self.parents[1]->grad.data() + i * n * k, n, k);
          db.noalias() += g.transpose() * A;
        } else {
          EMap<T> db(self.parents[1]->grad.data() + i * k * n, k, n);
          db.noalias() += A.transpose() * g;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

// x [B,Ci,H,W], w [Co,Ci,kh,kw], b [Co] or null
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride, int64_t pad) {
  detail::check(x->value.ndim() == 4 && w->value.ndim() == 4, "conv2d: need 4-d tensors");
  detail::check(x->value.dim(1) == w->value.dim(1), "conv2d: channel mismatch");
  int64_t B = x->value.dim(0), Ci = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  int64_t Co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  detail::check(Ho > 0 && Wo > 0, "conv2d: empty output");
  int64_t K = Ci * kh * kw, S = Ho * Wo;

  Tensor<T> cols(Shape{K, B * S});
  for (int64_t n = 0; n < B; ++n)
    detail::im2col(x->value.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                   cols.data(), B * S, n * S);
  Tensor<T> y_flat(Shape{Co, B * S});
  EMap<T>(y_flat.data(), Co, B * S).noalias() =
      ECMap<T>(w->value.data(), Co, K) * ECMap<T>(cols.data(), K, B * S);

  Tensor<T> out(Shape{B, Co, Ho, Wo});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t co = 0; co < Co; ++co) {
      const T* src = y_flat.data() + co * B * S + n * S;
      T* dst = out.data() + (n * Co + co) * S;
      if (b) {
        T bias = b->value[co];
        for (int64_t s = 0; s < S; ++s) dst[s] = src[s] + bias;
      } else {
        std::copy(src, src + S, dst);
      }
    }

  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_node<T>(std::move(out), std::move(parents),
                      [B, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo, K, S](Node<T>& self) {
    Tensor<T> g_flat(Shape{Co, B * S});
    for (int64_t n = 0; n < B; ++n)
      for (int64_t co = 0; co < Co; ++co)
        std::copy(self.grad.data() + (n * Co + co) * S, self.grad.data() + (n * Co + co + 1) * S,
                  g_flat.data() + co * B * S + n * S);

    if (self.parents[0]->needs_grad) {
      Tensor<T> dcols(Shape{K, B * S});
      EMap<T>(dcols.data(), K, B * S).noalias() =
          ECMap<T>(self.parents[1]->value.data(), Co, K).transpose() * ECMap<T>(g_flat.data(), Co, B * S);
      Tensor<T>& dx = self.parents[0]->grad_ref();
      for (int64_t n = 0; n < B; ++n)
        detail::col2im(dcols.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                       dx.data() + n * Ci * H * W, B * S, n * S);
    }
    if (self.parents[1]->needs_grad) {
      // recompute im2col instead of caching it; peak memory stays bounded
      Tensor<T> cols(Shape{K, B * S});
      const Tensor<T>& xv = self.parents[0]->value;
      for (int64_t n = 0; n < B; ++n)
        detail::im2col(xv.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                       cols.data(), B * S, n * S);
      Tensor<T> dw(Shape{Co, Ci, kh, kw});
      EMap<T>(dw.data(), Co, K).noalias() =
          ECMap<T>(g_flat.data(), Co, B * S) * ECMap<T>(cols.data(), K, B * S).transpose();
      self.parents[1]->accumulate(dw);
    }
    if (self.parents.size() > 2 && self.parents[2]->needs_grad) {
      Tensor<T> db(Shape{Co});
      for (int64_t co = 0; co < Co; ++co) {
        const T* p = g_flat.data() + co * B * S;
        T acc{0};
        for (int64_t s = 0; s < B * S; ++s) acc += p[s];
        db[co] = acc;
      }
      self.parents[2]->accumulate(db);
    }
  });
}

// x [B,Ci,H,W], w [Ci,Co,kh,kw], b [Co] or null; Ho = (H-1)*stride - 2*pad + kh
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride, int64_t pad) {
  detail::check(x->value.ndim() == 4 && w->value.ndim() == 4, "conv_transpose2d: need 4-d tensors");
  detail::check(x->value.dim(1) == w->value.dim(0), "conv_transpose2d: channel mismatch");
  int64_t B = x->value.dim(0), Ci = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  int64_t Co = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
  int64_t Ho = (H - 1) * stride - 2 * pad + kh;
  int64_t Wo = (W - 1) * stride - 2 * pad + kw;
  detail::check(Ho > 0 && Wo > 0, "conv_transpose2d: empty output");
  int64_t K = Co * kh * kw, S = H * W;

  Tensor<T> x_flat(Shape{Ci, B * S});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t ci = 0; ci < Ci; ++ci)
      std::copy(x->value.data() + (n * Ci + ci) * S, x->value.data() + (n * Ci + ci + 1) * S,
                x_flat.data() + ci * B * S + n * S);
  Tensor<T> cols(Shape{K, B * S});
  EMap<T>(cols.data(), K, B * S).noalias() =
      ECMap<T>(w->value.data(), Ci, K).transpose() * ECMap<T>(x_flat.data(), Ci, B * S);

  Tensor<T> out(Shape{B, Co, Ho, Wo});
  for (int64_t n = 0; n < B; ++n)
    detail::col2im(cols.data(), Co, Ho, Wo, kh, kw, stride, pad, H, W,
                   out.data() + n * Co * Ho * Wo, B * S, n * S);
  if (b) {
    detail::check(b->value.dim(0) == Co, "conv_transpose2d: bad bias");
    for (int64_t n = 0; n < B; ++n)
      for (int64_t co = 0; co < Co; ++co) {
        T bias = b->value[co];
        T* p = out.data() + (n * Co + co) * Ho * Wo;
        for (int64_t s = 0; s < Ho * Wo; ++s) p[s] += bias;
      }
  }

  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_node<T>(std::move(out), std::move(parents),
                      [B, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo, K, S](Node<T>& self) {
    // dcols gathers the output gradient through the same patch geometry
    Tensor<T> dcols(Shape{K, B * S});
    for (int64_t n = 0; n < B; ++n)
      detail::im2col(self.grad.data() + n * Co * Ho * Wo, Co, Ho, Wo, kh, kw, stride, pad, H, W,
                     dcols.data(), B * S, n * S);

    if (self.parents[0]->needs_grad) {
      Tensor<T> dx_flat(Shape{Ci, B * S});
      EMap<T>(dx_flat.data(), Ci, B * S).noalias() =
          ECMap<T>(self.parents[1]->value.data(), Ci, K) * ECMap<T>(dcols.data(), K, B * S);
      Tensor<T> dx(Shape{B, Ci, H, W});
      for (int64_t n = 0; n < B; ++n)
        for (int64_t ci = 0; ci < Ci; ++ci)
          std::copy(dx_flat.data() + ci * B * S + n * S, dx_flat.data() + ci * B * S + (n + 1) * S,
                    dx.data() + (n * Ci + ci) * S);
      self.parents[0]->accumulate(dx);
    }
    if (self.parents[1]->needs_grad) {
      Tensor<T> x_flat(Shape{Ci, B * S});
      const Tensor<T>& xv = self.parents[0]->value;
      for (int64_t n = 0; n < B; ++n)
        for (int64_t ci = 0; ci < Ci; ++ci)
          std::copy(xv.data() + (n * Ci + ci) * S, xv.data() + (n * Ci + ci + 1) * S,
                    x_flat.data() + ci * B * S + n * S);
      Tensor<T> dw(Shape{Ci, Co, kh, kw});
      EMap<T>(dw.data(), Ci, K).noalias() =
          ECMap<T>(x_flat.data(), Ci, B * S) * ECMap<T>(dcols.data(), K, B * S).transpose();
      self.parents[1]->accumulate(dw);
    }
    if (self.parents.size() > 2 && self.parents[2]->needs_grad) {
      Tensor<T> db(Shape{Co});
      for (int64_t n = 0; n < B; ++n)
        for (int64_t co = 0; co < Co; ++co) {
          const T* p = self.grad.data() + (n * Co + co) * Ho * Wo;
          T acc{0};
          for (int64_t s = 0; s < Ho * Wo; ++s) acc += p[s];
          db[co] += acc;
        }
      self.parents[2]->accumulate(db);
    }
  });
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int64_t groups,
                  T eps = static_cast<T>(1e-5)) {
  detail::check(x->value.ndim() == 4, "group_norm: need 4-d input");
  int64_t B = x->value.dim(0), C = x->value.dim(1), HW = x->value.dim(2) * x->value.dim(3);
  detail::check(C % groups == 0, "group_norm: channels not divisible by groups");
  detail::check(gamma->value.dim(0) == C && beta->value.dim(0) == C, "group_norm: bad affine shape");
  int64_t Cg = C / groups, M = Cg * HW;

  Tensor<T> out(x->value.shape());
  std::vector<T> means(static_cast<size_t>(B * groups)), invstds(static_cast<size_t>(B * groups));
  for (int64_t n = 0; n < B; ++n) {
    for (int64_t g = 0; g < groups; ++g) {
      const T* src = x->value.data() + (n * C + g * Cg) * HW;
      T mean{0};
      for (int64_t i = 0; i < M; ++i) mean += src[i];
      mean /= static_cast<T>(M);
      T var{0};
      for (int64_t i = 0; i < M; ++i) {
        T d = src[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(M);
      T invstd = T{1} / std::sqrt(var + eps);
      means[static_cast<size_t>(n * groups + g)] = mean;
      invstds[static_cast<size_t>(n * groups + g)] = invstd;
      T* dst = out.data() + (n * C + g * Cg) * HW;
      for (int64_t c = 0; c < Cg; ++c) {
        T ga = gamma->value[g * Cg + c], be = beta->value[g * Cg + c];
        for (int64_t i = 0; i < HW; ++i) {
          T xh = (src[c * HW + i] - mean) * invstd;
          dst[c * HW + i] = ga * xh + be;
        }
      }
    }
  }

  return make_node<T>(std::move(out), {x, gamma, beta},
                      [B, C, HW, groups, Cg, M, means, invstds](Node<T>& self) {
    const Tensor<T>& xv = self.parents[0]->value;
    const Tensor<T>& ga = self.parents[1]->value;
    const Tensor<T>& g = self.grad;
    Tensor<T> dgamma(Shape{C}), dbeta(Shape{C});
    bool need_dx = self.parents[0]->needs_grad;
    Tensor<T>* dx = nullptr;
    if (need_dx) dx = &self.parents[0]->grad_ref();

    std::vector<T> xhat(static_cast<size_t>(M)), dxh(static_cast<size_t>(M));
    for (int64_t n = 0; n < B; ++n) {
      for (int64_t gi = 0; gi < groups; ++gi) {
        T mean = means[static_cast<size_t>(n * groups + gi)];
        T invstd = invstds[static_cast<size_t>(n * groups + gi)];
        const T* src = xv.data() + (n * C + gi * Cg) * HW;
        const T* gy = g.data() + (n * C + gi * Cg) * HW;
        T sum_dxh{0}, sum_dxh_xh{0};
        for (int64_t c = 0; c < Cg; ++c) {
          T w = ga[gi * Cg + c];
          for (int64_t i = 0; i < HW; ++i) {
            T xh = (src[c * HW + i] - mean) * invstd;
            T d = gy[c * HW + i] * w;
            xhat[static_cast<size_t>(c * HW + i)] = xh;
            dxh[static_cast<size_t>(c * HW + i)] = d;
            sum_dxh += d;
            sum_dxh_xh += d * xh;
            dgamma[gi * Cg + c] += gy[c * HW + i] * xh;
            dbeta[gi * Cg + c] += gy[c * HW + i];
          }
        }
        if (need_dx) {
          T mean_dxh = sum_dxh / static_cast<T>(M);
          T mean_dxh_xh = sum_dxh_xh / static_cast<T>(M);
          T* dst = dx->data() + (n * C + gi * Cg) * HW;
          for (int64_t j = 0; j < M; ++j)
            dst[j] += invstd * (dxh[static_cast<size_t>(j)] - mean_dxh -
                                xhat[static_cast<size_t>(j)] * mean_dxh_xh);
        }
      }
    }
    if (self.parents[1]->needs_grad) self.parents[1]->accumulate(dgamma);
    if (self.parents[2]->needs_grad) self.parents[2]->accumulate(dbeta);
  });
}

// softmax over the last axis
template <typename T>
Var<T> softmax_last(const Var<T>& x) {
  int64_t n = x->value.dim(x->value.ndim() - 1);
  int64_t rows = x->value.numel() / n;
  Tensor<T> out = x->value;
  for (int64_t r = 0; r < rows; ++r) {
    T* p = out.data() + r * n;
    T mx = p[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, p[i]);
    T sum{0};
    for (int64_t i = 0; i < n; ++i) {
      p[i] = std::exp(p[i] - mx);
      sum += p[i];
    }
    for (int64_t i = 0; i < n; ++i) p[i] /= sum;
  }
  return make_node<T>(std::move(out), {x}, [rows, n](Node<T>& self) {
    Tensor<T> dx(self.value.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* gy = self.grad.data() + r * n;
      T dot{0};
      for (int64_t i = 0; i < n; ++i) dot += gy[i] * y[i];
      T* d = dx.data() + r * n;
      for (int64_t i = 0; i < n; ++i) d[i] = y[i] * (gy[i] - dot);
    }
    self.parents[0]->accumulate(dx);
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i];
  return make_node<T>(Tensor<T>::scalar(acc), {x}, [](Node<T>& self) {
    T g = self.grad[0];
    self.parents[0]->accumulate(Tensor<T>::full(self.parents[0]->value.shape(), g));
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  T acc{0};
  int64_t n = x->value.numel();
  for (int64_t i = 0; i < n; ++i) acc += x->value[i];
  acc /= static_cast<T>(n);
  return make_node<T>(Tensor<T>::scalar(acc), {x}, [n](Node<T>& self) {
    T g = self.grad[0] / static_cast<T>(n);
    self.parents[0]->accumulate(Tensor<T>::full(self.parents[0]->value.shape(), g));
  });
}

// sum(x * w) against a fixed weighting; handy for scalar readouts in checks
template <typename T>
Var<T> dot_const(const Var<T>& x, Tensor<T> w) {
  detail::check(x->value.same_shape(w), "dot_const: shape mismatch");
  T acc{0};
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i] * w[i];
  return make_node<T>(Tensor<T>::scalar(acc), {x}, [w = std::move(w)](Node<T>& self) {
    T g = self.grad[0];
    Tensor<T> dx = w;
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] *= g;
    self.parents[0]->accumulate(dx);
  });
}

// sum |a - b| (element sum of absolute differences)
template <typename T>
Var<T> l1_sum(const Var<T>& a, const Var<T>& b) {
  detail::check(a->value.same_shape(b->value), "l1_sum: shape mismatch");
  T acc{0};
  for (int64_t i = 0; i < a->value.numel(); ++i) acc += std::abs(a->value[i] - b->value[i]);
  return make_node<T>(Tensor<T>::scalar(acc), {a, b}, [](Node<T>& self) {
    const Tensor<T>& av = self.parents[0]->value;
    const Tensor<T>& bv = self.parents[1]->value;
    T g = self.grad[0];
    Tensor<T> d(av.shape());
    for (int64_t i = 0; i < d.numel(); ++i) {
      T diff = av[i] - bv[i];
      d[i] = diff > T{0} ? g : (diff < T{0} ? -g : T{0});
    }
    if (self.parents[0]->needs_grad) self.parents[0]->accumulate(d);
    if (self.parents[1]->needs_grad) {
      for (int64_t i = 0; i < d.numel(); ++i) d[i] = -d[i];
      self.parents[1]->accumulate(d);
    }
  });
}

}  // namespace dct::ag
