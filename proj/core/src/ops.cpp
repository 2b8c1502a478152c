#include "docrep/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace docrep::ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatR<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatR<T>>;
template <typename T>
using MapV = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CMapV = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
CMapM<T> cmat(const Tensor<T>& t, std::int64_t r, std::int64_t c) {
  return CMapM<T>(t.data.data(), r, c);
}
template <typename T>
CMapM<T> cmat(const std::vector<T>& v, std::int64_t r, std::int64_t c) {
  return CMapM<T>(v.data(), r, c);
}
template <typename T>
MapM<T> mat(std::vector<T>& v, std::int64_t r, std::int64_t c) {
  return MapM<T>(v.data(), r, c);
}

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

template <typename T>
void require_2d(const Var<T>& v, const char* what) {
  if (v.shape().size() != 2) throw std::invalid_argument(std::string(what) + ": expected a 2-D tensor, got " + shape_str(v.shape()));
}

template <typename T>
Node<T>* in(Node<T>* self, std::size_t i) {
  return self->inputs[i].get();
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const auto n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  require(b.shape()[0] == k, "matmul: inner dimensions differ");
  Tensor<T> out({n, m});
  mat(out.data, n, m).noalias() = cmat(a.value(), n, k) * cmat(b.value(), k, m);
  return make_result<T>(std::move(out), {a, b}, [n, k, m](Node<T>* self) {
    return [self, n, k, m] {
      auto g = cmat(self->grad, n, m);
      Node<T>* A = in(self, 0);
      Node<T>* B = in(self, 1);
      if (A->requires_grad) {
        A->ensure_grad();
        mat(A->grad, n, k).noalias() += g * cmat(B->value, k, m).transpose();
      }
      if (B->requires_grad) {
        B->ensure_grad();
        mat(B->grad, k, m).noalias() += cmat(A->value, n, k).transpose() * g;
      }
    };
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  require_2d(x, "linear");
  require_2d(w, "linear");
  const auto n = x.shape()[0], k = x.shape()[1], m = w.shape()[1];
  require(w.shape()[0] == k, "linear: input width does not match weight rows");
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.numel() == m, "linear: bias length does not match output width");
  Tensor<T> out({n, m});
  auto o = mat(out.data, n, m);
  o.noalias() = cmat(x.value(), n, k) * cmat(w.value(), k, m);
  if (has_bias) o.rowwise() += CMapV<T>(bias.value().data.data(), m).transpose();
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [n, k, m, has_bias](Node<T>* self) {
    return [self, n, k, m, has_bias] {
      auto g = cmat(self->grad, n, m);
      Node<T>* X = in(self, 0);
      Node<T>* W = in(self, 1);
      if (X->requires_grad) {
        X->ensure_grad();
        mat(X->grad, n, k).noalias() += g * cmat(W->value, k, m).transpose();
      }
      if (W->requires_grad) {
        W->ensure_grad();
        mat(W->grad, k, m).noalias() += cmat(X->value, n, k).transpose() * g;
      }
      if (has_bias) {
        Node<T>* B = in(self, 2);
        if (B->requires_grad) {
          B->ensure_grad();
          const T* d = self->grad.data();
          for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t c = 0; c < m; ++c) B->grad[c] += d[r * m + c];
        }
      }
    };
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return add_n<T>({a, b});
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& terms) {
  require(!terms.empty(), "add_n: no terms");
  Tensor<T> out = terms[0].value();
  for (std::size_t t = 1; t < terms.size(); ++t) {
    if (terms[t].shape() != out.shape)
      throw std::invalid_argument("add_n: shape mismatch " + shape_str(out.shape) + " vs " + shape_str(terms[t].shape()));
    const auto& v = terms[t].value().data;
    for (std::size_t i = 0; i < v.size(); ++i) out.data[i] += v[i];
  }
  const std::size_t count = terms.size();
  return make_result<T>(std::move(out), terms, [count](Node<T>* self) {
    return [self, count] {
      for (std::size_t t = 0; t < count; ++t) {
        Node<T>* X = in(self, t);
        if (!X->requires_grad) continue;
        X->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i) X->grad[i] += self->grad[i];
      }
    };
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& x : out.data) x *= factor;
  return make_result<T>(std::move(out), {a}, [factor](Node<T>* self) {
    return [self, factor] {
      Node<T>* X = in(self, 0);
      X->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) X->grad[i] += factor * self->grad[i];
    };
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& x : out.data) x = x > T(0) ? x : T(0);
  return make_result<T>(std::move(out), {a}, [](Node<T>* self) {
    return [self] {
      Node<T>* X = in(self, 0);
      X->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        if (X->value.data[i] > T(0)) X->grad[i] += self->grad[i];
    };
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  Tensor<T> out = a.value();
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (auto& x : out.data) x = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  return make_result<T>(std::move(out), {a}, [inv_sqrt2](Node<T>* self) {
    return [self, inv_sqrt2] {
      Node<T>* X = in(self, 0);
      X->ensure_grad();
      const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      for (std::size_t i = 0; i < self->grad.size(); ++i) {
        const T x = X->value.data[i];
        const T d = T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * std::exp(T(-0.5) * x * x) * inv_sqrt2pi;
        X->grad[i] += d * self->grad[i];
      }
    };
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  require_2d(x, "layer_norm");
  const auto n = x.shape()[0], d = x.shape()[1];
  require(gain.numel() == d && bias.numel() == d, "layer_norm: parameter width mismatch");
  Tensor<T> out({n, d});
  std::vector<T> xhat(static_cast<std::size_t>(n * d));
  std::vector<T> rstd(static_cast<std::size_t>(n));
  const auto& xv = x.value().data;
  const auto& g = gain.value().data;
  const auto& b = bias.value().data;
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = xv.data() + r * d;
    T mean = 0;
    for (std::int64_t c = 0; c < d; ++c) mean += row[c];
    mean /= T(d);
    T var = 0;
    for (std::int64_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::int64_t c = 0; c < d; ++c) {
      const T h = (row[c] - mean) * rs;
      xhat[r * d + c] = h;
      out.data[r * d + c] = h * g[c] + b[c];
    }
  }
  return make_result<T>(std::move(out), {x, gain, bias},
                        [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>* self) mutable {
    return [self, n, d, xhat = std::move(xhat), rstd = std::move(rstd)] {
      Node<T>* X = in(self, 0);
      Node<T>* G = in(self, 1);
      Node<T>* B = in(self, 2);
      const auto& gv = G->value.data;
      if (G->requires_grad) G->ensure_grad();
      if (B->requires_grad) B->ensure_grad();
      if (X->requires_grad) X->ensure_grad();
      std::vector<T> dxhat(static_cast<std::size_t>(d));
      for (std::int64_t r = 0; r < n; ++r) {
        const T* dy = self->grad.data() + r * d;
        const T* h = xhat.data() + r * d;
        T mean_dxhat = 0, mean_dxhat_h = 0;
        for (std::int64_t c = 0; c < d; ++c) {
          if (G->requires_grad) G->grad[c] += dy[c] * h[c];
          if (B->requires_grad) B->grad[c] += dy[c];
          dxhat[c] = dy[c] * gv[c];
          mean_dxhat += dxhat[c];
          mean_dxhat_h += dxhat[c] * h[c];
        }
        if (!X->requires_grad) continue;
        mean_dxhat /= T(d);
        mean_dxhat_h /= T(d);
        for (std::int64_t c = 0; c < d; ++c)
          X->grad[r * d + c] += rstd[r] * (dxhat[c] - mean_dxhat - h[c] * mean_dxhat_h);
      }
    };
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, const std::vector<std::int64_t>& ids) {
  require_2d(table, "gather_rows");
  const auto rows = table.shape()[0], d = table.shape()[1];
  const auto n = static_cast<std::int64_t>(ids.size());
  Tensor<T> out({n, d});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto id = ids[i];
    if (id < 0) continue;
    if (id >= rows)
      throw std::out_of_range("gather_rows: index " + std::to_string(id) + " outside table of " + std::to_string(rows) + " rows");
    std::copy_n(table.value().data.data() + id * d, d, out.data.data() + i * d);
  }
  return make_result<T>(std::move(out), {table}, [ids, d](Node<T>* self) {
    return [self, ids, d] {
      Node<T>* X = in(self, 0);
      X->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0) continue;
        T* dst = X->grad.data() + ids[i] * d;
        const T* src = self->grad.data() + static_cast<std::int64_t>(i) * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    };
  });
}

template <typename T>
Var<T> select_rows(const Var<T>& x, const std::vector<std::int64_t>& rows) {
  require_2d(x, "select_rows");
  for (auto r : rows) require(r >= 0 && r < x.shape()[0], "select_rows: row out of range");
  return gather_rows(x, rows);
}

template <typename T>
Var<T> mask_rows(const Var<T>& x, const std::vector<std::uint8_t>& keep) {
  require_2d(x, "mask_rows");
  const auto n = x.shape()[0], d = x.shape()[1];
  require(static_cast<std::int64_t>(keep.size()) == n, "mask_rows: mask length mismatch");
  Tensor<T> out = x.value();
  for (std::int64_t r = 0; r < n; ++r)
    if (!keep[r]) std::fill_n(out.data.data() + r * d, d, T(0));
  return make_result<T>(std::move(out), {x}, [keep, d](Node<T>* self) {
    return [self, keep, d] {
      Node<T>* X = in(self, 0);
      X->ensure_grad();
      for (std::size_t r = 0; r < keep.size(); ++r) {
        if (!keep[r]) continue;
        const auto off = static_cast<std::int64_t>(r) * d;
        for (std::int64_t c = 0; c < d; ++c) X->grad[off + c] += self->grad[off + c];
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Sliding-window attention

namespace {

/// Slot layout of the score buffer: each query row owns a contiguous run of
/// slots, each slot naming one key index. A non-global row stores a band of
/// min(W+1, S) keys around itself followed by one slot per global key; when
/// the band already spans the whole sequence the global slots are dropped.
/// Global rows store all S keys.
struct SlotLayout {
  std::int64_t seq = 0;
  std::int64_t band = 0;
  int half = 0;
  bool band_is_full = false;
  std::vector<std::int64_t> globals;
  std::vector<std::int64_t> offset;  // size S+1

  std::int64_t band_start(std::int64_t i) const {
    return std::clamp<std::int64_t>(i - half, 0, seq - band);
  }
};

SlotLayout make_layout(std::int64_t S, int window, const std::vector<std::uint8_t>& global_mask,
                       const std::vector<std::uint8_t>* attention_mask) {
  SlotLayout L;
  L.seq = S;
  L.half = window / 2;
  L.band = std::min<std::int64_t>(window + 1, S);
  L.band_is_full = L.band == S;
  for (std::int64_t j = 0; j < S; ++j)
    if (global_mask[j] && (!attention_mask || (*attention_mask)[j])) L.globals.push_back(j);
  L.offset.resize(S + 1);
  std::int64_t total = 0;
  const auto extra = L.band_is_full ? 0 : static_cast<std::int64_t>(L.globals.size());
  for (std::int64_t i = 0; i < S; ++i) {
    L.offset[i] = total;
    total += (global_mask[i] || L.band_is_full) ? S : L.band + extra;
  }
  L.offset[S] = total;
  return L;
}

}  // namespace

std::int64_t attention_score_slots(std::int64_t seq_len, int window, std::int64_t num_global) {
  const std::int64_t band = std::min<std::int64_t>(window + 1, seq_len);
  if (band == seq_len) return seq_len * seq_len;
  return (seq_len - num_global) * (band + num_global) + num_global * seq_len;
}

template <typename T>
Var<T> windowed_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, int window,
                          const std::vector<std::uint8_t>& attention_mask,
                          const std::vector<std::uint8_t>& global_mask, AttentionStats* stats) {
  require_2d(q, "windowed_attention");
  const auto S = q.shape()[0], D = q.shape()[1];
  require(k.shape() == q.shape() && v.shape() == q.shape(), "windowed_attention: q/k/v shape mismatch");
  require(heads > 0 && D % heads == 0, "windowed_attention: width not divisible by heads");
  require(window >= 0 && window % 2 == 0, "windowed_attention: window must be even and non-negative");
  require(static_cast<std::int64_t>(attention_mask.size()) == S && static_cast<std::int64_t>(global_mask.size()) == S,
          "windowed_attention: mask length mismatch");
  for (std::int64_t i = 0; i < S; ++i)
    if (global_mask[i] && !attention_mask[i])
      throw std::invalid_argument("windowed_attention: global token at padded position " + std::to_string(i));

  const SlotLayout L = make_layout(S, window, global_mask, &attention_mask);
  const std::int64_t slots_per_head = L.offset[S];
  if (stats) stats->score_slots = slots_per_head;
  const std::int64_t dh = D / heads;
  const T scale_factor = T(1) / std::sqrt(T(dh));

  // Slot key index and whether the slot participates in the softmax.
  auto slot_key = [&L](std::int64_t i, std::int64_t s, bool row_global) -> std::int64_t {
    if (row_global || L.band_is_full) return s;
    if (s < L.band) return L.band_start(i) + s;
    return L.globals[static_cast<std::size_t>(s - L.band)];
  };
  auto slot_allowed = [&](std::int64_t i, std::int64_t s, std::int64_t j, bool row_global) -> bool {
    if (!attention_mask[j]) return false;
    if (row_global) return true;
    const bool in_window = std::llabs(i - j) <= L.half;
    if (L.band_is_full) return in_window || global_mask[j];
    if (s < L.band) return in_window || global_mask[j];
    const std::int64_t start = L.band_start(i);
    return j < start || j >= start + L.band;  // global key outside the band slots
  };

  std::vector<T> probs(static_cast<std::size_t>(slots_per_head * heads), T(0));
  std::vector<std::int64_t> keys(static_cast<std::size_t>(slots_per_head), -1);
  for (std::int64_t i = 0; i < S; ++i) {
    if (!attention_mask[i]) continue;
    const bool rg = global_mask[i] != 0;
    const auto len = L.offset[i + 1] - L.offset[i];
    for (std::int64_t s = 0; s < len; ++s) {
      const auto j = slot_key(i, s, rg);
      if (slot_allowed(i, s, j, rg)) keys[L.offset[i] + s] = j;
    }
  }

  Tensor<T> out({S, D});
  const T* Q = q.value().data.data();
  const T* K = k.value().data.data();
  const T* V = v.value().data.data();
  for (int h = 0; h < heads; ++h) {
    T* P = probs.data() + static_cast<std::int64_t>(h) * slots_per_head;
    const auto col = static_cast<std::int64_t>(h) * dh;
    for (std::int64_t i = 0; i < S; ++i) {
      if (!attention_mask[i]) continue;
      const auto off = L.offset[i], len = L.offset[i + 1] - off;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t s = 0; s < len; ++s) {
        const auto j = keys[off + s];
        if (j < 0) continue;
        T dot = 0;
        for (std::int64_t c = 0; c < dh; ++c) dot += Q[i * D + col + c] * K[j * D + col + c];
        P[off + s] = dot * scale_factor;
        mx = std::max(mx, P[off + s]);
      }
      T z = 0;
      for (std::int64_t s = 0; s < len; ++s) {
        if (keys[off + s] < 0) continue;
        P[off + s] = std::exp(P[off + s] - mx);
        z += P[off + s];
      }
      T* o = out.data.data() + i * D + col;
      for (std::int64_t s = 0; s < len; ++s) {
        const auto j = keys[off + s];
        if (j < 0) continue;
        P[off + s] /= z;
        const T p = P[off + s];
        for (std::int64_t c = 0; c < dh; ++c) o[c] += p * V[j * D + col + c];
      }
    }
  }

  return make_result<T>(std::move(out), {q, k, v},
                        [S, D, heads, dh, scale_factor, offsets = L.offset, keys = std::move(keys),
                         probs = std::move(probs), slots_per_head, attention_mask](Node<T>* self) mutable {
    return [self, S, D, heads, dh, scale_factor, offsets = std::move(offsets), keys = std::move(keys),
            probs = std::move(probs), slots_per_head, attention_mask] {
      Node<T>* NQ = in(self, 0);
      Node<T>* NK = in(self, 1);
      Node<T>* NV = in(self, 2);
      NQ->ensure_grad();
      NK->ensure_grad();
      NV->ensure_grad();
      const T* Q = NQ->value.data.data();
      const T* K = NK->value.data.data();
      const T* V = NV->value.data.data();
      T* dQ = NQ->grad.data();
      T* dK = NK->grad.data();
      T* dV = NV->grad.data();
      const T* dO = self->grad.data();
      std::vector<T> dp;
      for (int h = 0; h < heads; ++h) {
        const T* P = probs.data() + static_cast<std::int64_t>(h) * slots_per_head;
        const auto col = static_cast<std::int64_t>(h) * dh;
        for (std::int64_t i = 0; i < S; ++i) {
          if (!attention_mask[i]) continue;
          const auto off = offsets[i], len = offsets[i + 1] - off;
          dp.assign(static_cast<std::size_t>(len), T(0));
          const T* go = dO + i * D + col;
          T weighted = 0;
          for (std::int64_t s = 0; s < len; ++s) {
            const auto j = keys[off + s];
            if (j < 0) continue;
            T acc = 0;
            for (std::int64_t c = 0; c < dh; ++c) {
              acc += go[c] * V[j * D + col + c];
              dV[j * D + col + c] += P[off + s] * go[c];
            }
            dp[s] = acc;
            weighted += P[off + s] * acc;
          }
          for (std::int64_t s = 0; s < len; ++s) {
            const auto j = keys[off + s];
            if (j < 0) continue;
            const T ds = P[off + s] * (dp[s] - weighted) * scale_factor;
            for (std::int64_t c = 0; c < dh; ++c) {
              dQ[i * D + col + c] += ds * K[j * D + col + c];
              dK[j * D + col + c] += ds * Q[i * D + col + c];
            }
          }
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeom {
  std::int64_t cin, h, w, ho, wo, pad_top, pad_left;
  int k, stride;
};

ConvGeom conv_geometry(const Shape& x, int kernel, int stride) {
  ConvGeom g{};
  g.cin = x[0];
  g.h = x[1];
  g.w = x[2];
  g.k = kernel;
  g.stride = stride;
  g.ho = (g.h + stride - 1) / stride;
  g.wo = (g.w + stride - 1) / stride;
  const auto pad_h = std::max<std::int64_t>((g.ho - 1) * stride + kernel - g.h, 0);
  const auto pad_w = std::max<std::int64_t>((g.wo - 1) * stride + kernel - g.w, 0);
  g.pad_top = pad_h / 2;
  g.pad_left = pad_w / 2;
  return g;
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::int64_t n = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        T* dst = col + ((c * g.k + ky) * g.k + kx) * n;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride + ky - g.pad_top;
          T* row = dst + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(row, g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride + kx - g.pad_left;
            row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, T* dx) {
  const std::int64_t n = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const T* src = col + ((c * g.k + ky) * g.k + kx) * n;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = dx + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride + kx - g.pad_left;
            if (ix >= 0 && ix < g.w) dst[ix] += src[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel, int stride) {
  if (x.shape().size() != 3) throw std::invalid_argument("conv2d: expected [C,H,W] input, got " + shape_str(x.shape()));
  require(kernel > 0 && stride > 0, "conv2d: kernel and stride must be positive");
  const ConvGeom g = conv_geometry(x.shape(), kernel, stride);
  const auto cout = weight.shape()[0];
  const auto kk = g.cin * kernel * kernel;
  if (weight.shape().size() != 2 || weight.shape()[1] != kk)
    throw std::invalid_argument("conv2d: weight shape " + shape_str(weight.shape()) + " does not match input channels");
  require(bias.numel() == cout, "conv2d: bias length mismatch");
  const auto n = g.ho * g.wo;
  std::vector<T> col(static_cast<std::size_t>(kk * n));
  im2col(x.value().data.data(), g, col.data());
  Tensor<T> out({cout, g.ho, g.wo});
  auto o = mat(out.data, cout, n);
  o.noalias() = cmat(weight.value(), cout, kk) * cmat(col, kk, n);
  o.colwise() += CMapV<T>(bias.value().data.data(), cout);
  return make_result<T>(std::move(out), {x, weight, bias}, [g, cout, kk, n, col = std::move(col)](Node<T>* self) mutable {
    return [self, g, cout, kk, n, col = std::move(col)] {
      auto dout = cmat(self->grad, cout, n);
      Node<T>* X = in(self, 0);
      Node<T>* W = in(self, 1);
      Node<T>* B = in(self, 2);
      if (W->requires_grad) {
        W->ensure_grad();
        mat(W->grad, cout, kk).noalias() += dout * cmat(col, kk, n).transpose();
      }
      if (B->requires_grad) {
        B->ensure_grad();
        const T* d = self->grad.data();
        for (std::int64_t c = 0; c < cout; ++c) {
          T acc = 0;
          for (std::int64_t j = 0; j < n; ++j) acc += d[c * n + j];
          B->grad[c] += acc;
        }
      }
      if (X->requires_grad) {
        X->ensure_grad();
        std::vector<T> dcol(static_cast<std::size_t>(kk * n));
        mat(dcol, kk, n).noalias() = cmat(W->value, cout, kk).transpose() * dout;
        col2im(dcol.data(), g, X->grad.data());
      }
    };
  });
}

template <typename T>
Var<T> add_upsampled(const Var<T>& lateral, const Var<T>& top) {
  const auto& ls = lateral.shape();
  const auto& ts = top.shape();
  if (ls.size() != 3 || ts.size() != 3 || ls[0] != ts[0] || (ls[1] + 1) / 2 != ts[1] || (ls[2] + 1) / 2 != ts[2])
    throw std::invalid_argument("add_upsampled: incompatible shapes " + shape_str(ls) + " and " + shape_str(ts));
  const auto C = ls[0], H = ls[1], W = ls[2], h = ts[1], w = ts[2];
  Tensor<T> out = lateral.value();
  const T* tv = top.value().data.data();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) out.data[(c * H + y) * W + x] += tv[(c * h + y / 2) * w + x / 2];
  return make_result<T>(std::move(out), {lateral, top}, [C, H, W, h, w](Node<T>* self) {
    return [self, C, H, W, h, w] {
      Node<T>* Lt = in(self, 0);
      Node<T>* Tp = in(self, 1);
      if (Lt->requires_grad) {
        Lt->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i) Lt->grad[i] += self->grad[i];
      }
      if (Tp->requires_grad) {
        Tp->ensure_grad();
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) Tp->grad[(c * h + y / 2) * w + x / 2] += self->grad[(c * H + y) * W + x];
      }
    };
  });
}

template <typename T>
Var<T> roi_max_pool(const std::vector<Var<T>>& maps, const std::vector<std::int64_t>& map_index,
                    const std::vector<Region>& regions) {
  require(!maps.empty(), "roi_max_pool: no feature maps");
  require(map_index.size() == regions.size(), "roi_max_pool: index/region count mismatch");
  const auto C = maps[0].shape().at(0);
  for (const auto& m : maps)
    if (m.shape().size() != 3 || m.shape()[0] != C) throw std::invalid_argument("roi_max_pool: maps must be [C,H,W] with equal C");
  const auto N = static_cast<std::int64_t>(regions.size());
  Tensor<T> out({N, C});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(N * C), -1);
  for (std::int64_t i = 0; i < N; ++i) {
    const auto mi = map_index[i];
    if (mi < 0) continue;
    if (mi >= static_cast<std::int64_t>(maps.size())) throw std::out_of_range("roi_max_pool: map index out of range");
    const auto& mv = maps[mi].value();
    const auto H = mv.shape[1], W = mv.shape[2];
    const Region& r = regions[i];
    if (r.left < 0 || r.top < 0 || r.right > W || r.bottom > H || r.left >= r.right || r.top >= r.bottom)
      throw std::invalid_argument("roi_max_pool: empty or out-of-map region");
    for (std::int64_t c = 0; c < C; ++c) {
      T best = -std::numeric_limits<T>::infinity();
      std::int64_t where = -1;
      for (std::int64_t y = r.top; y < r.bottom; ++y)
        for (std::int64_t x = r.left; x < r.right; ++x) {
          const auto idx = (c * H + y) * W + x;
          if (mv.data[idx] > best) {
            best = mv.data[idx];
            where = idx;
          }
        }
      out.data[i * C + c] = best;
      argmax[i * C + c] = where;
    }
  }
  return make_result<T>(std::move(out), maps, [C, N, map_index, argmax = std::move(argmax)](Node<T>* self) mutable {
    return [self, C, N, map_index, argmax = std::move(argmax)] {
      for (std::int64_t i = 0; i < N; ++i) {
        const auto mi = map_index[i];
        if (mi < 0) continue;
        Node<T>* M = in(self, static_cast<std::size_t>(mi));
        if (!M->requires_grad) continue;
        M->ensure_grad();
        for (std::int64_t c = 0; c < C; ++c) M->grad[argmax[i * C + c]] += self->grad[i * C + c];
      }
    };
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const auto n = logits.rows(), c = logits.cols();
  Tensor<T> out(logits.shape);
  for (std::int64_t r = 0; r < n; ++r) {
    const T* z = logits.data.data() + r * c;
    T* p = out.data.data() + r * c;
    const T mx = *std::max_element(z, z + c);
    T sum = 0;
    for (std::int64_t j = 0; j < c; ++j) sum += (p[j] = std::exp(z[j] - mx));
    for (std::int64_t j = 0; j < c; ++j) p[j] /= sum;
  }
  return out;
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::int64_t>& targets) {
  require_2d(logits, "cross_entropy");
  const auto n = logits.shape()[0], C = logits.shape()[1];
  require(static_cast<std::int64_t>(targets.size()) == n, "cross_entropy: target count mismatch");
  Tensor<T> probs = softmax_rows(logits.value());
  std::int64_t counted = 0;
  T loss = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    const auto t = targets[r];
    if (t < 0) continue;
    if (t >= C) throw std::out_of_range("cross_entropy: target class " + std::to_string(t) + " >= " + std::to_string(C));
    const T* z = logits.value().data.data() + r * C;
    const T mx = *std::max_element(z, z + C);
    T sum = 0;
    for (std::int64_t j = 0; j < C; ++j) sum += std::exp(z[j] - mx);
    loss += -(z[t] - mx - std::log(sum));
    ++counted;
  }
  if (counted > 0) loss /= T(counted);
  Tensor<T> out({1}, std::vector<T>{loss});
  return make_result<T>(std::move(out), {logits}, [n, C, targets, counted, probs = std::move(probs)](Node<T>* self) mutable {
    return [self, n, C, targets, counted, probs = std::move(probs)] {
      if (counted == 0) return;
      Node<T>* Z = in(self, 0);
      Z->ensure_grad();
      const T g = self->grad[0] / T(counted);
      for (std::int64_t r = 0; r < n; ++r) {
        const auto t = targets[r];
        if (t < 0) continue;
        for (std::int64_t j = 0; j < C; ++j)
          Z->grad[r * C + j] += g * (probs.data[r * C + j] - (j == t ? T(1) : T(0)));
      }
    };
  });
}

template <typename T>
Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& targets) {
  require_2d(logits, "soft_cross_entropy");
  require(targets.shape == logits.shape(), "soft_cross_entropy: target shape mismatch");
  const auto n = logits.shape()[0], K = logits.shape()[1];
  require(n > 0, "soft_cross_entropy: empty batch");
  Tensor<T> probs = softmax_rows(logits.value());
  T loss = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    const T* z = logits.value().data.data() + r * K;
    const T mx = *std::max_element(z, z + K);
    T sum = 0;
    for (std::int64_t j = 0; j < K; ++j) sum += std::exp(z[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::int64_t j = 0; j < K; ++j) loss -= targets.data[r * K + j] * (z[j] - lse);
  }
  loss /= T(n);
  Tensor<T> out({1}, std::vector<T>{loss});
  return make_result<T>(std::move(out), {logits}, [n, K, targets, probs = std::move(probs)](Node<T>* self) mutable {
    return [self, n, K, targets, probs = std::move(probs)] {
      Node<T>* Z = in(self, 0);
      Z->ensure_grad();
      const T g = self->grad[0] / T(n);
      for (std::int64_t r = 0; r < n; ++r) {
        T mass = 0;
        for (std::int64_t j = 0; j < K; ++j) mass += targets.data[r * K + j];
        for (std::int64_t j = 0; j < K; ++j)
          Z->grad[r * K + j] += g * (probs.data[r * K + j] * mass - targets.data[r * K + j]);
      }
    };
  });
}

#define DOCREP_INSTANTIATE_OPS(T)                                                                              \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                           \
  template Var<T> add_n(const std::vector<Var<T>>&);                                                           \
  template Var<T> scale(const Var<T>&, T);                                                                     \
  template Var<T> relu(const Var<T>&);                                                                         \
  template Var<T> gelu(const Var<T>&);                                                                         \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                                  \
  template Var<T> gather_rows(const Var<T>&, const std::vector<std::int64_t>&);                                \
  template Var<T> select_rows(const Var<T>&, const std::vector<std::int64_t>&);                                \
  template Var<T> mask_rows(const Var<T>&, const std::vector<std::uint8_t>&);                                  \
  template Var<T> windowed_attention(const Var<T>&, const Var<T>&, const Var<T>&, int, int,                    \
                                     const std::vector<std::uint8_t>&, const std::vector<std::uint8_t>&,       \
                                     AttentionStats*);                                                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                               \
  template Var<T> add_upsampled(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> roi_max_pool(const std::vector<Var<T>>&, const std::vector<std::int64_t>&,                   \
                               const std::vector<Region>&);                                                    \
  template Var<T> cross_entropy(const Var<T>&, const std::vector<std::int64_t>&);                              \
  template Var<T> soft_cross_entropy(const Var<T>&, const Tensor<T>&);                                         \
  template Tensor<T> softmax_rows(const Tensor<T>&);

DOCREP_INSTANTIATE_OPS(float)
DOCREP_INSTANTIATE_OPS(double)

}  // namespace docrep::ops
