#pragma once

#include <cstdint>
#include <vector>

#include "docrep/tensor.hpp"

// Differentiable primitives. Each op computes its forward value eagerly and,
// when any input requires a gradient, records a hand-written backward.
namespace docrep::ops {

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

/// [n,k] x [k,m] -> [n,m]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// x[n,k] * w[k,m] + bias[m]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// Sum of same-shaped terms in one node.
template <typename T>
Var<T> add_n(const std::vector<Var<T>>& terms);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

template <typename T>
Var<T> relu(const Var<T>& a);

/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& a);

/// Row-wise layer normalization of x[n,d] with gain/bias of length d.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));

/// out[i] = table[ids[i]]; ids[i] < 0 yields a zero row.
template <typename T>
Var<T> gather_rows(const Var<T>& table, const std::vector<std::int64_t>& ids);

/// out[i] = x[rows[i]].
template <typename T>
Var<T> select_rows(const Var<T>& x, const std::vector<std::int64_t>& rows);

/// Multiplies row i by keep[i] (0 or 1).
template <typename T>
Var<T> mask_rows(const Var<T>& x, const std::vector<std::uint8_t>& keep);

/// Instrumentation for the attention score buffer.
struct AttentionStats {
  std::int64_t score_slots = 0;
};

/// Sliding-window self-attention with global tokens over q,k,v [S, d].
/// Non-global queries see keys with |i-j| <= window/2 plus every global
/// key; global queries see every key. Keys and queries with
/// attention_mask == 0 are excluded; masked query rows output zero.
template <typename T>
Var<T> windowed_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, int window,
                          const std::vector<std::uint8_t>& attention_mask,
                          const std::vector<std::uint8_t>& global_mask,
                          AttentionStats* stats = nullptr);

/// Score slots the windowed attention allocates for one head.
std::int64_t attention_score_slots(std::int64_t seq_len, int window, std::int64_t num_global);

/// 2-D convolution over x[Cin,H,W] with weights [Cout, Cin*k*k] and bias
/// [Cout]; "same" padding so each output side is ceil(in / stride).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel, int stride);

/// lateral[C,H,W] + nearest-2x-upsample(top[C,h,w]) cropped to H x W.
template <typename T>
Var<T> add_upsampled(const Var<T>& lateral, const Var<T>& top);

/// Cell-index rectangle [left,right) x [top,bottom) on a feature map.
struct Region {
  std::int64_t left = 0, top = 0, right = 1, bottom = 1;
};

/// Per-channel max over a region of one of several maps [C,H,W]. Row i of
/// the result [N,C] pools maps[map_index[i]] over regions[i]; map_index < 0
/// yields a zero row.
template <typename T>
Var<T> roi_max_pool(const std::vector<Var<T>>& maps, const std::vector<std::int64_t>& map_index,
                    const std::vector<Region>& regions);

/// Mean cross-entropy of logits[n,C] against targets; targets < 0 are
/// ignored. With no counted rows the loss is exactly 0.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::int64_t>& targets);

/// Mean over rows of -sum_k target[r,k] * log softmax(logits[r])_k.
template <typename T>
Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& targets);

/// Row-wise softmax (no gradient).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace docrep::ops
