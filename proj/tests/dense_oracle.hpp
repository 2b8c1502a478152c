#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "docrep/encoder.hpp"

namespace docrep::testing {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Mat to_mat(const Tensor<T>& t) {
  Mat m(t.rows(), t.cols());
  for (std::int64_t r = 0; r < t.rows(); ++r)
    for (std::int64_t c = 0; c < t.cols(); ++c) m(r, c) = static_cast<double>(t.at(r, c));
  return m;
}

template <typename T>
Eigen::RowVectorXd to_row(const Var<T>& v) {
  Eigen::RowVectorXd r(v.value().numel());
  for (std::int64_t i = 0; i < v.value().numel(); ++i) r(i) = static_cast<double>(v.value()[i]);
  return r;
}

inline Mat layer_norm(const Mat& x, const Eigen::RowVectorXd& g, const Eigen::RowVectorXd& b, double eps = 1e-5) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    out.row(r) = ((x.row(r).array() - mean) / std::sqrt(var + eps)).matrix().cwiseProduct(g) + b;
  }
  return out;
}

/// Full S x S attention where query i may see key j iff allowed(i, j).
inline Mat masked_attention(const Mat& q, const Mat& k, const Mat& v, int heads, const std::vector<std::vector<bool>>& allowed) {
  const auto S = q.rows(), D = q.cols(), dh = D / heads;
  Mat out = Mat::Zero(S, D);
  for (int h = 0; h < heads; ++h) {
    const Mat qh = q.middleCols(h * dh, dh), kh = k.middleCols(h * dh, dh), vh = v.middleCols(h * dh, dh);
    Mat scores = qh * kh.transpose() / std::sqrt(static_cast<double>(dh));
    for (Eigen::Index i = 0; i < S; ++i) {
      double mx = -1e300;
      for (Eigen::Index j = 0; j < S; ++j)
        if (allowed[i][j]) mx = std::max(mx, scores(i, j));
      double z = 0;
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dh);
      for (Eigen::Index j = 0; j < S; ++j)
        if (allowed[i][j]) {
          const double e = std::exp(scores(i, j) - mx);
          z += e;
          acc += e * vh.row(j);
        }
      if (z > 0) out.block(i, h * dh, 1, dh) = acc / z;
    }
  }
  return out;
}

inline std::vector<std::vector<bool>> attention_pattern(std::int64_t S, int window, const std::vector<std::uint8_t>& mask,
                                                        const std::vector<std::uint8_t>& global) {
  std::vector<std::vector<bool>> a(S, std::vector<bool>(S, false));
  for (std::int64_t i = 0; i < S; ++i) {
    if (!mask[i]) continue;
    for (std::int64_t j = 0; j < S; ++j)
      a[i][j] = mask[j] && (global[i] || global[j] || std::llabs(i - j) <= window / 2);
  }
  return a;
}

inline Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
}

/// Pre-norm transformer evaluated with plain matrices and an explicit S x S
/// attention pattern.
template <typename T>
Mat reference_encode(const Encoder<T>& enc, const Mat& x0, const std::vector<std::vector<bool>>& allowed,
                     const std::vector<std::uint8_t>& mask) {
  const int heads = enc.config().heads;
  Mat x = x0;
  auto lin = [](const Mat& in, const Var<T>& w, const Var<T>& b) {
    Mat out = in * to_mat(w.value());
    out.rowwise() += to_row(b);
    return out;
  };
  for (const auto& L : enc.layers()) {
    const Mat h = layer_norm(x, to_row(L.ln1_gain), to_row(L.ln1_bias));
    const Mat a = masked_attention(lin(h, L.wq, L.bq), lin(h, L.wk, L.bk), lin(h, L.wv, L.bv), heads, allowed);
    x += lin(a, L.wo, L.bo);
    const Mat f = layer_norm(x, to_row(L.ln2_gain), to_row(L.ln2_bias));
    x += lin(gelu(lin(f, L.w1, L.b1)), L.w2, L.b2);
  }
  x = layer_norm(x, to_row(enc.final_gain()), to_row(enc.final_bias()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (!mask[i]) x.row(i).setZero();
  return x;
}

}  // namespace docrep::testing
