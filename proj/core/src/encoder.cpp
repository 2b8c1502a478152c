#include "docrep/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace docrep {

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, ParameterSet<T>& params, Rng& rng, double init_std) : cfg_(cfg) {
  cfg.validate();
  const int d = cfg.hidden, ff = cfg.feed_forward;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string base = "encoder.layer" + std::to_string(l);
    const std::string group = base;
    Layer layer;
    layer.ln1_gain = params.ones(base + ".ln1.gain", group, {d});
    layer.ln1_bias = params.zeros(base + ".ln1.bias", group, {d});
    layer.wq = params.normal(base + ".attn.wq", group, {d, d}, init_std, rng);
    layer.bq = params.zeros(base + ".attn.bq", group, {d});
    layer.wk = params.normal(base + ".attn.wk", group, {d, d}, init_std, rng);
    layer.bk = params.zeros(base + ".attn.bk", group, {d});
    layer.wv = params.normal(base + ".attn.wv", group, {d, d}, 1.0 / std::sqrt(d), rng);
    layer.bv = params.zeros(base + ".attn.bv", group, {d});
    layer.wo = params.normal(base + ".attn.wo", group, {d, d}, 1.0 / std::sqrt(d), rng);
    layer.bo = params.zeros(base + ".attn.bo", group, {d});
    layer.ln2_gain = params.ones(base + ".ln2.gain", group, {d});
    layer.ln2_bias = params.zeros(base + ".ln2.bias", group, {d});
    layer.w1 = params.normal(base + ".ffn.w1", group, {d, ff}, 1.0 / std::sqrt(d), rng);
    layer.b1 = params.zeros(base + ".ffn.b1", group, {ff});
    layer.w2 = params.normal(base + ".ffn.w2", group, {ff, d}, 1.0 / std::sqrt(ff), rng);
    layer.b2 = params.zeros(base + ".ffn.b2", group, {d});
    layers_.push_back(std::move(layer));
  }
  final_gain_ = params.ones("encoder.final_ln.gain", "encoder.final_ln", {d});
  final_bias_ = params.zeros("encoder.final_ln.bias", "encoder.final_ln", {d});
}

template <typename T>
Var<T> Encoder<T>::encode(const Var<T>& embeddings, const std::vector<std::uint8_t>& attention_mask,
                          const std::vector<std::uint8_t>& global_mask, ops::AttentionStats* stats) const {
  const auto S = embeddings.shape().at(0);
  if (embeddings.shape().size() != 2 || embeddings.shape()[1] != cfg_.hidden)
    throw std::invalid_argument("encoder input must be [S, " + std::to_string(cfg_.hidden) + "], got " + shape_str(embeddings.shape()));
  if (static_cast<std::int64_t>(attention_mask.size()) != S || static_cast<std::int64_t>(global_mask.size()) != S)
    throw std::invalid_argument("encoder mask length mismatch");
  Var<T> x = embeddings;
  for (const auto& L : layers_) {
    auto h = ops::layer_norm(x, L.ln1_gain, L.ln1_bias);
    auto q = ops::linear(h, L.wq, L.bq);
    auto k = ops::linear(h, L.wk, L.bk);
    auto v = ops::linear(h, L.wv, L.bv);
    auto attn = ops::windowed_attention(q, k, v, cfg_.heads, cfg_.window, attention_mask, global_mask, stats);
    x = ops::add(x, ops::linear(attn, L.wo, L.bo));
    auto f = ops::layer_norm(x, L.ln2_gain, L.ln2_bias);
    f = ops::linear(ops::gelu(ops::linear(f, L.w1, L.b1)), L.w2, L.b2);
    x = ops::add(x, f);
  }
  x = ops::layer_norm(x, final_gain_, final_bias_);
  return ops::mask_rows(x, attention_mask);
}

std::vector<std::int64_t> memory_probe(const std::vector<std::int64_t>& seq_lens, int window, std::int64_t num_global) {
  std::vector<std::int64_t> out;
  out.reserve(seq_lens.size());
  for (auto s : seq_lens) out.push_back(ops::attention_score_slots(s, window, std::min(num_global, s)));
  return out;
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace docrep
