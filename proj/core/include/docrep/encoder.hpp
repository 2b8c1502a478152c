#pragma once

#include <cstdint>
#include <vector>

#include "docrep/config.hpp"
#include "docrep/ops.hpp"
#include "docrep/parameters.hpp"

namespace docrep {

/// Pre-layer-norm transformer stack with sliding-window + global attention.
template <typename T>
class Encoder {
 public:
  struct Layer {
    Var<T> ln1_gain, ln1_bias;
    Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Var<T> ln2_gain, ln2_bias;
    Var<T> w1, b1, w2, b2;
  };

  Encoder() = default;
  Encoder(const EncoderConfig& cfg, ParameterSet<T>& params, Rng& rng, double init_std);

  /// Hidden states [S, d]; rows with attention_mask == 0 are zero.
  Var<T> encode(const Var<T>& embeddings, const std::vector<std::uint8_t>& attention_mask,
                const std::vector<std::uint8_t>& global_mask, ops::AttentionStats* stats = nullptr) const;

  const EncoderConfig& config() const { return cfg_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Var<T>& final_gain() const { return final_gain_; }
  const Var<T>& final_bias() const { return final_bias_; }

 private:
  EncoderConfig cfg_;
  std::vector<Layer> layers_;
  Var<T> final_gain_, final_bias_;
};

/// Score-buffer slots per head and layer for each sequence length, at a
/// fixed window and global-token count.
std::vector<std::int64_t> memory_probe(const std::vector<std::int64_t>& seq_lens, int window, std::int64_t num_global = 1);

}  // namespace docrep
