#pragma once

#include "gparam/nn.hpp"
#include "gparam/tensor.hpp"

namespace gparam {

struct AttentionConfig {
  int64_t dim = 64;
  int64_t heads = 4;
  int64_t ffn_expand = 4;  // hidden = ffn_expand * dim

  int64_t head_dim() const { return dim / heads; }
};

// Multi-head scaled dot-product self-attention. No positional encoding here:
// the block is permutation-equivariant; spatial identity comes from learned
// positional embeddings added upstream. Optional additive mask [L,L].
struct Mhsa {
  AttentionConfig cfg;
  Linear wq, wk, wv, wo;

  Mhsa() = default;
  Mhsa(Rng& rng, AttentionConfig cfg, Dtype dt);
  Tensor forward(Tape& tp, const Tensor& tokens, const Tensor& mask = Tensor()) const;
  // Cross-attention with the same weights: queries from q_tokens, keys and
  // values from kv_tokens.
  Tensor forward_cross(Tape& tp, const Tensor& q_tokens, const Tensor& kv_tokens) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Pre-norm residual encoder block: x + mhsa(LN(x)), then x + FFN(LN(x)).
struct EncoderBlock {
  AttentionConfig cfg;
  LayerNorm ln1, ln2;
  Mhsa attn;
  Linear ffn1, ffn2;

  EncoderBlock() = default;
  EncoderBlock(Rng& rng, AttentionConfig cfg, Dtype dt);
  Tensor forward(Tape& tp, const Tensor& x, const Tensor& mask = Tensor()) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Pre-norm decoder block for chunked action decoding: self-attention over the
// queries, cross-attention into encoder memory, then FFN, all residual.
struct DecoderBlock {
  AttentionConfig cfg;
  LayerNorm ln_self, ln_cross, ln_ffn;
  Mhsa self_attn, cross_attn;
  Linear ffn1, ffn2;

  DecoderBlock() = default;
  DecoderBlock(Rng& rng, AttentionConfig cfg, Dtype dt);
  Tensor forward(Tape& tp, const Tensor& queries, const Tensor& memory) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace gparam
