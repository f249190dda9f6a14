#include "gparam/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace gparam {

namespace {
void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

Mhsa::Mhsa(Rng& rng, AttentionConfig cfg_, Dtype dt) : cfg(cfg_) {
  require(cfg.heads >= 1 && cfg.dim % cfg.heads == 0,
          "Mhsa: head count " + std::to_string(cfg.heads) + " must divide dim " +
              std::to_string(cfg.dim));
  wq = Linear(rng, cfg.dim, cfg.dim, dt);
  wk = Linear(rng, cfg.dim, cfg.dim, dt);
  wv = Linear(rng, cfg.dim, cfg.dim, dt);
  wo = Linear(rng, cfg.dim, cfg.dim, dt);
}

namespace {

Tensor attention_core(Tape& tp, const AttentionConfig& cfg, const Tensor& q, const Tensor& k,
                      const Tensor& v, const Tensor& mask, const Linear& wo) {
  int64_t dh = cfg.head_dim();
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> ctx;
  ctx.reserve(static_cast<size_t>(cfg.heads));
  for (int64_t h = 0; h < cfg.heads; ++h) {
    Tensor qh = slice(tp, q, 1, h * dh, dh);
    Tensor kh = slice(tp, k, 1, h * dh, dh);
    Tensor vh = slice(tp, v, 1, h * dh, dh);
    Tensor scores = scale(tp, matmul_nt(tp, qh, kh), inv_sqrt);
    if (mask.defined()) scores = add(tp, scores, mask);
    Tensor att = softmax_lastdim(tp, scores);
    ctx.push_back(matmul(tp, att, vh));
  }
  Tensor merged = cfg.heads == 1 ? ctx[0] : concat(tp, ctx, 1);
  return wo.forward(tp, merged);
}

}  // namespace

Tensor Mhsa::forward(Tape& tp, const Tensor& tokens, const Tensor& mask) const {
  require(tokens.ndim() == 2 && tokens.dim(1) == cfg.dim,
          "mhsa: tokens " + shape_str(tokens.shape()) + " do not match dim " +
              std::to_string(cfg.dim));
  if (mask.defined())
    require(mask.ndim() == 2 && mask.dim(0) == tokens.dim(0) && mask.dim(1) == tokens.dim(0),
            "mhsa: mask shape " + shape_str(mask.shape()) + " does not match L = " +
                std::to_string(tokens.dim(0)));
  Tensor q = wq.forward(tp, tokens);
  Tensor k = wk.forward(tp, tokens);
  Tensor v = wv.forward(tp, tokens);
  return attention_core(tp, cfg, q, k, v, mask, wo);
}

Tensor Mhsa::forward_cross(Tape& tp, const Tensor& q_tokens, const Tensor& kv_tokens) const {
  require(q_tokens.ndim() == 2 && q_tokens.dim(1) == cfg.dim &&
              kv_tokens.ndim() == 2 && kv_tokens.dim(1) == cfg.dim,
          "mhsa cross: shape mismatch " + shape_str(q_tokens.shape()) + " vs " +
              shape_str(kv_tokens.shape()));
  Tensor q = wq.forward(tp, q_tokens);
  Tensor k = wk.forward(tp, kv_tokens);
  Tensor v = wv.forward(tp, kv_tokens);
  return attention_core(tp, cfg, q, k, v, Tensor(), wo);
}

void Mhsa::collect(const std::string& prefix, ParamList& out) const {
  wq.collect(prefix + "wq.", out);
  wk.collect(prefix + "wk.", out);
  wv.collect(prefix + "wv.", out);
  wo.collect(prefix + "wo.", out);
}

EncoderBlock::EncoderBlock(Rng& rng, AttentionConfig cfg_, Dtype dt)
    : cfg(cfg_),
      ln1(cfg_.dim, dt),
      ln2(cfg_.dim, dt),
      attn(rng, cfg_, dt),
      ffn1(rng, cfg_.dim, cfg_.ffn_expand * cfg_.dim, dt),
      ffn2(rng, cfg_.ffn_expand * cfg_.dim, cfg_.dim, dt) {}

Tensor EncoderBlock::forward(Tape& tp, const Tensor& x, const Tensor& mask) const {
  Tensor h = add(tp, x, attn.forward(tp, ln1.forward(tp, x), mask));
  Tensor f = ffn2.forward(tp, silu(tp, ffn1.forward(tp, ln2.forward(tp, h))));
  return add(tp, h, f);
}

void EncoderBlock::collect(const std::string& prefix, ParamList& out) const {
  ln1.collect(prefix + "ln1.", out);
  attn.collect(prefix + "attn.", out);
  ln2.collect(prefix + "ln2.", out);
  ffn1.collect(prefix + "ffn1.", out);
  ffn2.collect(prefix + "ffn2.", out);
}

DecoderBlock::DecoderBlock(Rng& rng, AttentionConfig cfg_, Dtype dt)
    : cfg(cfg_),
      ln_self(cfg_.dim, dt),
      ln_cross(cfg_.dim, dt),
      ln_ffn(cfg_.dim, dt),
      self_attn(rng, cfg_, dt),
      cross_attn(rng, cfg_, dt),
      ffn1(rng, cfg_.dim, cfg_.ffn_expand * cfg_.dim, dt),
      ffn2(rng, cfg_.ffn_expand * cfg_.dim, cfg_.dim, dt) {}

Tensor DecoderBlock::forward(Tape& tp, const Tensor& queries, const Tensor& memory) const {
  Tensor h = add(tp, queries, self_attn.forward(tp, ln_self.forward(tp, queries)));
  h = add(tp, h, cross_attn.forward_cross(tp, ln_cross.forward(tp, h), memory));
  Tensor f = ffn2.forward(tp, silu(tp, ffn1.forward(tp, ln_ffn.forward(tp, h))));
  return add(tp, h, f);
}

void DecoderBlock::collect(const std::string& prefix, ParamList& out) const {
  ln_self.collect(prefix + "ln_self.", out);
  self_attn.collect(prefix + "self_attn.", out);
  ln_cross.collect(prefix + "ln_cross.", out);
  cross_attn.collect(prefix + "cross_attn.", out);
  ln_ffn.collect(prefix + "ln_ffn.", out);
  ffn1.collect(prefix + "ffn1.", out);
  ffn2.collect(prefix + "ffn2.", out);
}

}  // namespace gparam
