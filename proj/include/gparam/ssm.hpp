#pragma once

#include <utility>

#include "gparam/nn.hpp"
#include "gparam/tensor.hpp"

namespace gparam {

// Shapes throughout: L = sequence length, C = channels, S = state size.
// The state matrix is diagonal: a [C,S] holds its entries per channel.

// z[t,c,s] = delta[t,c] * a[c,s]
Tensor dt_a_product(Tape& tp, const Tensor& delta, const Tensor& a);
// z[t,c,s] = u[t,c] * b[t,s]
Tensor token_state_outer(Tape& tp, const Tensor& u, const Tensor& b);
// z[t,c,s] = m[t,c,s] * x[t,c]
Tensor mul_bcast_tc(Tape& tp, const Tensor& m, const Tensor& x);
// y[t,c] = sum_s h[t,c,s] * c[t,s]
Tensor state_contract(Tape& tp, const Tensor& h, const Tensor& c);

// h_t = a_t * h_{t-1} + b_t along axis 0, elementwise over the rest.
// h0 is the initial state (undefined = zeros). Accumulation is in double for
// both dtypes so the two evaluation orders agree tightly.
Tensor scan_linear(Tape& tp, const Tensor& a, const Tensor& b, const Tensor& h0 = Tensor());
// Same recurrence evaluated as a blocked up-sweep/down-sweep under the
// associative composition (a2,b2)∘(a1,b1) = (a2*a1, a2*b1 + b2), with a fixed
// block size so results are reproducible.
Tensor scan_linear_blocked(Tape& tp, const Tensor& a, const Tensor& b,
                           const Tensor& h0 = Tensor());

// Zero-order-hold discretization of the diagonal continuous pair (A,B) with
// per-token step sizes: abar = exp(delta*A), bbar = (exp(delta*A)-1)/A * B,
// with the Taylor limit bbar = delta*B*(1 + delta*A/2) for |delta*A| < 1e-6.
// a [C,S], b [L,S], delta [L,C] (must be strictly positive) -> [L,C,S] each.
std::pair<Tensor, Tensor> zoh_discretize(Tape& tp, const Tensor& a, const Tensor& b,
                                         const Tensor& delta);

// Recurrence h_t = abar_t ⊙ h_{t-1} + bbar_t ⊙ x_t, output y_t[c] =
// Σ_s c_t[s] h_t[c,s]. abar/bbar [L,C,S], c [L,S], x [L,C], optional initial
// state h0 [C,S] (defaults to zero).
Tensor scan_sequential(Tape& tp, const Tensor& abar, const Tensor& bbar, const Tensor& c,
                       const Tensor& x, const Tensor& h0 = Tensor());
Tensor scan_parallel(Tape& tp, const Tensor& abar, const Tensor& bbar, const Tensor& c,
                     const Tensor& x, const Tensor& h0 = Tensor());

// Token-dependent selection: step size via a low-rank projection + bias under
// softplus (strictly positive), plus per-token input/output state maps.
struct Selection {
  int64_t d_state = 16;
  int64_t rank = 1;
  Linear x_proj;   // d_inner -> rank + 2*d_state, bias-free
  Linear dt_proj;  // rank -> d_inner; bias set so initial delta spans [1e-3, 0.1]

  Selection() = default;
  Selection(Rng& rng, int64_t d_inner, int64_t d_state, int64_t rank, Dtype dt);
  struct Maps {
    Tensor delta;  // [L, d_inner]
    Tensor b;      // [L, d_state]
    Tensor c;      // [L, d_state]
  };
  Maps forward(Tape& tp, const Tensor& u) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct MambaConfig {
  int64_t dim = 64;
  int64_t d_state = 16;
  int64_t expand = 2;
  int64_t conv_k = 4;
  int64_t dt_rank = 0;  // 0 = max(1, dim/16)
  bool parallel_scan = true;

  int64_t d_inner() const { return dim * expand; }
  int64_t rank() const { return dt_rank > 0 ? dt_rank : std::max<int64_t>(1, dim / 16); }
};

// Gated selective-state-space block. The scan branch is causal conv -> SiLU
// -> input-dependent (delta, B, C) -> ZOH -> linear recurrence; the gate
// branch is SiLU; outputs are multiplied and projected back to dim. The
// caller adds the residual.
struct MambaBlock {
  MambaConfig cfg;
  Linear in_proj;       // dim -> 2*d_inner, bias-free
  Tensor conv_w;        // [d_inner, conv_k]
  Tensor conv_b;        // [d_inner]
  Selection selection;  // token-dependent (delta, B, C)
  Tensor a_log;         // [d_inner, d_state]; A = -exp(a_log) stays strictly negative
  Linear out_proj;      // d_inner -> dim, bias-free

  MambaBlock() = default;
  MambaBlock(Rng& rng, MambaConfig cfg, Dtype dt);
  Tensor forward(Tape& tp, const Tensor& x) const;  // x [L,dim] -> [L,dim]
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace gparam
