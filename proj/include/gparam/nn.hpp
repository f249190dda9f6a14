#pragma once

#include <string>
#include <vector>

#include "gparam/checkpoint.hpp"
#include "gparam/rng.hpp"
#include "gparam/tensor.hpp"

namespace gparam {

// Weight init policy: fan-in-scaled uniform, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_uniform_fanin(Rng& rng, Shape shape, int64_t fan_in, Dtype dt);

// y = x W^T + b for x [T,in] -> [T,out].
struct Linear {
  Tensor w;  // [out,in]
  Tensor b;  // [out], undefined when bias-free
  Linear() = default;
  Linear(Rng& rng, int64_t in, int64_t out, Dtype dt, bool bias = true);
  Tensor forward(Tape& tp, const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Two-layer perceptron with SiLU hidden activation.
struct Mlp {
  Linear fc1, fc2;
  Mlp() = default;
  Mlp(Rng& rng, int64_t in, int64_t hidden, int64_t out, Dtype dt);
  Tensor forward(Tape& tp, const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gain, bias;  // [D]
  LayerNorm() = default;
  explicit LayerNorm(int64_t d, Dtype dt);
  Tensor forward(Tape& tp, const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv2d {
  Tensor w;  // [Co,Ci,k,k]
  Tensor b;  // [Co]
  int stride = 1, pad = 0;
  Conv2d() = default;
  Conv2d(Rng& rng, int64_t ci, int64_t co, int64_t k, int stride, int pad, Dtype dt);
  Tensor forward(Tape& tp, const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

void set_requires_grad(ParamList& params, bool v);

}  // namespace gparam
