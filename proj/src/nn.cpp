#include "gparam/nn.hpp"

#include <cmath>

namespace gparam {

Tensor init_uniform_fanin(Rng& rng, Shape shape, int64_t fan_in, Dtype dt) {
  Tensor t = Tensor::zeros(std::move(shape), dt, true);
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-bound, bound));
  return t;
}

Linear::Linear(Rng& rng, int64_t in, int64_t out, Dtype dt, bool bias) {
  w = init_uniform_fanin(rng, {out, in}, in, dt);
  if (bias) b = init_uniform_fanin(rng, {out}, in, dt);
}

Tensor Linear::forward(Tape& tp, const Tensor& x) const {
  Tensor y = matmul_nt(tp, x, w);
  if (b.defined()) y = add_rowwise(tp, y, b);
  return y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + "w", w);
  if (b.defined()) out.emplace_back(prefix + "b", b);
}

Mlp::Mlp(Rng& rng, int64_t in, int64_t hidden, int64_t out, Dtype dt)
    : fc1(rng, in, hidden, dt), fc2(rng, hidden, out, dt) {}

Tensor Mlp::forward(Tape& tp, const Tensor& x) const {
  return fc2.forward(tp, silu(tp, fc1.forward(tp, x)));
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + "fc1.", out);
  fc2.collect(prefix + "fc2.", out);
}

LayerNorm::LayerNorm(int64_t d, Dtype dt) {
  gain = Tensor::full({d}, dt, 1.0);
  gain.set_requires_grad(true);
  bias = Tensor::zeros({d}, dt, true);
}

Tensor LayerNorm::forward(Tape& tp, const Tensor& x) const {
  return layer_norm(tp, x, gain, bias);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + "gain", gain);
  out.emplace_back(prefix + "bias", bias);
}

Conv2d::Conv2d(Rng& rng, int64_t ci, int64_t co, int64_t k, int stride_, int pad_, Dtype dt)
    : stride(stride_), pad(pad_) {
  int64_t fan_in = ci * k * k;
  w = init_uniform_fanin(rng, {co, ci, k, k}, fan_in, dt);
  b = init_uniform_fanin(rng, {co}, fan_in, dt);
}

Tensor Conv2d::forward(Tape& tp, const Tensor& x) const {
  return conv2d(tp, x, w, b, stride, pad);
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + "w", w);
  out.emplace_back(prefix + "b", b);
}

void set_requires_grad(ParamList& params, bool v) {
  for (auto& [name, t] : params) t.set_requires_grad(v);
}

}  // namespace gparam
