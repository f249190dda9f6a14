#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace gparam {

// Runtime element type. f32 is the training dtype; f64 exists for gradient
// checking and numeric oracles.
enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

const char* dtype_name(Dtype dt);
size_t dtype_size(Dtype dt);

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl {
  Shape shape;
  int64_t numel = 0;
  Dtype dtype = Dtype::f32;
  bool requires_grad = false;
  std::vector<float> data_f;
  std::vector<double> data_d;
  std::vector<float> grad_f;   // allocated lazily, zero-filled
  std::vector<double> grad_d;
};

}  // namespace detail

// Shared-ownership handle over a dense row-major buffer. Copying a Tensor
// aliases the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dt, bool requires_grad = false);
  static Tensor full(Shape shape, Dtype dt, double value);
  static Tensor scalar(Dtype dt, double value);  // shape []
  static Tensor from_values(Shape shape, std::span<const double> values, Dtype dt);

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  int64_t numel() const { return p_->numel; }
  int ndim() const { return static_cast<int>(p_->shape.size()); }
  int64_t dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
  Dtype dtype() const { return p_->dtype; }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool v) const { p_->requires_grad = v; }

  // Tensor is a shared handle: value/grad access is shallow-const, like the
  // rest of the mutating surface, so closures can capture tensors by value.
  template <class T>
  std::span<T> vals() const;

  // Gradient buffer of matching dtype; allocated (zeroed) on first access.
  template <class T>
  std::span<T> grad() const;
  bool grad_allocated() const;
  void zero_grad() const;

  // dtype-agnostic element access, for tests and host-side glue. Not for
  // inner loops.
  double at(int64_t i) const;
  void set(int64_t i, double v) const;

  Tensor clone() const;                 // deep copy, keeps requires_grad
  Tensor detached() const;              // deep copy, requires_grad = false
  Tensor astype(Dtype dt) const;        // deep converting copy, no grad
  std::vector<double> to_doubles() const;
  void copy_values_from(const Tensor& src) const;  // numel+dtype-compatible

  detail::TensorImpl* impl() const { return p_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return p_; }

 private:
  std::shared_ptr<detail::TensorImpl> p_;
};

// Reverse-mode tape. Ops append backward closures in forward order;
// backward() replays them in reverse. Gradients accumulate additively into
// persistent per-tensor buffers: each backward() pass computes its own
// contribution in isolation and then adds it, so calling backward twice
// doubles every gradient.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }
  void touch(const Tensor& t);
  void backward(const Tensor& loss);
  size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<std::shared_ptr<detail::TensorImpl>> touched_;
  std::unordered_set<detail::TensorImpl*> touched_set_;
  bool grad_enabled_ = true;
};

// ---- element-wise and arithmetic ops ------------------------------------

Tensor add(Tape& tp, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tp, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tp, const Tensor& a, const Tensor& b);
Tensor add_rowwise(Tape& tp, const Tensor& x, const Tensor& bias);  // [...,D]+[D]
Tensor scale(Tape& tp, const Tensor& a, double c);
Tensor add_scalar(Tape& tp, const Tensor& a, double c);

Tensor relu(Tape& tp, const Tensor& a);
Tensor silu(Tape& tp, const Tensor& a);
Tensor sigmoid(Tape& tp, const Tensor& a);
Tensor softplus(Tape& tp, const Tensor& a);
Tensor log(Tape& tp, const Tensor& a);  // natural log; domain errors surface as non-finite values
Tensor exp(Tape& tp, const Tensor& a);
// (e^x - 1) / x with the Taylor limit 1 + x/2 for |x| < 1e-6; the factor that
// turns a zero-order-hold step into the discretized input matrix.
Tensor expm1_over_x(Tape& tp, const Tensor& a);

// ---- linear algebra ------------------------------------------------------

Tensor matmul(Tape& tp, const Tensor& a, const Tensor& b);     // [M,K]x[K,N]
Tensor matmul_nt(Tape& tp, const Tensor& a, const Tensor& b);  // [M,K]x[N,K]^T
Tensor transpose2d(Tape& tp, const Tensor& a);

// ---- shape ops -----------------------------------------------------------

Tensor reshape(Tape& tp, const Tensor& a, Shape shape);
Tensor concat(Tape& tp, std::span<const Tensor> parts, int axis);
Tensor slice(Tape& tp, const Tensor& a, int axis, int64_t start, int64_t len);
Tensor stop_gradient(const Tensor& a);  // detached alias-free copy

// ---- reductions ----------------------------------------------------------

Tensor sum_all(Tape& tp, const Tensor& a);   // -> scalar []
Tensor mean_all(Tape& tp, const Tensor& a);  // -> scalar []
Tensor mean_axis0(Tape& tp, const Tensor& a);  // [T,D] -> [D]

// ---- neural-net ops --------------------------------------------------------

Tensor softmax_lastdim(Tape& tp, const Tensor& a);
Tensor log_softmax_lastdim(Tape& tp, const Tensor& a);
Tensor layer_norm(Tape& tp, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// x [Ci,H,W], w [Co,Ci,kh,kw], bias [Co] (or undefined for none).
Tensor conv2d(Tape& tp, const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int pad);
// Depthwise causal conv over axis 0 of x [L,C]; w [C,k], bias [C].
Tensor conv1d_depthwise_causal(Tape& tp, const Tensor& x, const Tensor& w,
                               const Tensor& bias);
Tensor bilinear_upsample2d(Tape& tp, const Tensor& x, int factor);  // [C,h,w]
Tensor embedding(Tape& tp, const Tensor& table, std::span<const int> idx);

// ---- gradient checking -----------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t elements = 0;
};

// Central differences on an f64 input against the tape gradient. fn must map
// the input to a scalar loss using only tape ops.
GradCheckReport grad_check(const std::function<Tensor(Tape&, const Tensor&)>& fn,
                           const Tensor& input, double eps = 1e-5);

// Same, but for a parameter used inside a closed-over module: fn re-evaluates
// the loss with the parameter's current values, which are perturbed in place.
GradCheckReport grad_check_param(const std::function<Tensor(Tape&)>& fn, const Tensor& param,
                                 double eps = 1e-5);

// ---- optimizer ---------------------------------------------------------------

double cosine_lr(double lr_max, double lr_min, double epoch, double total_epochs);

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void zero_grad();
  // Applies one update from the accumulated gradients. Throws on non-finite
  // gradients so a diverging run fails loudly instead of training on NaNs.
  void step(double lr);
  int64_t step_count() const { return step_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  int64_t step_ = 0;
};

}  // namespace gparam
