#include "gparam/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gparam {

const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }
size_t dtype_size(Dtype dt) { return dt == Dtype::f32 ? 4 : 8; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

static std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, Dtype dt) {
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension in " + shape_str(shape));
  }
  auto p = std::make_shared<detail::TensorImpl>();
  p->numel = shape_numel(shape);
  p->shape = std::move(shape);
  p->dtype = dt;
  if (dt == Dtype::f32)
    p->data_f.assign(static_cast<size_t>(p->numel), 0.0f);
  else
    p->data_d.assign(static_cast<size_t>(p->numel), 0.0);
  return p;
}

Tensor Tensor::zeros(Shape shape, Dtype dt, bool requires_grad) {
  Tensor t;
  t.p_ = make_impl(std::move(shape), dt);
  t.p_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, Dtype dt, double value) {
  Tensor t = zeros(std::move(shape), dt, false);
  if (dt == Dtype::f32)
    for (auto& v : t.p_->data_f) v = static_cast<float>(value);
  else
    for (auto& v : t.p_->data_d) v = value;
  return t;
}

Tensor Tensor::scalar(Dtype dt, double value) { return full({}, dt, value); }

Tensor Tensor::from_values(Shape shape, std::span<const double> values, Dtype dt) {
  Tensor t = zeros(std::move(shape), dt, false);
  if (t.numel() != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("Tensor::from_values: " + shape_str(t.shape()) + " needs " +
                                std::to_string(t.numel()) + " values, got " +
                                std::to_string(values.size()));
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, values[static_cast<size_t>(i)]);
  return t;
}

template <>
std::span<float> Tensor::vals<float>() const {
  return {p_->data_f.data(), p_->data_f.size()};
}
template <>
std::span<double> Tensor::vals<double>() const {
  return {p_->data_d.data(), p_->data_d.size()};
}

template <>
std::span<float> Tensor::grad<float>() const {
  if (p_->grad_f.empty()) p_->grad_f.assign(p_->data_f.size(), 0.0f);
  return {p_->grad_f.data(), p_->grad_f.size()};
}
template <>
std::span<double> Tensor::grad<double>() const {
  if (p_->grad_d.empty()) p_->grad_d.assign(p_->data_d.size(), 0.0);
  return {p_->grad_d.data(), p_->grad_d.size()};
}

bool Tensor::grad_allocated() const { return !p_->grad_f.empty() || !p_->grad_d.empty(); }

void Tensor::zero_grad() const {
  for (auto& g : p_->grad_f) g = 0.0f;
  for (auto& g : p_->grad_d) g = 0.0;
}

double Tensor::at(int64_t i) const {
  return p_->dtype == Dtype::f32 ? static_cast<double>(p_->data_f[static_cast<size_t>(i)])
                                 : p_->data_d[static_cast<size_t>(i)];
}

void Tensor::set(int64_t i, double v) const {
  if (p_->dtype == Dtype::f32)
    p_->data_f[static_cast<size_t>(i)] = static_cast<float>(v);
  else
    p_->data_d[static_cast<size_t>(i)] = v;
}

Tensor Tensor::clone() const {
  Tensor t = zeros(shape(), dtype(), requires_grad());
  t.p_->data_f = p_->data_f;
  t.p_->data_d = p_->data_d;
  return t;
}

Tensor Tensor::detached() const {
  Tensor t = clone();
  t.set_requires_grad(false);
  return t;
}

Tensor Tensor::astype(Dtype dt) const {
  if (dt == dtype()) return detached();
  Tensor t = zeros(shape(), dt, false);
  for (int64_t i = 0; i < numel(); ++i) t.set(i, at(i));
  return t;
}

std::vector<double> Tensor::to_doubles() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (int64_t i = 0; i < numel(); ++i) out[static_cast<size_t>(i)] = at(i);
  return out;
}

void Tensor::copy_values_from(const Tensor& src) const {
  if (src.numel() != numel())
    throw std::invalid_argument("copy_values_from: size mismatch " + shape_str(src.shape()) +
                                " vs " + shape_str(shape()));
  if (src.dtype() == dtype()) {
    p_->data_f = src.p_->data_f;
    p_->data_d = src.p_->data_d;
  } else {
    for (int64_t i = 0; i < numel(); ++i) set(i, src.at(i));
  }
}

void Tape::touch(const Tensor& t) {
  if (touched_set_.insert(t.impl()).second) touched_.push_back(t.impl_ptr());
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss does not require grad");

  // Stash pre-existing gradients so this pass computes its own contribution
  // from a clean slate, then fold the stash back in. This makes repeated
  // backward calls accumulate exactly.
  std::vector<std::vector<float>> stash_f(touched_.size());
  std::vector<std::vector<double>> stash_d(touched_.size());
  for (size_t i = 0; i < touched_.size(); ++i) {
    stash_f[i].swap(touched_[i]->grad_f);
    stash_d[i].swap(touched_[i]->grad_d);
  }

  Tensor l = loss;  // non-const handle for grad access
  if (loss.dtype() == Dtype::f32)
    l.grad<float>()[0] = 1.0f;
  else
    l.grad<double>()[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();

  for (size_t i = 0; i < touched_.size(); ++i) {
    auto& impl = *touched_[i];
    if (!stash_f[i].empty()) {
      if (impl.grad_f.empty()) impl.grad_f.swap(stash_f[i]);
      else
        for (size_t j = 0; j < impl.grad_f.size(); ++j) impl.grad_f[j] += stash_f[i][j];
    }
    if (!stash_d[i].empty()) {
      if (impl.grad_d.empty()) impl.grad_d.swap(stash_d[i]);
      else
        for (size_t j = 0; j < impl.grad_d.size(); ++j) impl.grad_d[j] += stash_d[i][j];
    }
  }
}

GradCheckReport grad_check(const std::function<Tensor(Tape&, const Tensor&)>& fn,
                           const Tensor& input, double eps) {
  if (input.dtype() != Dtype::f64)
    throw std::invalid_argument("grad_check: input must be f64");

  Tensor x = input.clone();
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = fn(tape, x);
  if (loss.numel() != 1) throw std::invalid_argument("grad_check: fn must return a scalar");
  tape.backward(loss);
  std::vector<double> analytic(x.grad<double>().begin(), x.grad<double>().end());

  GradCheckReport rep;
  rep.elements = x.numel();
  Tensor probe = input.clone();
  probe.set_requires_grad(false);
  auto pv = probe.vals<double>();
  for (int64_t i = 0; i < probe.numel(); ++i) {
    double orig = pv[static_cast<size_t>(i)];
    pv[static_cast<size_t>(i)] = orig + eps;
    Tape t1(false);
    double fp = fn(t1, probe).at(0);
    pv[static_cast<size_t>(i)] = orig - eps;
    Tape t2(false);
    double fm = fn(t2, probe).at(0);
    pv[static_cast<size_t>(i)] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double a = analytic[static_cast<size_t>(i)];
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    double rel = std::fabs(a - numeric) / denom;
    if (rel > rep.max_rel_err) rep.max_rel_err = rel;
  }
  return rep;
}

GradCheckReport grad_check_param(const std::function<Tensor(Tape&)>& fn, const Tensor& param,
                                 double eps) {
  if (param.dtype() != Dtype::f64)
    throw std::invalid_argument("grad_check_param: param must be f64");
  if (!param.requires_grad())
    throw std::invalid_argument("grad_check_param: param must require grad");

  param.zero_grad();
  {
    Tape tape;
    Tensor loss = fn(tape);
    if (loss.numel() != 1)
      throw std::invalid_argument("grad_check_param: fn must return a scalar");
    tape.backward(loss);
  }
  std::vector<double> analytic(param.grad<double>().begin(), param.grad<double>().end());
  param.zero_grad();

  GradCheckReport rep;
  rep.elements = param.numel();
  auto pv = param.vals<double>();
  for (int64_t i = 0; i < param.numel(); ++i) {
    double orig = pv[static_cast<size_t>(i)];
    pv[static_cast<size_t>(i)] = orig + eps;
    Tape t1(false);
    double fp = fn(t1).at(0);
    pv[static_cast<size_t>(i)] = orig - eps;
    Tape t2(false);
    double fm = fn(t2).at(0);
    pv[static_cast<size_t>(i)] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double a = analytic[static_cast<size_t>(i)];
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    double rel = std::fabs(a - numeric) / denom;
    if (rel > rep.max_rel_err) rep.max_rel_err = rel;
  }
  return rep;
}

double cosine_lr(double lr_max, double lr_min, double epoch, double total_epochs) {
  if (total_epochs <= 0) throw std::invalid_argument("cosine_lr: total_epochs must be positive");
  double t = epoch / total_epochs;
  if (t < 0) t = 0;
  if (t > 1) t = 1;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0);
    v_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step(double lr) {
  ++step_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      double g;
      if (p.dtype() == Dtype::f32) {
        g = p.grad_allocated() ? static_cast<double>(p.grad<float>()[static_cast<size_t>(i)]) : 0.0;
      } else {
        g = p.grad_allocated() ? p.grad<double>()[static_cast<size_t>(i)] : 0.0;
      }
      if (!std::isfinite(g))
        throw std::runtime_error("Adam::step: non-finite gradient at param " +
                                 std::to_string(pi) + " elem " + std::to_string(i));
      auto& m = m_[pi][static_cast<size_t>(i)];
      auto& v = v_[pi][static_cast<size_t>(i)];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      double update = lr * (m / bc1) / (std::sqrt(v / bc2) + eps_);
      p.set(i, p.at(i) - update);
    }
  }
}

}  // namespace gparam
