#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gparam/tensor.hpp"

namespace gparam {

namespace {

template <class F>
void dispatch(Dtype dt, F&& f) {
  if (dt == Dtype::f32)
    f(float{});
  else
    f(double{});
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_binary(const char* op, const Tensor& a, const Tensor& b) {
  require(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) +
                                      " vs " + dtype_name(b.dtype()));
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

bool wants_grad(Tape& tp, std::initializer_list<const Tensor*> ins) {
  if (!tp.grad_enabled()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

void mark_and_touch(Tape& tp, std::initializer_list<const Tensor*> ins, Tensor& out) {
  out.set_requires_grad(true);
  for (const Tensor* t : ins) tp.touch(*t);
  tp.touch(out);
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[MxN] (+)= op(A) * op(B). Storage of A is [M,K] ([K,M] when transA); B is
// [K,N] ([N,K] when transB). Single-threaded Eigen keeps results
// deterministic.
template <class T>
void gemm(bool transA, bool transB, int64_t M, int64_t N, int64_t K, const T* A, const T* B,
          T* C, bool accumulate) {
  using CMap = Eigen::Map<RowMat<T>>;
  using CCMap = Eigen::Map<const RowMat<T>>;
  CMap c(C, M, N);
  auto run = [&](const auto& a, const auto& b) {
    if (accumulate)
      c.noalias() += a * b;
    else
      c.noalias() = a * b;
  };
  if (!transA && !transB)
    run(CCMap(A, M, K), CCMap(B, K, N));
  else if (transA && !transB)
    run(CCMap(A, K, M).transpose(), CCMap(B, K, N));
  else if (!transA && transB)
    run(CCMap(A, M, K), CCMap(B, N, K).transpose());
  else
    run(CCMap(A, K, M).transpose(), CCMap(B, N, K).transpose());
}

int64_t last_dim(const Tensor& t) {
  require(t.ndim() >= 1, "op requires ndim >= 1");
  return t.dim(t.ndim() - 1);
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const char* name, Tape& tp, const Tensor& a, Fwd fwd, Bwd dfd) {
  (void)name;
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>();
    auto ov = out.vals<T>();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = static_cast<T>(fwd(static_cast<double>(av[i])));
  });
  if (wants_grad(tp, {&a})) {
    mark_and_touch(tp, {&a}, out);
    tp.record([a, out, dfd]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto av = a.vals<T>();
        auto og = out.grad<T>();
        auto ag = a.grad<T>();
        for (size_t i = 0; i < av.size(); ++i)
          ag[i] += static_cast<T>(dfd(static_cast<double>(av[i])) * static_cast<double>(og[i]));
      });
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& tp, const Tensor& a, const Tensor& b) {
  check_binary("add", a, b);
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>(), bv = b.vals<T>();
    auto ov = out.vals<T>();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  });
  if (wants_grad(tp, {&a, &b})) {
    mark_and_touch(tp, {&a, &b}, out);
    tp.record([a, b, out]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        if (a.requires_grad()) {
          auto ag = a.grad<T>();
          for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
        }
        if (b.requires_grad()) {
          auto bg = b.grad<T>();
          for (size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
        }
      });
    });
  }
  return out;
}

Tensor sub(Tape& tp, const Tensor& a, const Tensor& b) {
  check_binary("sub", a, b);
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>(), bv = b.vals<T>();
    auto ov = out.vals<T>();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  });
  if (wants_grad(tp, {&a, &b})) {
    mark_and_touch(tp, {&a, &b}, out);
    tp.record([a, b, out]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        if (a.requires_grad()) {
          auto ag = a.grad<T>();
          for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
        }
        if (b.requires_grad()) {
          auto bg = b.grad<T>();
          for (size_t i = 0; i < og.size(); ++i) bg[i] -= og[i];
        }
      });
    });
  }
  return out;
}

Tensor mul(Tape& tp, const Tensor& a, const Tensor& b) {
  check_binary("mul", a, b);
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>(), bv = b.vals<T>();
    auto ov = out.vals<T>();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  });
  if (wants_grad(tp, {&a, &b})) {
    mark_and_touch(tp, {&a, &b}, out);
    tp.record([a, b, out]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        auto av = a.vals<T>(), bv = b.vals<T>();
        if (a.requires_grad()) {
          auto ag = a.grad<T>();
          for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * bv[i];
        }
        if (b.requires_grad()) {
          auto bg = b.grad<T>();
          for (size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * av[i];
        }
      });
    });
  }
  return out;
}

Tensor add_rowwise(Tape& tp, const Tensor& x, const Tensor& bias) {
  require(x.dtype() == bias.dtype(), "add_rowwise: dtype mismatch");
  require(bias.ndim() == 1, "add_rowwise: bias must be 1-d, got " + shape_str(bias.shape()));
  int64_t d = last_dim(x);
  require(d == bias.dim(0), "add_rowwise: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(bias.shape()));
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  int64_t rows = x.numel() / d;
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    auto xv = x.vals<T>();
    auto bv = bias.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j)
        ov[static_cast<size_t>(r * d + j)] = xv[static_cast<size_t>(r * d + j)] + bv[static_cast<size_t>(j)];
  });
  if (wants_grad(tp, {&x, &bias})) {
    mark_and_touch(tp, {&x, &bias}, out);
    tp.record([x, bias, out, rows, d]() mutable {
      dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        if (x.requires_grad()) {
          auto xg = x.grad<T>();
          for (size_t i = 0; i < og.size(); ++i) xg[i] += og[i];
        }
        if (bias.requires_grad()) {
          auto bg = bias.grad<T>();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j)
              bg[static_cast<size_t>(j)] += og[static_cast<size_t>(r * d + j)];
        }
      });
    });
  }
  return out;
}

Tensor scale(Tape& tp, const Tensor& a, double c) {
  return unary_op("scale", tp, a, [c](double v) { return c * v; }, [c](double) { return c; });
}

Tensor add_scalar(Tape& tp, const Tensor& a, double c) {
  return unary_op("add_scalar", tp, a, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

Tensor relu(Tape& tp, const Tensor& a) {
  return unary_op("relu", tp, a, [](double v) { return v > 0 ? v : 0.0; },
                  [](double v) { return v > 0 ? 1.0 : 0.0; });
}

namespace {
double sigmoid_stable(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(Tape& tp, const Tensor& a) {
  return unary_op("sigmoid", tp, a, sigmoid_stable, [](double v) {
    double s = sigmoid_stable(v);
    return s * (1.0 - s);
  });
}

Tensor silu(Tape& tp, const Tensor& a) {
  return unary_op("silu", tp, a, [](double v) { return v * sigmoid_stable(v); },
                  [](double v) {
                    double s = sigmoid_stable(v);
                    return s * (1.0 + v * (1.0 - s));
                  });
}

Tensor softplus(Tape& tp, const Tensor& a) {
  return unary_op("softplus", tp, a,
                  [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); },
                  sigmoid_stable);
}

Tensor exp(Tape& tp, const Tensor& a) {
  Tensor out = unary_op("exp", tp, a, [](double v) { return std::exp(v); },
                        [](double v) { return std::exp(v); });
  return out;
}

Tensor log(Tape& tp, const Tensor& a) {
  return unary_op("log", tp, a, [](double v) { return std::log(v); },
                  [](double v) { return 1.0 / v; });
}

Tensor expm1_over_x(Tape& tp, const Tensor& a) {
  auto fwd = [](double v) {
    if (std::fabs(v) < 1e-6) return 1.0 + 0.5 * v;  // Taylor limit near zero
    return std::expm1(v) / v;
  };
  auto der = [](double v) {
    // d/dx (e^x-1)/x = (e^x (x-1) + 1) / x^2; series near zero avoids the
    // catastrophic cancellation of the closed form.
    if (std::fabs(v) < 1e-3) return 0.5 + v / 3.0 + v * v / 8.0;
    return (std::exp(v) * (v - 1.0) + 1.0) / (v * v);
  };
  return unary_op("expm1_over_x", tp, a, fwd, der);
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(Tape& tp, const Tensor& a, const Tensor& b) {
  require(a.dtype() == b.dtype(), "matmul: dtype mismatch");
  require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
          "matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = Tensor::zeros({M, N}, a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    gemm<T>(false, false, M, N, K, a.vals<T>().data(), b.vals<T>().data(), out.vals<T>().data(),
            false);
  });
  if (wants_grad(tp, {&a, &b})) {
    mark_and_touch(tp, {&a, &b}, out);
    tp.record([a, b, out, M, N, K]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* og = out.grad<T>().data();
        if (a.requires_grad())
          gemm<T>(false, true, M, K, N, og, b.vals<T>().data(), a.grad<T>().data(), true);
        if (b.requires_grad())
          gemm<T>(true, false, K, N, M, a.vals<T>().data(), og, b.grad<T>().data(), true);
      });
    });
  }
  return out;
}

Tensor matmul_nt(Tape& tp, const Tensor& a, const Tensor& b) {
  require(a.dtype() == b.dtype(), "matmul_nt: dtype mismatch");
  require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(1),
          "matmul_nt: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
              "^T");
  int64_t M = a.dim(0), K = a.dim(1), N = b.dim(0);
  Tensor out = Tensor::zeros({M, N}, a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    gemm<T>(false, true, M, N, K, a.vals<T>().data(), b.vals<T>().data(), out.vals<T>().data(),
            false);
  });
  if (wants_grad(tp, {&a, &b})) {
    mark_and_touch(tp, {&a, &b}, out);
    tp.record([a, b, out, M, N, K]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* og = out.grad<T>().data();
        if (a.requires_grad())
          gemm<T>(false, false, M, K, N, og, b.vals<T>().data(), a.grad<T>().data(), true);
        if (b.requires_grad())
          gemm<T>(true, false, N, K, M, og, a.vals<T>().data(), b.grad<T>().data(), true);
      });
    });
  }
  return out;
}

Tensor transpose2d(Tape& tp, const Tensor& a) {
  require(a.ndim() == 2, "transpose2d: need 2-d, got " + shape_str(a.shape()));
  int64_t R = a.dim(0), C = a.dim(1);
  Tensor out = Tensor::zeros({C, R}, a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c) ov[static_cast<size_t>(c * R + r)] = av[static_cast<size_t>(r * C + c)];
  });
  if (wants_grad(tp, {&a})) {
    mark_and_touch(tp, {&a}, out);
    tp.record([a, out, R, C]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        auto ag = a.grad<T>();
        for (int64_t r = 0; r < R; ++r)
          for (int64_t c = 0; c < C; ++c)
            ag[static_cast<size_t>(r * C + c)] += og[static_cast<size_t>(c * R + r)];
      });
    });
  }
  return out;
}

// ---- shape ops -----------------------------------------------------------

Tensor reshape(Tape& tp, const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), "reshape: cannot view " + shape_str(a.shape()) +
                                               " as " + shape_str(shape));
  Tensor out = Tensor::zeros(std::move(shape), a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>();
    auto ov = out.vals<T>();
    std::copy(av.begin(), av.end(), ov.begin());
  });
  if (wants_grad(tp, {&a})) {
    mark_and_touch(tp, {&a}, out);
    tp.record([a, out]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        auto ag = a.grad<T>();
        for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
      });
    });
  }
  return out;
}

Tensor concat(Tape& tp, std::span<const Tensor> parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const Tensor& first = parts[0];
  int nd = first.ndim();
  require(axis >= 0 && axis < nd, "concat: axis out of range");
  Shape out_shape = first.shape();
  int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    require(p.dtype() == first.dtype(), "concat: dtype mismatch");
    require(p.ndim() == nd, "concat: rank mismatch " + shape_str(p.shape()) + " vs " +
                                shape_str(first.shape()));
    for (int i = 0; i < nd; ++i)
      if (i != axis)
        require(p.dim(i) == first.dim(i), "concat: shape mismatch " + shape_str(p.shape()) +
                                              " vs " + shape_str(first.shape()));
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;
  Tensor out = Tensor::zeros(out_shape, first.dtype());

  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= first.dim(i);
  int64_t inner = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= first.dim(i);
  int64_t out_row = axis_total * inner;

  std::vector<Tensor> held(parts.begin(), parts.end());
  dispatch(first.dtype(), [&](auto z) {
    using T = decltype(z);
    auto ov = out.vals<T>();
    int64_t off = 0;
    for (const Tensor& p : held) {
      int64_t prow = p.dim(axis) * inner;
      auto pv = p.vals<T>();
      for (int64_t o = 0; o < outer; ++o)
        std::copy_n(pv.data() + o * prow, prow, ov.data() + o * out_row + off);
      off += prow;
    }
  });

  bool any = false;
  for (const Tensor& p : held) any = any || p.requires_grad();
  if (tp.grad_enabled() && any) {
    out.set_requires_grad(true);
    for (const Tensor& p : held) tp.touch(p);
    tp.touch(out);
    tp.record([held, out, outer, inner, out_row, axis]() mutable {
      dispatch(out.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        int64_t off = 0;
        for (Tensor& p : held) {
          int64_t prow = p.dim(axis) * inner;
          if (p.requires_grad()) {
            auto pg = p.grad<T>();
            for (int64_t o = 0; o < outer; ++o)
              for (int64_t j = 0; j < prow; ++j)
                pg[static_cast<size_t>(o * prow + j)] += og[static_cast<size_t>(o * out_row + off + j)];
          }
          off += prow;
        }
      });
    });
  }
  return out;
}

Tensor slice(Tape& tp, const Tensor& a, int axis, int64_t start, int64_t len) {
  int nd = a.ndim();
  require(axis >= 0 && axis < nd, "slice: axis out of range");
  require(start >= 0 && len >= 0 && start + len <= a.dim(axis),
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") out of bounds for " + shape_str(a.shape()) + " axis " + std::to_string(axis));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out = Tensor::zeros(out_shape, a.dtype());

  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  int64_t inner = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);
  int64_t arow = a.dim(axis) * inner, orow = len * inner, off = start * inner;

  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(av.data() + o * arow + off, orow, ov.data() + o * orow);
  });
  if (wants_grad(tp, {&a})) {
    mark_and_touch(tp, {&a}, out);
    tp.record([a, out, outer, arow, orow, off]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        auto ag = a.grad<T>();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t j = 0; j < orow; ++j)
            ag[static_cast<size_t>(o * arow + off + j)] += og[static_cast<size_t>(o * orow + j)];
      });
    });
  }
  return out;
}

Tensor stop_gradient(const Tensor& a) { return a.detached(); }

// ---- reductions ------------------------------------------------------------

Tensor sum_all(Tape& tp, const Tensor& a) {
  Tensor out = Tensor::zeros({}, a.dtype());
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a.at(i);
  out.set(0, acc);
  if (wants_grad(tp, {&a})) {
    mark_and_touch(tp, {&a}, out);
    tp.record([a, out]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        T g = out.grad<T>()[0];
        auto ag = a.grad<T>();
        for (size_t i = 0; i < ag.size(); ++i) ag[i] += g;
      });
    });
  }
  return out;
}

Tensor mean_all(Tape& tp, const Tensor& a) {
  require(a.numel() > 0, "mean_all: empty tensor");
  Tensor s = sum_all(tp, a);
  return scale(tp, s, 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_axis0(Tape& tp, const Tensor& a) {
  require(a.ndim() == 2, "mean_axis0: need 2-d, got " + shape_str(a.shape()));
  int64_t T_ = a.dim(0), D = a.dim(1);
  require(T_ > 0, "mean_axis0: empty axis");
  Tensor out = Tensor::zeros({D}, a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t d = 0; d < D; ++d) {
      double acc = 0.0;
      for (int64_t t = 0; t < T_; ++t) acc += static_cast<double>(av[static_cast<size_t>(t * D + d)]);
      ov[static_cast<size_t>(d)] = static_cast<T>(acc / static_cast<double>(T_));
    }
  });
  if (wants_grad(tp, {&a})) {
    mark_and_touch(tp, {&a}, out);
    tp.record([a, out, T_, D]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        auto ag = a.grad<T>();
        T inv = static_cast<T>(1.0 / static_cast<double>(T_));
        for (int64_t t = 0; t < T_; ++t)
          for (int64_t d = 0; d < D; ++d)
            ag[static_cast<size_t>(t * D + d)] += og[static_cast<size_t>(d)] * inv;
      });
    });
  }
  return out;
}

// ---- neural-net ops -----------------------------------------------------------

Tensor softmax_lastdim(Tape& tp, const Tensor& a) {
  int64_t d = last_dim(a);
  require(d > 0, "softmax_lastdim: empty last dim");
  int64_t rows = a.numel() / d;
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* x = av.data() + r * d;
      T* y = ov.data() + r * d;
      double mx = static_cast<double>(x[0]);
      for (int64_t j = 1; j < d; ++j) mx = std::max(mx, static_cast<double>(x[j]));
      double sum = 0.0;
      for (int64_t j = 0; j < d; ++j) sum += std::exp(static_cast<double>(x[j]) - mx);
      for (int64_t j = 0; j < d; ++j)
        y[j] = static_cast<T>(std::exp(static_cast<double>(x[j]) - mx) / sum);
    }
  });
  if (wants_grad(tp, {&a})) {
    mark_and_touch(tp, {&a}, out);
    tp.record([a, out, rows, d]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        auto ov = out.vals<T>();
        auto ag = a.grad<T>();
        for (int64_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (int64_t j = 0; j < d; ++j)
            dot += static_cast<double>(og[static_cast<size_t>(r * d + j)]) *
                   static_cast<double>(ov[static_cast<size_t>(r * d + j)]);
          for (int64_t j = 0; j < d; ++j) {
            size_t k = static_cast<size_t>(r * d + j);
            ag[k] += static_cast<T>(static_cast<double>(ov[k]) *
                                    (static_cast<double>(og[k]) - dot));
          }
        }
      });
    });
  }
  return out;
}

Tensor log_softmax_lastdim(Tape& tp, const Tensor& a) {
  int64_t d = last_dim(a);
  require(d > 0, "log_softmax_lastdim: empty last dim");
  int64_t rows = a.numel() / d;
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto z) {
    using T = decltype(z);
    auto av = a.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* x = av.data() + r * d;
      T* y = ov.data() + r * d;
      double mx = static_cast<double>(x[0]);
      for (int64_t j = 1; j < d; ++j) mx = std::max(mx, static_cast<double>(x[j]));
      double sum = 0.0;
      for (int64_t j = 0; j < d; ++j) sum += std::exp(static_cast<double>(x[j]) - mx);
      double lse = mx + std::log(sum);
      for (int64_t j = 0; j < d; ++j) y[j] = static_cast<T>(static_cast<double>(x[j]) - lse);
    }
  });
  if (wants_grad(tp, {&a})) {
    mark_and_touch(tp, {&a}, out);
    tp.record([a, out, rows, d]() mutable {
      dispatch(a.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        auto ov = out.vals<T>();
        auto ag = a.grad<T>();
        for (int64_t r = 0; r < rows; ++r) {
          double gsum = 0.0;
          for (int64_t j = 0; j < d; ++j) gsum += static_cast<double>(og[static_cast<size_t>(r * d + j)]);
          for (int64_t j = 0; j < d; ++j) {
            size_t k = static_cast<size_t>(r * d + j);
            ag[k] += static_cast<T>(static_cast<double>(og[k]) -
                                    std::exp(static_cast<double>(ov[k])) * gsum);
          }
        }
      });
    });
  }
  return out;
}

Tensor layer_norm(Tape& tp, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  int64_t d = last_dim(x);
  require(gain.ndim() == 1 && gain.dim(0) == d && bias.ndim() == 1 && bias.dim(0) == d,
          "layer_norm: param shape mismatch for " + shape_str(x.shape()));
  require(x.dtype() == gain.dtype() && x.dtype() == bias.dtype(), "layer_norm: dtype mismatch");
  int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    auto xv = x.vals<T>();
    auto gv = gain.vals<T>();
    auto bv = bias.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* xp = xv.data() + r * d;
      double mu = 0.0;
      for (int64_t j = 0; j < d; ++j) mu += static_cast<double>(xp[j]);
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        double c = static_cast<double>(xp[j]) - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      double inv = 1.0 / std::sqrt(var + eps);
      for (int64_t j = 0; j < d; ++j) {
        double xh = (static_cast<double>(xp[j]) - mu) * inv;
        ov[static_cast<size_t>(r * d + j)] =
            static_cast<T>(xh * static_cast<double>(gv[static_cast<size_t>(j)]) +
                           static_cast<double>(bv[static_cast<size_t>(j)]));
      }
    }
  });
  if (wants_grad(tp, {&x, &gain, &bias})) {
    mark_and_touch(tp, {&x, &gain, &bias}, out);
    tp.record([x, gain, bias, out, rows, d, eps]() mutable {
      dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        auto xv = x.vals<T>();
        auto gv = gain.vals<T>();
        auto og = out.grad<T>();
        for (int64_t r = 0; r < rows; ++r) {
          const T* xp = xv.data() + r * d;
          double mu = 0.0;
          for (int64_t j = 0; j < d; ++j) mu += static_cast<double>(xp[j]);
          mu /= static_cast<double>(d);
          double var = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            double c = static_cast<double>(xp[j]) - mu;
            var += c * c;
          }
          var /= static_cast<double>(d);
          double inv = 1.0 / std::sqrt(var + eps);
          // dxh = og * gain; dx = inv * (dxh - mean(dxh) - xh * mean(dxh*xh))
          double m1 = 0.0, m2 = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            size_t k = static_cast<size_t>(r * d + j);
            double xh = (static_cast<double>(xp[j]) - mu) * inv;
            double dxh = static_cast<double>(og[k]) * static_cast<double>(gv[static_cast<size_t>(j)]);
            m1 += dxh;
            m2 += dxh * xh;
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          if (x.requires_grad()) {
            auto xg = x.grad<T>();
            for (int64_t j = 0; j < d; ++j) {
              size_t k = static_cast<size_t>(r * d + j);
              double xh = (static_cast<double>(xp[j]) - mu) * inv;
              double dxh = static_cast<double>(og[k]) * static_cast<double>(gv[static_cast<size_t>(j)]);
              xg[k] += static_cast<T>(inv * (dxh - m1 - xh * m2));
            }
          }
          if (gain.requires_grad()) {
            auto gg = gain.grad<T>();
            for (int64_t j = 0; j < d; ++j) {
              size_t k = static_cast<size_t>(r * d + j);
              double xh = (static_cast<double>(xp[j]) - mu) * inv;
              gg[static_cast<size_t>(j)] += static_cast<T>(static_cast<double>(og[k]) * xh);
            }
          }
          if (bias.requires_grad()) {
            auto bg = bias.grad<T>();
            for (int64_t j = 0; j < d; ++j)
              bg[static_cast<size_t>(j)] += og[static_cast<size_t>(r * d + j)];
          }
        }
      });
    });
  }
  return out;
}

// ---- convolutions ------------------------------------------------------------

namespace {

// im2col for a single [Ci,H,W] image: cols [Ci*kh*kw, Ho*Wo].
template <class T>
void im2col(const T* x, int64_t Ci, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* cols) {
  for (int64_t c = 0; c < Ci; ++c)
    for (int64_t ki = 0; ki < kh; ++ki)
      for (int64_t kj = 0; kj < kw; ++kj) {
        int64_t row = (c * kh + ki) * kw + kj;
        for (int64_t oi = 0; oi < Ho; ++oi) {
          int64_t ii = oi * stride + ki - pad;
          for (int64_t oj = 0; oj < Wo; ++oj) {
            int64_t jj = oj * stride + kj - pad;
            T v = (ii >= 0 && ii < H && jj >= 0 && jj < W)
                      ? x[(c * H + ii) * W + jj]
                      : static_cast<T>(0);
            cols[row * (Ho * Wo) + oi * Wo + oj] = v;
          }
        }
      }
}

template <class T>
void col2im_acc(const T* cols, int64_t Ci, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* dx) {
  for (int64_t c = 0; c < Ci; ++c)
    for (int64_t ki = 0; ki < kh; ++ki)
      for (int64_t kj = 0; kj < kw; ++kj) {
        int64_t row = (c * kh + ki) * kw + kj;
        for (int64_t oi = 0; oi < Ho; ++oi) {
          int64_t ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= H) continue;
          for (int64_t oj = 0; oj < Wo; ++oj) {
            int64_t jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= W) continue;
            dx[(c * H + ii) * W + jj] += cols[row * (Ho * Wo) + oi * Wo + oj];
          }
        }
      }
}

}  // namespace

Tensor conv2d(Tape& tp, const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int pad) {
  require(x.ndim() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  require(w.ndim() == 4, "conv2d: weight must be [Co,Ci,kh,kw], got " + shape_str(w.shape()));
  require(x.dim(0) == w.dim(1), "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(w.shape()));
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  require(x.dtype() == w.dtype(), "conv2d: dtype mismatch");
  int64_t Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
  int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  require(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");
  if (bias.defined()) {
    require(bias.ndim() == 1 && bias.dim(0) == Co, "conv2d: bias shape mismatch");
    require(bias.dtype() == x.dtype(), "conv2d: bias dtype mismatch");
  }

  Tensor cols = Tensor::zeros({Ci * kh * kw, Ho * Wo}, x.dtype());
  Tensor out = Tensor::zeros({Co, Ho, Wo}, x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    im2col<T>(x.vals<T>().data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo, cols.vals<T>().data());
    gemm<T>(false, false, Co, Ho * Wo, Ci * kh * kw, w.vals<T>().data(), cols.vals<T>().data(),
            out.vals<T>().data(), false);
    if (bias.defined()) {
      auto bv = bias.vals<T>();
      auto ov = out.vals<T>();
      for (int64_t co = 0; co < Co; ++co)
        for (int64_t p = 0; p < Ho * Wo; ++p) ov[static_cast<size_t>(co * Ho * Wo + p)] += bv[static_cast<size_t>(co)];
    }
  });

  bool bias_grad = bias.defined() && bias.requires_grad();
  if (tp.grad_enabled() && (x.requires_grad() || w.requires_grad() || bias_grad)) {
    out.set_requires_grad(true);
    tp.touch(x);
    tp.touch(w);
    if (bias.defined()) tp.touch(bias);
    tp.touch(out);
    tp.record([x, w, bias, out, cols, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad]() mutable {
      dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        const T* og = out.grad<T>().data();
        if (w.requires_grad())
          gemm<T>(false, true, Co, Ci * kh * kw, Ho * Wo, og, cols.vals<T>().data(),
                  w.grad<T>().data(), true);
        if (bias.defined() && bias.requires_grad()) {
          auto bg = bias.grad<T>();
          for (int64_t co = 0; co < Co; ++co) {
            double acc = 0.0;
            for (int64_t p = 0; p < Ho * Wo; ++p) acc += static_cast<double>(og[co * Ho * Wo + p]);
            bg[static_cast<size_t>(co)] += static_cast<T>(acc);
          }
        }
        if (x.requires_grad()) {
          Tensor dcols = Tensor::zeros({Ci * kh * kw, Ho * Wo}, x.dtype());
          gemm<T>(true, false, Ci * kh * kw, Ho * Wo, Co, w.vals<T>().data(), og,
                  dcols.vals<T>().data(), false);
          col2im_acc<T>(dcols.vals<T>().data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                        x.grad<T>().data());
        }
      });
    });
  }
  return out;
}

Tensor conv1d_depthwise_causal(Tape& tp, const Tensor& x, const Tensor& w, const Tensor& bias) {
  require(x.ndim() == 2, "conv1d_depthwise_causal: input must be [L,C], got " +
                             shape_str(x.shape()));
  require(w.ndim() == 2 && w.dim(0) == x.dim(1),
          "conv1d_depthwise_causal: weight must be [C,k], got " + shape_str(w.shape()));
  require(bias.ndim() == 1 && bias.dim(0) == x.dim(1),
          "conv1d_depthwise_causal: bias shape mismatch");
  int64_t L = x.dim(0), C = x.dim(1), k = w.dim(1);
  Tensor out = Tensor::zeros({L, C}, x.dtype());
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    auto xv = x.vals<T>();
    auto wv = w.vals<T>();
    auto bv = bias.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t t = 0; t < L; ++t)
      for (int64_t c = 0; c < C; ++c) {
        double acc = static_cast<double>(bv[static_cast<size_t>(c)]);
        for (int64_t j = 0; j < k; ++j) {
          int64_t src = t - (k - 1) + j;
          if (src < 0) continue;
          acc += static_cast<double>(wv[static_cast<size_t>(c * k + j)]) *
                 static_cast<double>(xv[static_cast<size_t>(src * C + c)]);
        }
        ov[static_cast<size_t>(t * C + c)] = static_cast<T>(acc);
      }
  });
  if (wants_grad(tp, {&x, &w, &bias})) {
    mark_and_touch(tp, {&x, &w, &bias}, out);
    tp.record([x, w, bias, out, L, C, k]() mutable {
      dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        auto xv = x.vals<T>();
        auto wv = w.vals<T>();
        auto og = out.grad<T>();
        for (int64_t t = 0; t < L; ++t)
          for (int64_t c = 0; c < C; ++c) {
            T g = og[static_cast<size_t>(t * C + c)];
            if (bias.requires_grad()) bias.grad<T>()[static_cast<size_t>(c)] += g;
            for (int64_t j = 0; j < k; ++j) {
              int64_t src = t - (k - 1) + j;
              if (src < 0) continue;
              if (w.requires_grad())
                w.grad<T>()[static_cast<size_t>(c * k + j)] += g * xv[static_cast<size_t>(src * C + c)];
              if (x.requires_grad())
                x.grad<T>()[static_cast<size_t>(src * C + c)] += g * wv[static_cast<size_t>(c * k + j)];
            }
          }
      });
    });
  }
  return out;
}

Tensor bilinear_upsample2d(Tape& tp, const Tensor& x, int factor) {
  require(x.ndim() == 3, "bilinear_upsample2d: input must be [C,h,w], got " +
                             shape_str(x.shape()));
  require(factor >= 1, "bilinear_upsample2d: factor must be >= 1");
  int64_t C = x.dim(0), h = x.dim(1), w = x.dim(2);
  int64_t H = h * factor, W = w * factor;
  Tensor out = Tensor::zeros({C, H, W}, x.dtype());
  // Precompute the 4-tap sampling pattern once per output coordinate.
  std::vector<int64_t> y0s(static_cast<size_t>(H)), y1s(static_cast<size_t>(H));
  std::vector<double> wys(static_cast<size_t>(H));
  for (int64_t i = 0; i < H; ++i) {
    double sy = (static_cast<double>(i) + 0.5) / factor - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
    int64_t y0 = static_cast<int64_t>(std::floor(sy));
    y0s[static_cast<size_t>(i)] = y0;
    y1s[static_cast<size_t>(i)] = std::min(y0 + 1, h - 1);
    wys[static_cast<size_t>(i)] = sy - static_cast<double>(y0);
  }
  std::vector<int64_t> x0s(static_cast<size_t>(W)), x1s(static_cast<size_t>(W));
  std::vector<double> wxs(static_cast<size_t>(W));
  for (int64_t j = 0; j < W; ++j) {
    double sx = (static_cast<double>(j) + 0.5) / factor - 0.5;
    sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
    int64_t x0 = static_cast<int64_t>(std::floor(sx));
    x0s[static_cast<size_t>(j)] = x0;
    x1s[static_cast<size_t>(j)] = std::min(x0 + 1, w - 1);
    wxs[static_cast<size_t>(j)] = sx - static_cast<double>(x0);
  }
  dispatch(x.dtype(), [&](auto z) {
    using T = decltype(z);
    auto xv = x.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
          double wy = wys[static_cast<size_t>(i)], wx = wxs[static_cast<size_t>(j)];
          int64_t y0 = y0s[static_cast<size_t>(i)], y1 = y1s[static_cast<size_t>(i)];
          int64_t x0 = x0s[static_cast<size_t>(j)], x1 = x1s[static_cast<size_t>(j)];
          double v = (1 - wy) * (1 - wx) * static_cast<double>(xv[static_cast<size_t>((c * h + y0) * w + x0)]) +
                     (1 - wy) * wx * static_cast<double>(xv[static_cast<size_t>((c * h + y0) * w + x1)]) +
                     wy * (1 - wx) * static_cast<double>(xv[static_cast<size_t>((c * h + y1) * w + x0)]) +
                     wy * wx * static_cast<double>(xv[static_cast<size_t>((c * h + y1) * w + x1)]);
          ov[static_cast<size_t>((c * H + i) * W + j)] = static_cast<T>(v);
        }
  });
  if (wants_grad(tp, {&x})) {
    mark_and_touch(tp, {&x}, out);
    tp.record([x, out, C, h, w, H, W, y0s, y1s, wys, x0s, x1s, wxs]() mutable {
      dispatch(x.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        auto xg = x.grad<T>();
        for (int64_t c = 0; c < C; ++c)
          for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
              double g = static_cast<double>(og[static_cast<size_t>((c * H + i) * W + j)]);
              double wy = wys[static_cast<size_t>(i)], wx = wxs[static_cast<size_t>(j)];
              int64_t y0 = y0s[static_cast<size_t>(i)], y1 = y1s[static_cast<size_t>(i)];
              int64_t x0 = x0s[static_cast<size_t>(j)], x1 = x1s[static_cast<size_t>(j)];
              xg[static_cast<size_t>((c * h + y0) * w + x0)] += static_cast<T>((1 - wy) * (1 - wx) * g);
              xg[static_cast<size_t>((c * h + y0) * w + x1)] += static_cast<T>((1 - wy) * wx * g);
              xg[static_cast<size_t>((c * h + y1) * w + x0)] += static_cast<T>(wy * (1 - wx) * g);
              xg[static_cast<size_t>((c * h + y1) * w + x1)] += static_cast<T>(wy * wx * g);
            }
      });
    });
  }
  return out;
}

Tensor embedding(Tape& tp, const Tensor& table, std::span<const int> idx) {
  require(table.ndim() == 2, "embedding: table must be [V,D], got " + shape_str(table.shape()));
  int64_t V = table.dim(0), D = table.dim(1);
  for (int i : idx)
    require(i >= 0 && i < V, "embedding: index " + std::to_string(i) + " out of range [0," +
                                 std::to_string(V) + ")");
  int64_t n = static_cast<int64_t>(idx.size());
  Tensor out = Tensor::zeros({n, D}, table.dtype());
  std::vector<int> held(idx.begin(), idx.end());
  dispatch(table.dtype(), [&](auto z) {
    using T = decltype(z);
    auto tv = table.vals<T>();
    auto ov = out.vals<T>();
    for (int64_t r = 0; r < n; ++r)
      std::copy_n(tv.data() + static_cast<int64_t>(held[static_cast<size_t>(r)]) * D, D, ov.data() + r * D);
  });
  if (wants_grad(tp, {&table})) {
    mark_and_touch(tp, {&table}, out);
    tp.record([table, out, held, D]() mutable {
      dispatch(table.dtype(), [&](auto z) {
        using T = decltype(z);
        auto og = out.grad<T>();
        auto tg = table.grad<T>();
        for (size_t r = 0; r < held.size(); ++r)
          for (int64_t j = 0; j < D; ++j)
            tg[static_cast<size_t>(held[r] * D + j)] += og[r * static_cast<size_t>(D) + static_cast<size_t>(j)];
      });
    });
  }
  return out;
}

}  // namespace gparam
