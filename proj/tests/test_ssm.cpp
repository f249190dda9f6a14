#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "gparam/rng.hpp"
#include "gparam/ssm.hpp"

using namespace gparam;

namespace {

Tensor rand_t(Rng& rng, Shape shape, double lo, double hi, Dtype dt = Dtype::f64) {
  Tensor t = Tensor::zeros(std::move(shape), dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

struct ScanInputs {
  Tensor abar, bbar, c, x, h0;  // shapes [L,C,S],[L,C,S],[L,S],[L,C],[C,S]
};

// Random-but-realistic scan inputs: decay factors in (0,1) as produced by a
// negative A under positive step sizes.
ScanInputs random_scan(Rng& rng, int64_t L, int64_t C, int64_t S, Dtype dt, bool with_h0) {
  ScanInputs si;
  si.abar = rand_t(rng, {L, C, S}, 0.01, 0.999, dt);
  si.bbar = rand_t(rng, {L, C, S}, -0.2, 0.2, dt);
  si.c = rand_t(rng, {L, S}, -1.0, 1.0, dt);
  si.x = rand_t(rng, {L, C}, -1.0, 1.0, dt);
  if (with_h0) si.h0 = rand_t(rng, {C, S}, -1.0, 1.0, dt);
  return si;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace

TEST_CASE("zoh_discretize matches the worked scalar example") {
  Tape tp;
  Tensor a = Tensor::full({1, 1}, Dtype::f64, -1.0);
  Tensor b = Tensor::full({1, 1}, Dtype::f64, 1.0);
  Tensor delta = Tensor::full({1, 1}, Dtype::f64, std::log(2.0));
  auto [abar, bbar] = zoh_discretize(tp, a, b, delta);
  // abar = exp(-ln 2) = 0.5; bbar = (exp(dA)-1)/A * B = (0.5-1)/(-1) = 0.5
  CHECK(abar.at(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(bbar.at(0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("zoh_discretize rejects non-positive step sizes") {
  Tape tp;
  Tensor a = Tensor::full({1, 1}, Dtype::f64, -1.0);
  Tensor b = Tensor::full({1, 1}, Dtype::f64, 1.0);
  for (double bad : {0.0, -0.3}) {
    Tensor delta = Tensor::full({1, 1}, Dtype::f64, bad);
    CHECK_THROWS_WITH_AS(zoh_discretize(tp, a, b, delta), doctest::Contains("positive"),
                         std::invalid_argument);
  }
}

TEST_CASE("zoh_discretize matches high-precision scalar oracle on 1e4 samples") {
  // Covers |delta*A| from ~1e-12 up to ~5, crossing the 1e-6 Taylor switch.
  Rng rng(2024);
  double worst_a = 0.0, worst_b = 0.0;
  for (int i = 0; i < 10000; ++i) {
    double A = -std::exp(rng.uniform(std::log(1e-3), std::log(5.0)));
    double dt = std::exp(rng.uniform(std::log(1e-9), 0.0));
    double B = rng.uniform(-2.0, 2.0);
    Tape tp;
    Tensor at = Tensor::full({1, 1}, Dtype::f64, A);
    Tensor bt = Tensor::full({1, 1}, Dtype::f64, B);
    Tensor dtt = Tensor::full({1, 1}, Dtype::f64, dt);
    auto [abar, bbar] = zoh_discretize(tp, at, bt, dtt);
    double abar_oracle = std::exp(dt * A);
    double bbar_oracle = std::expm1(dt * A) / A * B;  // library-grade expm1
    worst_a = std::max(worst_a, std::fabs(abar.at(0) - abar_oracle) /
                                    std::max(std::fabs(abar_oracle), 1e-300));
    if (bbar_oracle != 0.0)
      worst_b = std::max(worst_b, std::fabs(bbar.at(0) - bbar_oracle) / std::fabs(bbar_oracle));
  }
  CHECK(worst_a < 1e-10);
  CHECK(worst_b < 1e-10);
}

TEST_CASE("scan_linear with unit coefficients is a running sum") {
  Tape tp;
  const int64_t L = 6;
  Tensor a = Tensor::full({L}, Dtype::f64, 1.0);
  Tensor b = Tensor::full({L}, Dtype::f64, 1.0);
  Tensor y = scan_linear(tp, a, b);
  for (int64_t t = 0; t < L; ++t) CHECK(y.at(t) == doctest::Approx(static_cast<double>(t + 1)));
}

TEST_CASE("scan_sequential equals dense unrolled sum at L = 8") {
  Rng rng(31);
  const int64_t L = 8, C = 3, S = 4;
  ScanInputs si = random_scan(rng, L, C, S, Dtype::f64, true);
  Tape tp;
  Tensor y = scan_sequential(tp, si.abar, si.bbar, si.c, si.x, si.h0);

  // Dense oracle: h_t = (prod_{j<=t} abar_j) h0 + sum_{tau<=t} (prod_{j>tau} abar_j) bbar_tau x_tau
  double worst = 0.0;
  for (int64_t t = 0; t < L; ++t)
    for (int64_t ch = 0; ch < C; ++ch) {
      double yv = 0.0;
      for (int64_t s = 0; s < S; ++s) {
        double h = si.h0.at(ch * S + s);
        for (int64_t j = 0; j <= t; ++j) h *= si.abar.at((j * C + ch) * S + s);
        for (int64_t tau = 0; tau <= t; ++tau) {
          double term = si.bbar.at((tau * C + ch) * S + s) * si.x.at(tau * C + ch);
          for (int64_t j = tau + 1; j <= t; ++j) term *= si.abar.at((j * C + ch) * S + s);
          h += term;
        }
        yv += h * si.c.at(t * S + s);
      }
      worst = std::max(worst, std::fabs(yv - y.at(t * C + ch)));
    }
  CHECK(worst < 1e-12);
}

TEST_CASE("scan_parallel equals scan_sequential over 100 random configurations") {
  // Mix of short, block-boundary, and long lengths, both dtypes, h0 on/off.
  const int64_t lengths[] = {1, 2, 3, 5, 64, 127, 128, 129, 300, 1000, 2048, 4096};
  Rng rng(77);
  double worst64 = 0.0, worst32 = 0.0;
  for (int i = 0; i < 100; ++i) {
    int64_t L = lengths[i % 12];
    int64_t C = 1 + rng.randint(3);
    int64_t S = 1 + rng.randint(4);
    bool with_h0 = (i % 3) != 0;
    Dtype dt = (i % 2) ? Dtype::f32 : Dtype::f64;
    ScanInputs si = random_scan(rng, L, C, S, dt, with_h0);
    Tape tp(false);
    Tensor ys = scan_sequential(tp, si.abar, si.bbar, si.c, si.x, si.h0);
    Tensor yp = scan_parallel(tp, si.abar, si.bbar, si.c, si.x, si.h0);
    double d = max_abs_diff(ys, yp);
    if (dt == Dtype::f64)
      worst64 = std::max(worst64, d);
    else
      worst32 = std::max(worst32, d);
    if (L == 1) CHECK(d == 0.0);  // no composition happens at L = 1
  }
  CHECK(worst64 < 1e-12);
  CHECK(worst32 < 1e-6);
}

TEST_CASE("scan stays bounded over 1e5 steps") {
  Rng rng(5);
  const int64_t L = 100000;
  ScanInputs si = random_scan(rng, L, 1, 2, Dtype::f32, false);
  Tape tp(false);
  Tensor y = scan_parallel(tp, si.abar, si.bbar, si.c, si.x, si.h0);
  double mx = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    CHECK(std::isfinite(y.at(i)));
    mx = std::max(mx, std::fabs(y.at(i)));
  }
  CHECK(mx < 1e3);  // decay factors < 1 keep the state from blowing up
}

TEST_CASE("gradient checks for scan primitives") {
  Rng rng(13);
  const int64_t L = 5, C = 2, S = 3;
  ScanInputs si = random_scan(rng, L, C, S, Dtype::f64, true);
  Rng wr(17);
  Tensor wy = rand_t(wr, {L, C}, -1.0, 1.0);
  Tensor wh = rand_t(wr, {L, C, S}, -1.0, 1.0);

  auto scan_loss = [&](Tape& t, const Tensor& a, const Tensor& b, const Tensor& h0) {
    return sum_all(t, mul(t, scan_linear(t, a, b, h0), wh));
  };
  auto f_a = [&](Tape& t, const Tensor& v) { return scan_loss(t, v, si.bbar, si.h0); };
  CHECK(grad_check(f_a, si.abar).max_rel_err < 1e-6);
  auto f_b = [&](Tape& t, const Tensor& v) { return scan_loss(t, si.abar, v, si.h0); };
  CHECK(grad_check(f_b, si.bbar).max_rel_err < 1e-6);
  auto f_h0 = [&](Tape& t, const Tensor& v) { return scan_loss(t, si.abar, si.bbar, v); };
  CHECK(grad_check(f_h0, si.h0).max_rel_err < 1e-6);

  // blocked path shares the backward; still check end to end
  auto f_blocked = [&](Tape& t, const Tensor& v) {
    return sum_all(t, mul(t, scan_linear_blocked(t, v, si.bbar, si.h0), wh));
  };
  CHECK(grad_check(f_blocked, si.abar).max_rel_err < 1e-6);

  Tensor delta = rand_t(rng, {L, C}, 0.05, 0.8);
  Tensor acont = rand_t(rng, {C, S}, -3.0, -0.2);
  Tensor bsel = rand_t(rng, {L, S}, -1.0, 1.0);

  auto f_dtap = [&](Tape& t, const Tensor& v) {
    return sum_all(t, mul(t, dt_a_product(t, v, acont), wh));
  };
  CHECK(grad_check(f_dtap, delta).max_rel_err < 1e-6);
  auto f_dtap2 = [&](Tape& t, const Tensor& v) {
    return sum_all(t, mul(t, dt_a_product(t, delta, v), wh));
  };
  CHECK(grad_check(f_dtap2, acont).max_rel_err < 1e-6);

  auto f_tso = [&](Tape& t, const Tensor& v) {
    return sum_all(t, mul(t, token_state_outer(t, v, bsel), wh));
  };
  CHECK(grad_check(f_tso, si.x).max_rel_err < 1e-6);

  auto f_mb = [&](Tape& t, const Tensor& v) {
    return sum_all(t, mul(t, mul_bcast_tc(t, si.bbar, v), wh));
  };
  CHECK(grad_check(f_mb, si.x).max_rel_err < 1e-6);

  auto f_sc = [&](Tape& t, const Tensor& v) {
    return sum_all(t, mul(t, state_contract(t, v, si.c), wy));
  };
  Tensor h = rand_t(rng, {L, C, S}, -1.0, 1.0);
  CHECK(grad_check(f_sc, h).max_rel_err < 1e-6);

  // full selective path incl. the discretization
  auto f_full = [&](Tape& t, const Tensor& v) {
    auto [abar, bbar] = zoh_discretize(t, acont, bsel, v);
    return sum_all(t, mul(t, scan_parallel(t, abar, bbar, si.c, si.x, si.h0), wy));
  };
  CHECK(grad_check(f_full, delta).max_rel_err < 1e-6);
}

TEST_CASE("mamba_block shapes, determinism and scan-order invariance") {
  MambaConfig cfg;
  cfg.dim = 8;
  cfg.d_state = 4;
  cfg.dt_rank = 2;
  for (int64_t L : {1, 7, 64}) {
    Rng rng(42);
    MambaBlock blk(rng, cfg, Dtype::f32);
    Rng xr(7);
    Tensor x = rand_t(xr, {L, cfg.dim}, -1.0, 1.0, Dtype::f32);
    Tape tp(false);
    Tensor y = blk.forward(tp, x);
    CHECK(y.shape() == Shape{L, cfg.dim});
  }

  Rng r1(42), r2(42);
  MambaBlock b1(r1, cfg, Dtype::f32), b2(r2, cfg, Dtype::f32);
  Rng xr(7);
  Tensor x = rand_t(xr, {64, cfg.dim}, -1.0, 1.0, Dtype::f32);
  Tape tp(false);
  Tensor y1 = b1.forward(tp, x);
  Tensor y2 = b2.forward(tp, x);
  CHECK(max_abs_diff(y1, y2) == 0.0);  // identical seeds, identical outputs

  MambaBlock bseq = b1;  // parameter tensors are shared handles
  bseq.cfg.parallel_scan = false;
  Tensor y3 = bseq.forward(tp, x);
  CHECK(max_abs_diff(y1, y3) < 1e-6);
}

TEST_CASE("mamba_block is causal") {
  MambaConfig cfg;
  cfg.dim = 8;
  cfg.d_state = 4;
  cfg.dt_rank = 2;
  Rng rng(3);
  MambaBlock blk(rng, cfg, Dtype::f64);
  Rng xr(11);
  const int64_t L = 10, t_hit = 4;
  Tensor x = rand_t(xr, {L, cfg.dim}, -1.0, 1.0);
  Tape tp(false);
  Tensor base = blk.forward(tp, x);
  Tensor x2 = x.clone();
  for (int64_t d = 0; d < cfg.dim; ++d) x2.set(t_hit * cfg.dim + d, x2.at(t_hit * cfg.dim + d) + 0.5);
  Tensor bumped = blk.forward(tp, x2);
  for (int64_t t = 0; t < t_hit; ++t)
    for (int64_t d = 0; d < cfg.dim; ++d)
      CHECK(base.at(t * cfg.dim + d) == bumped.at(t * cfg.dim + d));
  double after = 0.0;
  for (int64_t d = 0; d < cfg.dim; ++d)
    after = std::max(after, std::fabs(base.at(t_hit * cfg.dim + d) - bumped.at(t_hit * cfg.dim + d)));
  CHECK(after > 0.0);
}

TEST_CASE("mamba_block composite gradient check") {
  MambaConfig cfg;
  cfg.dim = 8;
  cfg.d_state = 4;
  cfg.dt_rank = 2;
  Rng rng(19);
  MambaBlock blk(rng, cfg, Dtype::f64);
  Rng xr(23);
  const int64_t L = 6;
  Tensor x = rand_t(xr, {L, cfg.dim}, -1.0, 1.0);
  Rng wr(29);
  Tensor wy = rand_t(wr, {L, cfg.dim}, -1.0, 1.0);

  auto f_x = [&](Tape& t, const Tensor& v) { return sum_all(t, mul(t, blk.forward(t, v), wy)); };
  CHECK(grad_check(f_x, x).max_rel_err < 1e-5);

  auto floss = [&](Tape& t) { return sum_all(t, mul(t, blk.forward(t, x), wy)); };
  CHECK(grad_check_param(floss, blk.a_log).max_rel_err < 1e-5);
  CHECK(grad_check_param(floss, blk.conv_w).max_rel_err < 1e-5);
  CHECK(grad_check_param(floss, blk.conv_b).max_rel_err < 1e-5);
  CHECK(grad_check_param(floss, blk.selection.dt_proj.b).max_rel_err < 1e-5);
  CHECK(grad_check_param(floss, blk.selection.dt_proj.w).max_rel_err < 1e-5);
  CHECK(grad_check_param(floss, blk.selection.x_proj.w).max_rel_err < 1e-5);
  CHECK(grad_check_param(floss, blk.out_proj.w).max_rel_err < 1e-5);
  CHECK(grad_check_param(floss, blk.in_proj.w).max_rel_err < 1e-5);
}

TEST_CASE("state matrix stays strictly negative through training") {
  MambaConfig cfg;
  cfg.dim = 8;
  cfg.d_state = 4;
  cfg.dt_rank = 2;
  Rng rng(33);
  MambaBlock blk(rng, cfg, Dtype::f32);
  ParamList ps;
  blk.collect("m.", ps);
  std::vector<Tensor> tensors;
  for (auto& [n, t] : ps) tensors.push_back(t);
  Adam opt(tensors);
  Rng xr(37);
  Tensor x = rand_t(xr, {16, cfg.dim}, -1.0, 1.0, Dtype::f32);
  for (int step = 0; step < 5; ++step) {
    opt.zero_grad();
    Tape tp;
    Tensor y = blk.forward(tp, x);
    Tensor loss = mean_all(tp, mul(tp, y, y));
    tp.backward(loss);
    opt.step(1e-2);
  }
  Tape tp(false);
  Tensor a = scale(tp, exp(tp, blk.a_log), -1.0);
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a.at(i) < 0.0);
    CHECK(std::isfinite(a.at(i)));
  }
}
