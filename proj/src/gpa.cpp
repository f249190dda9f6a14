#include "gparam/gpa.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "gparam/action.hpp"
#include "gparam/ram.hpp"

namespace gparam {

void GpaConfig::validate() const {
  if (patch != 2 && patch != 4 && patch != 8)
    throw std::invalid_argument("GpaConfig: patch must be 2, 4 or 8");
  if (height % patch != 0 || width % patch != 0)
    throw std::invalid_argument("GpaConfig: patch must divide height and width");
  if (n_views != 2 && n_views != 5) throw std::invalid_argument("GpaConfig: n_views must be 2 or 5");
  if (zoom < 1.0) throw std::invalid_argument("GpaConfig: zoom must be >= 1");
  if (sigma <= 0.0) throw std::invalid_argument("GpaConfig: sigma must be positive");
}

namespace {

// stride plan: one stride-2 stage per factor of two in the patch size
std::array<int, 4> stride_plan(int64_t patch) {
  int halvings = patch == 8 ? 3 : patch == 4 ? 2 : 1;
  std::array<int, 4> s{1, 1, 1, 1};
  for (int i = 0; i < halvings; ++i) s[static_cast<size_t>(i)] = 2;
  return s;
}

Tensor conv_stack_features(Tape& tp, const GpaConfig& cfg, const Conv2d& c1, const Conv2d& c2,
                           const Conv2d& c3, const Conv2d& c4, const std::vector<Tensor>& views) {
  if (static_cast<int64_t>(views.size()) != cfg.n_views)
    throw std::invalid_argument("grasp features: expected " + std::to_string(cfg.n_views) +
                                " views");
  const int64_t P = cfg.tokens_per_view();
  std::vector<Tensor> per_view;
  per_view.reserve(views.size());
  for (const Tensor& v : views) {
    Tensor x = v.dtype() == cfg.dt ? v : v.astype(cfg.dt);
    x = silu(tp, c1.forward(tp, x));
    x = silu(tp, c2.forward(tp, x));
    x = silu(tp, c3.forward(tp, x));
    x = silu(tp, c4.forward(tp, x));  // [64, gh, gw]
    x = reshape(tp, x, {kGraspFeatDim, P});
    per_view.push_back(transpose2d(tp, x));  // [P, 64], row-major over the grid
  }
  return concat(tp, per_view, 0);  // [V*P, 64]
}

}  // namespace

GraspDetector::GraspDetector(Rng& rng, GpaConfig cfg_in) : cfg(cfg_in) {
  cfg.validate();
  auto s = stride_plan(cfg.patch);
  c1 = Conv2d(rng, 7, 16, 3, s[0], 1, cfg.dt);
  c2 = Conv2d(rng, 16, 32, 3, s[1], 1, cfg.dt);
  c3 = Conv2d(rng, 32, 64, 3, s[2], 1, cfg.dt);
  c4 = Conv2d(rng, 64, kGraspFeatDim, 3, s[3], 1, cfg.dt);
  score = Linear(rng, kGraspFeatDim, 1, cfg.dt);
  rot = Linear(rng, kGraspFeatDim, 3 * 72, cfg.dt);
  grip = Linear(rng, kGraspFeatDim, 1, cfg.dt);
}

Tensor GraspDetector::features(Tape& tp, const std::vector<Tensor>& views) const {
  return conv_stack_features(tp, cfg, c1, c2, c3, c4, views);
}

Tensor GraspDetector::heat_logits(Tape& tp, const Tensor& tokens) const {
  Tensor s = score.forward(tp, tokens);  // [V*P, 1]
  Tensor grid = reshape(tp, s, {cfg.n_views, cfg.grid_h(), cfg.grid_w()});
  return bilinear_upsample2d(tp, grid, static_cast<int>(cfg.patch));  // [V, H, W]
}

void GraspDetector::collect(const std::string& prefix, ParamList& out) const {
  c1.collect(prefix + "c1.", out);
  c2.collect(prefix + "c2.", out);
  c3.collect(prefix + "c3.", out);
  c4.collect(prefix + "c4.", out);
  score.collect(prefix + "score.", out);
  rot.collect(prefix + "rot.", out);
  grip.collect(prefix + "grip.", out);
}

PretrainResult pretrain_grasp_detector(Rng& rng, const GpaConfig& cfg,
                                       const std::vector<GraspEvent>& events, int epochs) {
  cfg.validate();
  if (events.empty()) throw std::runtime_error("no grasp events");
  if (epochs < 1) throw std::invalid_argument("pretrain_grasp_detector: epochs must be >= 1");

  PretrainResult res;
  res.detector = GraspDetector(rng, cfg);
  GraspDetector& det = res.detector;

  ParamList params;
  det.collect("", params);
  std::vector<Tensor> train;
  for (auto& [name, t] : params) train.push_back(t);
  Adam opt(train);

  const auto base_rig = standard_rig(static_cast<int>(cfg.n_views), static_cast<int>(cfg.height),
                                     static_cast<int>(cfg.width));
  const int64_t steps_per_epoch = 2 * static_cast<int64_t>(events.size());
  const int64_t total_steps = steps_per_epoch * epochs;
  int64_t step = 0;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const GraspEvent& ev : events) {
      const Vec3 gp{ev.grasp_pose.trans[0], ev.grasp_pose.trans[1], ev.grasp_pose.trans[2]};
      const auto bins = discretize_rotation(ev.grasp_pose.rot);
      // one pass at the base scale, one zoomed onto the grasp point
      for (int scale = 0; scale < 2; ++scale) {
        const auto cams = scale == 0 ? base_rig : zoom_crop(base_rig, gp, cfg.zoom);
        const auto views = render_views(cams, ev.obs.cloud);

        Tape tp;
        Tensor tokens = det.features(tp, views);
        Tensor logits = det.heat_logits(tp, tokens);
        Tensor targets = gaussian_heat_targets(cams, gp, cfg.sigma, cfg.dt);
        Tensor loss = heatmap_ce(tp, logits, targets);

        Tensor pooled = reshape(tp, mean_axis0(tp, tokens), {1, kGraspFeatDim});
        Tensor rlog = reshape(tp, det.rot.forward(tp, pooled), {3, 72});
        Tensor lsm = log_softmax_lastdim(tp, rlog);
        Tensor pick = Tensor::zeros({3, 72}, cfg.dt);
        for (int axis = 0; axis < 3; ++axis)
          pick.set(axis * 72 + bins[static_cast<size_t>(axis)], -1.0 / 3.0);
        loss = add(tp, loss, sum_all(tp, mul(tp, lsm, pick)));

        opt.zero_grad();
        tp.backward(loss);
        opt.step(cosine_lr(cfg.lr, cfg.lr * 0.1, static_cast<double>(step),
                           static_cast<double>(total_steps)));
        ++step;
        epoch_loss += loss.at(0);
      }
    }
    res.curve.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
  }
  return res;
}

Tensor FrozenFeatureExtractor::features(Tape& tp, const std::vector<Tensor>& views) const {
  return conv_stack_features(tp, cfg, c1, c2, c3, c4, views);
}

uint64_t FrozenFeatureExtractor::fingerprint() const {
  ParamList p;
  collect("", p);
  return params_fingerprint(p);
}

void FrozenFeatureExtractor::collect(const std::string& prefix, ParamList& out) const {
  c1.collect(prefix + "c1.", out);
  c2.collect(prefix + "c2.", out);
  c3.collect(prefix + "c3.", out);
  c4.collect(prefix + "c4.", out);
}

FrozenFeatureExtractor strip_and_freeze(const GraspDetector& d, bool fine_tune) {
  FrozenFeatureExtractor fx;
  fx.cfg = d.cfg;
  fx.frozen = !fine_tune;
  auto copy_conv = [&](const Conv2d& src) {
    Conv2d c;
    c.stride = src.stride;
    c.pad = src.pad;
    c.w = src.w.clone();
    c.b = src.b.clone();
    c.w.set_requires_grad(fine_tune);
    c.b.set_requires_grad(fine_tune);
    return c;
  };
  fx.c1 = copy_conv(d.c1);
  fx.c2 = copy_conv(d.c2);
  fx.c3 = copy_conv(d.c3);
  fx.c4 = copy_conv(d.c4);
  return fx;
}

PloFusion::PloFusion(Rng& rng, int64_t dim, int64_t heads, Dtype dt) {
  adapter = Linear(rng, kGraspFeatDim, dim, dt);
  AttentionConfig acfg;
  acfg.dim = dim;
  acfg.heads = heads;
  b1 = EncoderBlock(rng, acfg, dt);
  b2 = EncoderBlock(rng, acfg, dt);
}

FusedFeatures PloFusion::forward(Tape& tp, const Tensor& grasp_tokens,
                                 const Tensor& ram_tokens) const {
  const int64_t D = adapter.w.dim(0);
  if (ram_tokens.ndim() != 2 || ram_tokens.dim(1) != D)
    throw std::invalid_argument("plo_fusion: planner tokens must be [T, " + std::to_string(D) +
                                "]");
  FusedFeatures out;
  Tensor x = ram_tokens;
  int64_t t_grasp = 0;
  if (grasp_tokens.defined() && grasp_tokens.numel() > 0) {
    if (grasp_tokens.ndim() != 2 || grasp_tokens.dim(1) != kGraspFeatDim)
      throw std::invalid_argument("plo_fusion: grasp tokens must be [T, 64]");
    Tensor adapted = adapter.forward(tp, grasp_tokens);  // [T_grasp, D]
    t_grasp = adapted.dim(0);
    std::array<Tensor, 2> parts{ram_tokens, adapted};
    x = concat(tp, parts, 0);
  }
  x = b1.forward(tp, x);
  x = b2.forward(tp, x);
  out.tokens = x;
  out.tags.assign(static_cast<size_t>(ram_tokens.dim(0)), TokenSource::ram);
  out.tags.insert(out.tags.end(), static_cast<size_t>(t_grasp), TokenSource::grasp);
  return out;
}

void PloFusion::collect(const std::string& prefix, ParamList& out) const {
  adapter.collect(prefix + "adapter.", out);
  b1.collect(prefix + "b1.", out);
  b2.collect(prefix + "b2.", out);
}

}  // namespace gparam
