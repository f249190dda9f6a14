#include "gparam/action.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace gparam {

// ---- heads ------------------------------------------------------------------

ActionHeads::ActionHeads(Rng& rng, int64_t dim, Dtype dt) {
  score = Linear(rng, dim, 1, dt);
  rot = Mlp(rng, dim, 128, 3 * 72, dt);
  grip = Mlp(rng, dim, 128, 1, dt);
  coll = Mlp(rng, dim, 128, 1, dt);
}

HeadOutputs ActionHeads::forward(Tape& tp, const Tensor& tokens,
                                 const std::vector<TokenSource>& tags,
                                 const RamConfig& cfg) const {
  const int64_t VP = cfg.n_views * cfg.tokens_per_view();
  if (static_cast<int64_t>(tags.size()) != tokens.dim(0))
    throw std::invalid_argument("ActionHeads: provenance tags do not match token count");
  if (tokens.dim(0) < VP) throw std::invalid_argument("ActionHeads: fewer tokens than patches");
  for (int64_t i = 0; i < VP; ++i)
    if (tags[static_cast<size_t>(i)] != TokenSource::ram)
      throw std::logic_error("ActionHeads: patch tokens must lead the fused sequence");

  HeadOutputs out;
  Tensor patch = slice(tp, tokens, 0, 0, VP);
  Tensor grid = reshape(tp, score.forward(tp, patch), {cfg.n_views, cfg.grid_h(), cfg.grid_w()});
  out.heat_logits = bilinear_upsample2d(tp, grid, static_cast<int>(cfg.patch));
  const int64_t HW = cfg.height * cfg.width;
  out.heatmaps = reshape(tp, softmax_lastdim(tp, reshape(tp, out.heat_logits, {cfg.n_views, HW})),
                         {cfg.n_views, cfg.height, cfg.width});

  Tensor pooled = reshape(tp, mean_axis0(tp, tokens), {1, tokens.dim(1)});
  out.rot_logits = reshape(tp, rot.forward(tp, pooled), {3, 72});
  out.gripper_logit = grip.forward(tp, pooled);
  out.collision_logit = coll.forward(tp, pooled);
  return out;
}

void ActionHeads::collect(const std::string& prefix, ParamList& out) const {
  score.collect(prefix + "score.", out);
  rot.collect(prefix + "rot.", out);
  grip.collect(prefix + "grip.", out);
  coll.collect(prefix + "coll.", out);
}

// ---- heatmap to 3D ------------------------------------------------------------

BackprojectResult backproject_translation(const Tensor& heatmaps, const PointCloud& cloud,
                                          const std::vector<OrthoCam>& cams) {
  if (cloud.size() == 0) throw std::runtime_error("backproject_translation: empty point cloud");
  if (heatmaps.ndim() != 3 || heatmaps.dim(0) != static_cast<int64_t>(cams.size()))
    throw std::invalid_argument("backproject_translation: heatmaps do not match cameras");

  Tape scratch(false);
  const int64_t V = heatmaps.dim(0), H = heatmaps.dim(1), W = heatmaps.dim(2);
  std::vector<Tensor> maps;
  maps.reserve(static_cast<size_t>(V));
  for (int64_t v = 0; v < V; ++v)
    maps.push_back(reshape(scratch, slice(scratch, heatmaps, 0, v, 1), {H, W}));

  BackprojectResult best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < cloud.size(); ++i) {
    double s = 0;
    for (int64_t v = 0; v < V; ++v) {
      auto uvd = project(cams[static_cast<size_t>(v)], cloud.xyz[i]);
      if (uvd[2] <= 0) continue;
      s += bilinear_sample(maps[static_cast<size_t>(v)], uvd[0], uvd[1]);
    }
    if (s > best_score) {  // strict: ties keep the lowest index
      best_score = s;
      best.point = cloud.xyz[i];
      best.index = static_cast<int64_t>(i);
    }
  }
  best.score = best_score;
  return best;
}

// ---- losses -------------------------------------------------------------------

void LossWeights::validate() const {
  if (trans < 0 || rot < 0 || gripper < 0 || collision < 0)
    throw std::invalid_argument("LossWeights: weights must be nonnegative");
}

KeyframeTarget keyframe_target(const RawAction& a) {
  KeyframeTarget t;
  t.trans = {a.trans[0], a.trans[1], a.trans[2]};
  t.rot_bins = discretize_rotation(a.rot);
  auto [g, c] = binarize_flags(a.gripper, a.collision);
  t.gripper = g;
  t.collision = c;
  return t;
}

Tensor gaussian_heat_targets(const std::vector<OrthoCam>& cams, Vec3 p, double sigma, Dtype dt) {
  const int64_t V = static_cast<int64_t>(cams.size());
  const int64_t H = cams[0].height, W = cams[0].width;
  Tensor out = Tensor::zeros({V, H, W}, dt);
  for (int64_t v = 0; v < V; ++v) {
    Tensor g = gaussian_target(cams[static_cast<size_t>(v)], p, sigma);
    for (int64_t i = 0; i < H * W; ++i) out.set(v * H * W + i, g.at(i));
  }
  return out;
}

Tensor heatmap_ce(Tape& tp, const Tensor& logits, const Tensor& targets) {
  const int64_t V = logits.dim(0), HW = logits.dim(1) * logits.dim(2);
  Tensor lsm = log_softmax_lastdim(tp, reshape(tp, logits, {V, HW}));
  Tensor t = reshape(tp, targets, {V, HW});
  return scale(tp, sum_all(tp, mul(tp, lsm, t)), -1.0 / static_cast<double>(V));
}

PredictedAction to_distribution(Tape& tp, const HeadOutputs& h) {
  PredictedAction p;
  p.heat_logits = h.heat_logits;
  p.rot_rows = softmax_lastdim(tp, h.rot_logits);
  p.gripper_prob = sigmoid(tp, h.gripper_logit);
  p.collision_prob = sigmoid(tp, h.collision_logit);
  return p;
}

namespace {

// -(y log p + (1-y) log(1-p)) for a [1,1] probability
Tensor bce(Tape& tp, const Tensor& prob, int y) {
  Tensor x = y != 0 ? prob : sub(tp, Tensor::full({1, 1}, prob.dtype(), 1.0), prob);
  return scale(tp, sum_all(tp, log(tp, x)), -1.0);
}

}  // namespace

LossReport total_loss(Tape& tp, const PredictedAction& pred, const Tensor& coarse_logits,
                      const std::vector<OrthoCam>& fine_cams,
                      const std::vector<OrthoCam>& coarse_cams, const KeyframeTarget& gt,
                      Vec3 predicted_trans, const LossWeights& w, double sigma) {
  w.validate();
  if (pred.rot_rows.ndim() != 2 || pred.rot_rows.dim(0) != 3 || pred.rot_rows.dim(1) != 72)
    throw std::invalid_argument("total_loss: rotation rows must be [3,72]");

  LossReport rep;
  Tensor fine_ce = heatmap_ce(tp, pred.heat_logits,
                              gaussian_heat_targets(fine_cams, gt.trans, sigma,
                                                    pred.heat_logits.dtype()));

  Tensor onehot = Tensor::zeros({3, 72}, pred.rot_rows.dtype());
  for (int axis = 0; axis < 3; ++axis)
    onehot.set(axis * 72 + gt.rot_bins[static_cast<size_t>(axis)], 1.0);
  Tensor diff = sub(tp, pred.rot_rows, onehot);
  Tensor brier = sum_all(tp, mul(tp, diff, diff));

  Tensor g_bce = bce(tp, pred.gripper_prob, gt.gripper);
  Tensor c_bce = bce(tp, pred.collision_prob, gt.collision);

  Tensor total = add(tp, add(tp, scale(tp, fine_ce, w.trans), scale(tp, brier, w.rot)),
                     add(tp, scale(tp, g_bce, w.gripper), scale(tp, c_bce, w.collision)));
  if (coarse_logits.defined()) {
    Tensor coarse_ce = heatmap_ce(tp, coarse_logits,
                                  gaussian_heat_targets(coarse_cams, gt.trans, sigma,
                                                        coarse_logits.dtype()));
    rep.coarse_ce = coarse_ce.at(0);
    total = add(tp, total, coarse_ce);
  }

  rep.trans_ce = fine_ce.at(0);
  rep.rot_brier = brier.at(0);
  rep.gripper_bce = g_bce.at(0);
  rep.collision_bce = c_bce.at(0);
  // the reported total is the exact double-precision weighted sum; the tape
  // scalar may differ by model-dtype rounding
  rep.total_value = w.trans * rep.trans_ce + w.rot * rep.rot_brier + w.gripper * rep.gripper_bce +
                    w.collision * rep.collision_bce + rep.coarse_ce;
  Vec3 d = predicted_trans - gt.trans;
  rep.trans_l2 = dot(d, d);
  rep.total = total;

  for (double v : {rep.trans_ce, rep.rot_brier, rep.gripper_bce, rep.collision_bce, rep.coarse_ce,
                   rep.total_value, total.at(0)})
    if (!std::isfinite(v)) throw std::runtime_error("total_loss: non-finite loss");
  return rep;
}

// ---- discrete policy ----------------------------------------------------------

RawAction DiscreteAction::to_raw() const {
  RawAction a;
  a.trans = {trans.x, trans.y, trans.z};
  std::array<int, 3> bins{0, 0, 0};
  for (int axis = 0; axis < 3; ++axis) {
    int best = 0;
    for (int k = 1; k < 72; ++k)
      if (rot_rows.at(axis * 72 + k) > rot_rows.at(axis * 72 + best)) best = k;
    bins[static_cast<size_t>(axis)] = best;
  }
  a.rot = undiscretize_rotation(bins);
  a.gripper = gripper_prob >= 0.5 ? 1 : 0;
  a.collision = collision_prob >= 0.5 ? 1 : 0;
  return a;
}

void DiscretePolicyConfig::validate() const {
  ram.validate();
  if (ram.n_arms != 1)
    throw std::invalid_argument("DiscretePolicyConfig: discrete tasks are single-arm");
}

DiscretePolicy::DiscretePolicy(Rng& rng, DiscretePolicyConfig c) : cfg(std::move(c)) {
  cfg.validate();
  coarse = RamStage(rng, cfg.ram);
  fine = RamStage(rng, cfg.ram);
  fusion = PloFusion(rng, cfg.ram.dim, cfg.ram.heads, cfg.ram.dt);
  heads = ActionHeads(rng, cfg.ram.dim, cfg.ram.dt);
}

void DiscretePolicy::set_extractor(FrozenFeatureExtractor fx) { extractor = std::move(fx); }

DiscretePolicy::Prediction DiscretePolicy::predict(const PointCloud& cloud,
                                                   const RobotState& state,
                                                   const std::string& language) const {
  Tape tp(false);
  auto cams = standard_rig(static_cast<int>(cfg.ram.n_views), static_cast<int>(cfg.ram.height),
                           static_cast<int>(cfg.ram.width));
  auto views = render_views(cams, cloud);
  auto cf = coarse.forward(tp, views, state, language);

  Prediction out;
  out.coarse_loc = heatmap_argmax(cf.heatmaps);
  out.anchor = backproject_anchor(views, out.coarse_loc);
  out.fine_cams = zoom_crop(cams, out.anchor, cfg.ram.zoom);
  auto zviews = render_views(out.fine_cams, cloud);
  auto ff = fine.forward(tp, zviews, state, language);

  Tensor grasp;
  if (cfg.use_gpa) {
    if (!extractor.c1.w.defined())
      throw std::logic_error("DiscretePolicy: grasp feature extractor not set");
    grasp = extractor.features(tp, zviews);
  }
  auto fused = fusion.forward(tp, grasp, ff.tokens);
  auto ho = heads.forward(tp, fused.tokens, fused.tags, cfg.ram);

  auto bp = backproject_translation(ho.heatmaps, cloud, out.fine_cams);
  out.action.trans = bp.point;
  out.action.rot_rows = softmax_lastdim(tp, ho.rot_logits);
  out.action.gripper_prob = sigmoid(tp, ho.gripper_logit).at(0);
  out.action.collision_prob = sigmoid(tp, ho.collision_logit).at(0);
  return out;
}

LossReport DiscretePolicy::train_forward(Tape& tp, const PointCloud& cloud,
                                         const RobotState& state, const std::string& language,
                                         const KeyframeTarget& gt, const LossWeights& w,
                                         Rng& jitter) const {
  auto cams = standard_rig(static_cast<int>(cfg.ram.n_views), static_cast<int>(cfg.ram.height),
                           static_cast<int>(cfg.ram.width));
  auto views = render_views(cams, cloud);
  auto cf = coarse.forward(tp, views, state, language);

  Vec3 anchor = gt.trans + Vec3{jitter.uniform(-0.02, 0.02), jitter.uniform(-0.02, 0.02),
                                jitter.uniform(-0.02, 0.02)};
  auto zcams = zoom_crop(cams, anchor, cfg.ram.zoom);
  auto zviews = render_views(zcams, cloud);
  auto ff = fine.forward(tp, zviews, state, language);

  Tensor grasp;
  if (cfg.use_gpa) {
    if (!extractor.c1.w.defined())
      throw std::logic_error("DiscretePolicy: grasp feature extractor not set");
    grasp = extractor.features(tp, zviews);
  }
  auto fused = fusion.forward(tp, grasp, ff.tokens);
  auto ho = heads.forward(tp, fused.tokens, fused.tags, cfg.ram);
  auto bp = backproject_translation(ho.heatmaps, cloud, zcams);
  return total_loss(tp, to_distribution(tp, ho), cf.heat_logits, zcams, cams, gt, bp.point, w,
                    cfg.ram.sigma);
}

void DiscretePolicy::collect(const std::string& prefix, ParamList& out) const {
  coarse.collect(prefix + "coarse.", out);
  fine.collect(prefix + "fine.", out);
  if (extractor.c1.w.defined()) extractor.collect(prefix + "extractor.", out);
  fusion.collect(prefix + "fusion.", out);
  heads.collect(prefix + "heads.", out);
}

std::vector<Tensor> DiscretePolicy::trainable() const {
  ParamList all;
  collect("", all);
  std::vector<Tensor> out;
  for (auto& [name, t] : all)
    if (t.requires_grad()) out.push_back(t);
  return out;
}

// ---- training pairs and evaluation ---------------------------------------------

std::vector<TrainPair> keyframe_training_pairs(const Demonstration& demo, double v_eps) {
  auto kfs = discover_keyframes(demo, v_eps);
  DiscreteWorld w = make_discrete_world(demo.task_id, demo.seed);
  std::vector<TrainPair> out;
  out.reserve(kfs.size());
  for (int64_t kf : kfs) {
    const RawAction& a = demo.frames[static_cast<size_t>(kf)].action.at(0);
    TrainPair p;
    p.cloud = world_cloud(w);
    p.state = discrete_robot_state(w);
    p.language = demo.frames.front().language;
    p.target = keyframe_target(a);
    out.push_back(std::move(p));
    step_discrete_world(w, a);
  }
  return out;
}

EpisodeResult evaluate_episode(const DiscretePolicyFn& policy, DiscreteWorld& world, int max_steps,
                               const std::vector<KeyframeTarget>* oracle_targets) {
  EpisodeResult r;
  r.task = world.task_id;
  r.seed = world.seed;
  const std::string lang = task_language(world.task_id);

  int aligned = 0, rot_hits = 0, grip_hits = 0, coll_hits = 0;
  double l2_sum = 0;
  for (int i = 0; i < max_steps; ++i) {
    PointCloud cloud = world_cloud(world);
    RobotState st = discrete_robot_state(world);
    RawAction a = policy(cloud, st, lang);
    r.actions.push_back(a);

    if (oracle_targets && i < static_cast<int>(oracle_targets->size())) {
      const KeyframeTarget& gt = (*oracle_targets)[static_cast<size_t>(i)];
      Vec3 d = Vec3{a.trans[0], a.trans[1], a.trans[2]} - gt.trans;
      double l2 = dot(d, d);
      r.trans_trace.push_back(l2);
      l2_sum += l2;
      auto bins = discretize_rotation(a.rot);
      for (int axis = 0; axis < 3; ++axis)
        rot_hits += bins[static_cast<size_t>(axis)] == gt.rot_bins[static_cast<size_t>(axis)];
      grip_hits += (a.gripper != 0) == (gt.gripper != 0);
      coll_hits += (a.collision != 0) == (gt.collision != 0);
      ++aligned;
    }

    auto sr = step_discrete_world(world, a);
    ++r.steps;
    if (sr.success) {
      r.success = true;
      break;
    }
  }
  if (aligned > 0) {
    r.trans_l2 = l2_sum / aligned;
    r.rot_bin_acc = rot_hits / (3.0 * aligned);
    r.gripper_acc = static_cast<double>(grip_hits) / aligned;
    r.collision_acc = static_cast<double>(coll_hits) / aligned;
  }
  return r;
}

std::string episode_json(const EpisodeResult& r) {
  nlohmann::json j;
  j["task"] = r.task;
  j["seed"] = r.seed;
  j["success"] = r.success;
  j["steps"] = r.steps;
  j["trans_l2"] = r.trans_l2;
  j["rot_bin_acc"] = r.rot_bin_acc;
  j["gripper_acc"] = r.gripper_acc;
  j["collision_acc"] = r.collision_acc;
  return j.dump();
}

}  // namespace gparam
