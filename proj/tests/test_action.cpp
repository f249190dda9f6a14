#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "gparam/action.hpp"
#include "gparam/rng.hpp"

using namespace gparam;

namespace {

DiscretePolicyConfig small_policy_cfg(bool use_gpa) {
  DiscretePolicyConfig cfg;
  cfg.ram.dim = 32;
  cfg.ram.patch = 8;
  cfg.ram.heads = 4;
  cfg.ram.n_views = 2;
  cfg.ram.height = 32;
  cfg.ram.width = 32;
  cfg.use_gpa = use_gpa;
  return cfg;
}

Tensor filled(Shape shape, Dtype dt, double base) {
  Tensor t = Tensor::zeros(shape, dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, base + 0.01 * ((i * 31) % 17 - 8));
  return t;
}

}  // namespace

TEST_CASE("keyframe_target discretizes an expert action") {
  RawAction a;
  a.trans = {0.12, -0.03, 0.02};
  a.rot = {359.9, 7.4, 180.0};
  a.gripper = 1;
  a.collision = 0;
  auto t = keyframe_target(a);
  CHECK(t.trans.x == 0.12);
  CHECK(t.rot_bins == std::array<int, 3>{71, 1, 36});
  CHECK(t.gripper == 1);
  CHECK(t.collision == 0);
}

TEST_CASE("action heads: shapes, normalization, provenance guards") {
  Rng rng(1);
  RamConfig cfg = small_policy_cfg(false).ram;
  ActionHeads heads(rng, cfg.dim, cfg.dt);
  const int64_t VP = cfg.n_views * cfg.tokens_per_view();

  Tensor tokens = filled({VP + 3, cfg.dim}, Dtype::f32, 0.1);
  std::vector<TokenSource> tags(static_cast<size_t>(VP), TokenSource::ram);
  tags.push_back(TokenSource::ram);  // e.g. language tokens
  tags.push_back(TokenSource::grasp);
  tags.push_back(TokenSource::grasp);

  Tape tp(false);
  auto out = heads.forward(tp, tokens, tags, cfg);
  CHECK(out.heat_logits.shape() == Shape{2, 32, 32});
  CHECK(out.heatmaps.shape() == Shape{2, 32, 32});
  CHECK(out.rot_logits.shape() == Shape{3, 72});
  CHECK(out.gripper_logit.shape() == Shape{1, 1});
  CHECK(out.collision_logit.shape() == Shape{1, 1});
  for (int v = 0; v < 2; ++v) {
    double s = 0;
    for (int64_t i = 0; i < 32 * 32; ++i) s += out.heatmaps.at(v * 32 * 32 + i);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  std::vector<TokenSource> short_tags(static_cast<size_t>(VP), TokenSource::ram);
  CHECK_THROWS_AS(heads.forward(tp, tokens, short_tags, cfg), std::invalid_argument);
  auto bad = tags;
  bad[0] = TokenSource::grasp;
  CHECK_THROWS_AS(heads.forward(tp, tokens, bad, cfg), std::logic_error);
}

TEST_CASE("backproject_translation: deltas, Gaussians, ties, rescale invariance") {
  auto cams = standard_rig(5, 64, 64);
  PointCloud pc;
  Rng rng(2);
  for (int i = 0; i < 40; ++i)
    pc.push({rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0.0, 0.15)}, 1, 1, 1);

  // single-view delta at the projection of a chosen point
  {
    const Vec3 q = pc.xyz[17];
    std::vector<OrthoCam> one{cams[0]};
    auto uvd = project(cams[0], q);
    Tensor maps = Tensor::zeros({1, 64, 64}, Dtype::f32);
    maps.set(static_cast<int64_t>(uvd[1]) * 64 + static_cast<int64_t>(uvd[0]), 1.0);
    auto r = backproject_translation(maps, pc, one);
    CHECK(r.index == 17);
    CHECK(r.point.x == q.x);
  }

  // Gaussians centered on q's projections in all five views pick q exactly
  {
    const Vec3 q = pc.xyz[23];
    Tensor maps = gaussian_heat_targets(cams, q, 1.5, Dtype::f32);
    auto r = backproject_translation(maps, pc, cams);
    CHECK(r.index == 23);

    // uniform positive rescaling cannot change the arg max
    Tensor scaled = maps.clone();
    for (int64_t i = 0; i < scaled.numel(); ++i) scaled.set(i, 3.7 * scaled.at(i));
    CHECK(backproject_translation(scaled, pc, cams).index == 23);
  }

  // uniform heatmaps tie every point; the lowest index wins
  {
    Tensor maps = Tensor::full({5, 64, 64}, Dtype::f32, 1.0 / (64 * 64));
    auto r = backproject_translation(maps, pc, cams);
    CHECK(r.index == 0);
  }

  PointCloud empty;
  Tensor maps = Tensor::full({5, 64, 64}, Dtype::f32, 1.0);
  CHECK_THROWS_WITH_AS(backproject_translation(maps, empty, cams), doctest::Contains("empty"),
                       std::runtime_error);
}

TEST_CASE("total_loss: components, identity, analytic values, errors") {
  auto cams = standard_rig(2, 16, 16);
  KeyframeTarget gt;
  gt.trans = {0.05, -0.02, 0.03};
  gt.rot_bins = {3, 10, 71};
  gt.gripper = 1;
  gt.collision = 0;
  LossWeights w;

  // perfect probability-space prediction: rot/gripper/collision components 0
  {
    Tape tp;
    PredictedAction p;
    p.heat_logits = filled({2, 16, 16}, Dtype::f64, 0.0);
    p.rot_rows = Tensor::zeros({3, 72}, Dtype::f64);
    for (int axis = 0; axis < 3; ++axis)
      p.rot_rows.set(axis * 72 + gt.rot_bins[static_cast<size_t>(axis)], 1.0);
    p.gripper_prob = Tensor::full({1, 1}, Dtype::f64, 1.0);
    p.collision_prob = Tensor::full({1, 1}, Dtype::f64, 0.0);
    auto rep = total_loss(tp, p, Tensor(), cams, cams, gt, gt.trans, w, 1.5);
    CHECK(rep.rot_brier == 0.0);
    CHECK(rep.gripper_bce == 0.0);
    CHECK(rep.collision_bce == 0.0);
    CHECK(rep.trans_l2 == 0.0);
    CHECK(rep.coarse_ce == 0.0);
    CHECK(rep.trans_ce > 0.0);
    CHECK(rep.total_value == doctest::Approx(rep.trans_ce).epsilon(1e-12));
  }

  // gripper probability 1/2 against target 1 costs exactly ln 2
  {
    Tape tp;
    PredictedAction p;
    p.heat_logits = filled({2, 16, 16}, Dtype::f64, 0.0);
    p.rot_rows = Tensor::full({3, 72}, Dtype::f64, 1.0 / 72);
    p.gripper_prob = Tensor::full({1, 1}, Dtype::f64, 0.5);
    p.collision_prob = Tensor::full({1, 1}, Dtype::f64, 0.5);
    auto rep = total_loss(tp, p, Tensor(), cams, cams, gt, {0, 0, 0}, w, 1.5);
    CHECK(rep.gripper_bce == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(rep.collision_bce == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // uniform rows against a one-hot: sum (1/72)^2 * 71 + (1 - 1/72)^2 per axis
    double per_axis = 71.0 / (72.0 * 72.0) + std::pow(1.0 - 1.0 / 72.0, 2.0);
    CHECK(rep.rot_brier == doctest::Approx(3 * per_axis).epsilon(1e-9));
    Vec3 d = Vec3{0, 0, 0} - gt.trans;
    CHECK(rep.trans_l2 == doctest::Approx(dot(d, d)));
  }

  // manual cross-entropy oracle + weighted-sum identity with a coarse term
  {
    Tape tp;
    PredictedAction p;
    p.heat_logits = filled({2, 16, 16}, Dtype::f64, 0.2);
    p.rot_rows = Tensor::full({3, 72}, Dtype::f64, 1.0 / 72);
    p.gripper_prob = Tensor::full({1, 1}, Dtype::f64, 0.7);
    p.collision_prob = Tensor::full({1, 1}, Dtype::f64, 0.25);
    Tensor coarse_logits = filled({2, 16, 16}, Dtype::f64, -0.1);
    LossWeights lw;
    lw.trans = 0.5;
    lw.rot = 2.0;
    lw.gripper = 1.5;
    lw.collision = 0.25;
    auto rep = total_loss(tp, p, coarse_logits, cams, cams, gt, {0.01, 0, 0}, lw, 1.5);

    // independent CE computation in plain double loops
    Tensor targets = gaussian_heat_targets(cams, gt.trans, 1.5, Dtype::f64);
    double ce = 0;
    for (int v = 0; v < 2; ++v) {
      double mx = -1e300, z = 0;
      for (int64_t i = 0; i < 256; ++i) mx = std::max(mx, p.heat_logits.at(v * 256 + i));
      for (int64_t i = 0; i < 256; ++i) z += std::exp(p.heat_logits.at(v * 256 + i) - mx);
      double logz = mx + std::log(z);
      for (int64_t i = 0; i < 256; ++i)
        ce -= targets.at(v * 256 + i) * (p.heat_logits.at(v * 256 + i) - logz);
    }
    ce /= 2.0;
    CHECK(rep.trans_ce == doctest::Approx(ce).epsilon(1e-9));
    CHECK(rep.gripper_bce == doctest::Approx(-std::log(0.7)).epsilon(1e-9));
    CHECK(rep.collision_bce == doctest::Approx(-std::log(0.75)).epsilon(1e-9));
    CHECK(rep.coarse_ce > 0.0);
    double expect = lw.trans * rep.trans_ce + lw.rot * rep.rot_brier +
                    lw.gripper * rep.gripper_bce + lw.collision * rep.collision_bce + rep.coarse_ce;
    CHECK(std::abs(rep.total_value - expect) < 1e-6);
    CHECK(rep.total.at(0) == doctest::Approx(rep.total_value).epsilon(1e-6));
  }

  // certainty in the wrong direction explodes -> explicit error
  {
    Tape tp;
    PredictedAction p;
    p.heat_logits = filled({2, 16, 16}, Dtype::f64, 0.0);
    p.rot_rows = Tensor::full({3, 72}, Dtype::f64, 1.0 / 72);
    p.gripper_prob = Tensor::full({1, 1}, Dtype::f64, 0.0);  // target is 1
    p.collision_prob = Tensor::full({1, 1}, Dtype::f64, 0.5);
    CHECK_THROWS_WITH_AS(total_loss(tp, p, Tensor(), cams, cams, gt, {0, 0, 0}, w, 1.5),
                         doctest::Contains("non-finite"), std::runtime_error);
  }

  LossWeights bad;
  bad.rot = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("loss gradients check out in double precision") {
  auto cams = standard_rig(2, 16, 16);
  KeyframeTarget gt;
  gt.trans = {0.03, 0.01, 0.02};
  gt.rot_bins = {5, 40, 71};
  gt.gripper = 1;
  gt.collision = 0;
  LossWeights w;
  w.trans = 0.7;
  w.rot = 1.3;

  Tensor heat = filled({2, 16, 16}, Dtype::f64, 0.1);
  Tensor rotl = filled({3, 72}, Dtype::f64, -0.2);
  Tensor flags = filled({2, 1}, Dtype::f64, 0.3);

  auto run = [&](Tape& tp, const Tensor& h, const Tensor& r, const Tensor& f) {
    PredictedAction p;
    p.heat_logits = h;
    p.rot_rows = softmax_lastdim(tp, r);
    Tensor sf = sigmoid(tp, f);
    p.gripper_prob = slice(tp, sf, 0, 0, 1);
    p.collision_prob = slice(tp, sf, 0, 1, 1);
    return total_loss(tp, p, Tensor(), cams, cams, gt, {0, 0, 0}, w, 1.5).total;
  };
  auto gh = grad_check([&](Tape& tp, const Tensor& x) { return run(tp, x, rotl, flags); }, heat);
  CHECK(gh.max_rel_err < 1e-4);
  heat.set_requires_grad(false);
  auto gr = grad_check([&](Tape& tp, const Tensor& x) { return run(tp, heat, x, flags); }, rotl);
  CHECK(gr.max_rel_err < 1e-4);
  auto gf = grad_check([&](Tape& tp, const Tensor& x) { return run(tp, heat, rotl, x); }, flags);
  CHECK(gf.max_rel_err < 1e-4);
}

TEST_CASE("discrete action converts to a raw world command") {
  DiscreteAction a;
  a.trans = {0.1, 0.2, 0.05};
  a.rot_rows = Tensor::zeros({3, 72}, Dtype::f32);
  a.rot_rows.set(0 * 72 + 7, 0.9);
  a.rot_rows.set(1 * 72 + 0, 0.8);
  a.rot_rows.set(2 * 72 + 71, 0.7);
  a.gripper_prob = 0.51;
  a.collision_prob = 0.49;
  RawAction r = a.to_raw();
  CHECK(r.trans[2] == 0.05);
  CHECK(r.rot[0] == doctest::Approx(37.5));
  CHECK(r.rot[1] == doctest::Approx(2.5));
  CHECK(r.rot[2] == doctest::Approx(357.5));
  CHECK(r.gripper == 1);
  CHECK(r.collision == 0);
}

TEST_CASE("training pairs replay the closed-loop distribution") {
  auto demo = generate_discrete_demo("pick-place", 4);
  auto pairs = keyframe_training_pairs(demo);
  CHECK(pairs.size() == demo.oracle_keyframes.size());
  CHECK(pairs.front().language == demo.frames.front().language);
  // first observation matches a fresh world
  auto w0 = make_discrete_world("pick-place", 4);
  auto fresh = world_cloud(w0);
  REQUIRE(pairs.front().cloud.size() == fresh.size());
  double d = 0;
  for (size_t i = 0; i < fresh.size(); ++i) d += norm(pairs.front().cloud.xyz[i] - fresh.xyz[i]);
  CHECK(d == 0.0);
  // targets equal the demo's keyframe actions
  for (size_t j = 0; j < pairs.size(); ++j) {
    const auto& act = demo.frames[static_cast<size_t>(demo.oracle_keyframes[j])].action[0];
    CHECK(pairs[j].target.trans.x == act.trans[0]);
    CHECK(pairs[j].target.gripper == act.gripper);
  }
  // each later observation reflects having executed the previous target
  for (size_t j = 1; j < pairs.size(); ++j) {
    const auto& prev = pairs[j - 1].target;
    CHECK(pairs[j].state.ee_pose[0][0] == doctest::Approx(prev.trans.x));
    CHECK(pairs[j].state.ee_pose[0][2] == doctest::Approx(prev.trans.z));
    CHECK(pairs[j].state.gripper_open[0] == (prev.gripper ? 0.0 : 1.0));
  }
}

TEST_CASE("evaluate_episode: oracle succeeds with perfect metrics") {
  for (const char* task : {"pick-place", "peg-insert", "stack", "drawer-put"}) {
    for (uint64_t seed : {11ull, 12ull}) {
      auto demo = generate_discrete_demo(task, seed);
      auto pairs = keyframe_training_pairs(demo);
      std::vector<KeyframeTarget> targets;
      for (auto& p : pairs) targets.push_back(p.target);

      size_t idx = 0;
      DiscretePolicyFn oracle = [&](const PointCloud&, const RobotState&, const std::string&) {
        const auto& t = targets[std::min(idx, targets.size() - 1)];
        ++idx;
        RawAction a;
        a.trans = {t.trans.x, t.trans.y, t.trans.z};
        a.rot = undiscretize_rotation(t.rot_bins);
        a.gripper = t.gripper;
        a.collision = t.collision;
        return a;
      };
      auto world = make_discrete_world(task, seed);
      auto res = evaluate_episode(oracle, world, 16, &targets);
      CHECK(res.success);
      CHECK(res.steps == static_cast<int64_t>(targets.size()));
      CHECK(res.trans_l2 == 0.0);
      CHECK(res.rot_bin_acc == 1.0);
      CHECK(res.gripper_acc == 1.0);
      CHECK(res.collision_acc == 1.0);
      CHECK(res.trans_trace.size() == targets.size());
    }
  }

  // max_steps = 0: immediate failure, nothing logged
  auto world = make_discrete_world("pick-place", 5);
  auto res = evaluate_episode(
      [](const PointCloud&, const RobotState&, const std::string&) { return RawAction{}; }, world,
      0, nullptr);
  CHECK(!res.success);
  CHECK(res.steps == 0);
  CHECK(res.actions.empty());

  auto j = episode_json(res);
  CHECK(j.find("\"task\"") != std::string::npos);
  CHECK(j.find("\"success\"") != std::string::npos);
  CHECK(j.find("\"trans_l2\"") != std::string::npos);
}

TEST_CASE("untrained policy is no better than a random-point baseline") {
  Rng rng(6);
  DiscretePolicy policy(rng, small_policy_cfg(false));
  int untrained_wins = 0, random_wins = 0;
  Rng baseline(7);
  for (uint64_t seed = 100; seed < 110; ++seed) {
    auto w1 = make_discrete_world("pick-place", seed);
    auto res1 = evaluate_episode(
        [&](const PointCloud& pc, const RobotState& st, const std::string& lang) {
          return policy.predict(pc, st, lang).action.to_raw();
        },
        w1, 6, nullptr);
    untrained_wins += res1.success;

    auto w2 = make_discrete_world("pick-place", seed);
    auto res2 = evaluate_episode(
        [&](const PointCloud& pc, const RobotState&, const std::string&) {
          RawAction a;
          const Vec3 p = pc.xyz[static_cast<size_t>(baseline.uniform(0, 1) * (pc.size() - 1))];
          a.trans = {p.x, p.y, p.z};
          a.rot = {0, 0, baseline.uniform(0, 360)};
          a.gripper = baseline.uniform(0, 1) < 0.5 ? 0 : 1;
          return a;
        },
        w2, 6, nullptr);
    random_wins += res2.success;
  }
  CHECK(untrained_wins <= 2);
  CHECK(random_wins <= 2);
}

TEST_CASE("policy prediction plumbing and the GPA wiring guard") {
  Rng rng(8);
  DiscretePolicy plain(rng, small_policy_cfg(false));
  auto world = make_discrete_world("stack", 21);
  auto cloud = world_cloud(world);
  auto st = discrete_robot_state(world);
  auto lang = task_language("stack");

  auto pred = plain.predict(cloud, st, lang);
  double row0 = 0;
  for (int k = 0; k < 72; ++k) row0 += pred.action.rot_rows.at(k);
  CHECK(row0 == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(pred.action.gripper_prob >= 0.0);
  CHECK(pred.action.gripper_prob <= 1.0);
  // the predicted translation is a point of the observed cloud
  bool found = false;
  for (auto& p : cloud.xyz) found = found || (p.x == pred.action.trans.x && p.z == pred.action.trans.z);
  CHECK(found);
  // refinement cameras really zoom in
  CHECK(pred.fine_cams[0].scale == doctest::Approx(0.5 / 32 / plain.cfg.ram.zoom));

  // a GPA policy without its extractor is a wiring error
  Rng rng2(9);
  DiscretePolicy gpa(rng2, small_policy_cfg(true));
  CHECK_THROWS_AS(gpa.predict(cloud, st, lang), std::logic_error);

  // with an extractor attached, prediction works and extractor params are
  // checkpointed but not trainable
  GpaConfig gcfg;
  gcfg.n_views = 2;
  gcfg.height = 32;
  gcfg.width = 32;
  auto demo = generate_discrete_demo("stack", 22);
  auto events = extract_grasp_events(demo);
  REQUIRE(!events.empty());
  Rng rng3(10);
  auto pre = pretrain_grasp_detector(rng3, gcfg, events, 1);
  gpa.set_extractor(strip_and_freeze(pre.detector));
  auto pred2 = gpa.predict(cloud, st, lang);
  CHECK(pred2.action.rot_rows.numel() == 3 * 72);

  ParamList all;
  gpa.collect("", all);
  bool has_frozen = false;
  for (auto& [name, t] : all)
    if (name.rfind("extractor.", 0) == 0) {
      has_frozen = true;
      CHECK(!t.requires_grad());
    }
  CHECK(has_frozen);
  // non-trainable: four frozen conv layers (w + b) plus the two fixed
  // language hash tables of the coarse and fine stages
  auto train = gpa.trainable();
  CHECK(train.size() == all.size() - 10);
}
