#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "doctest.h"
#include "gparam/continuous_world.hpp"
#include "gparam/rng.hpp"
#include "gparam/world.hpp"

using namespace gparam;

namespace {

double dist3(const std::array<double, 3>& a, Vec3 b) {
  return std::sqrt((a[0] - b.x) * (a[0] - b.x) + (a[1] - b.y) * (a[1] - b.y) +
                   (a[2] - b.z) * (a[2] - b.z));
}

bool clouds_identical(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.xyz[i].x != b.xyz[i].x || a.xyz[i].y != b.xyz[i].y || a.xyz[i].z != b.xyz[i].z)
      return false;
    if (a.rgb[i] != b.rgb[i]) return false;
  }
  return true;
}

bool demos_identical(const Demonstration& a, const Demonstration& b) {
  if (a.frames.size() != b.frames.size()) return false;
  if (a.oracle_keyframes != b.oracle_keyframes) return false;
  for (size_t t = 0; t < a.frames.size(); ++t) {
    const Frame &fa = a.frames[t], &fb = b.frames[t];
    if (fa.action.size() != fb.action.size()) return false;
    for (size_t k = 0; k < fa.action.size(); ++k) {
      if (fa.action[k].trans != fb.action[k].trans || fa.action[k].rot != fb.action[k].rot)
        return false;
      if (fa.action[k].gripper != fb.action[k].gripper) return false;
      if (fa.action[k].collision != fb.action[k].collision) return false;
    }
    if (fa.state.ee_pose != fb.state.ee_pose) return false;
    if (fa.state.joint_vel != fb.state.joint_vel) return false;
    if (fa.language != fb.language) return false;
    if (!clouds_identical(fa.obs.cloud, fb.obs.cloud)) return false;
  }
  return true;
}

// Minimal demo with prescribed per-frame velocity magnitude and gripper flag.
Demonstration synthetic_demo(const std::vector<double>& vx, const std::vector<int>& grip) {
  Demonstration d;
  d.task_id = "pick-place";
  for (size_t t = 0; t < vx.size(); ++t) {
    Frame f;
    RawAction a;
    a.gripper = grip[t];
    f.action = {a};
    f.state.joint_vel = {vx[t], 0, 0, 0};
    d.frames.push_back(std::move(f));
  }
  return d;
}

const RigidObject& named(const DiscreteWorld& w, const std::string& name) {
  for (const auto& o : w.objects)
    if (o.name == name) return o;
  REQUIRE(false);
  return w.objects[0];
}

}  // namespace

TEST_CASE("rotation binning matches the worked example and round-trips") {
  auto bins = discretize_rotation({359.9, -5.0, 720.0});
  CHECK(bins == std::array<int, 3>{71, 71, 0});
  auto back = undiscretize_rotation(bins);
  CHECK(back[0] == doctest::Approx(357.5));
  CHECK(back[1] == doctest::Approx(357.5));
  CHECK(back[2] == doctest::Approx(2.5));

  Rng rng(99);
  for (int i = 0; i < 10000; ++i) {
    double theta = rng.uniform(-720.0, 720.0);
    auto b = discretize_rotation({theta, 0, 0});
    CHECK(b[0] >= 0);
    CHECK(b[0] < 72);
    double rec = undiscretize_rotation(b)[0];
    double diff = std::abs(rec - wrap_deg(theta));
    if (diff > 180) diff = 360 - diff;
    CHECK(diff <= 2.5 + 1e-9);
  }

  CHECK(bin_distance(71, 0) == 1);
  CHECK(bin_distance(0, 36) == 36);
  CHECK(bin_distance(5, 5) == 0);
  CHECK_THROWS_AS(discretize_rotation({std::nan(""), 0, 0}), std::invalid_argument);
}

TEST_CASE("flag binarization thresholds at one half") {
  CHECK(binarize_flags(0.5, 0.49) == std::pair<int, int>{1, 0});
  CHECK(binarize_flags(0.0, 1.0) == std::pair<int, int>{0, 1});
  CHECK(binarize_flags(0.999, 0.001) == std::pair<int, int>{1, 0});
  CHECK_THROWS_AS(binarize_flags(std::nan(""), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(binarize_flags(0.0, INFINITY), std::invalid_argument);
}

TEST_CASE("keyframe discovery flags gripper flips, stillness, and the final frame") {
  // gripper sequence [1,1,0,0,1] while always moving -> transitions at 2 and 4
  auto d = synthetic_demo({1, 1, 1, 1, 1}, {1, 1, 0, 0, 1});
  CHECK(discover_keyframes(d, 1e-4) == std::vector<int64_t>{2, 4});

  // constant velocity, constant gripper -> only the forced final frame
  auto d2 = synthetic_demo(std::vector<double>(10, 0.5), std::vector<int>(10, 0));
  CHECK(discover_keyframes(d2, 1e-4) == std::vector<int64_t>{9});

  // a still interior frame is a keyframe
  auto d3 = synthetic_demo({0.5, 0.5, 0.0, 0.5, 0.5}, std::vector<int>(5, 0));
  CHECK(discover_keyframes(d3, 1e-4) == std::vector<int64_t>{2, 4});

  // stillness threshold is strict: velocity exactly at v_eps is moving
  auto d4 = synthetic_demo({0.5, 1e-4, 0.5}, std::vector<int>(3, 0));
  CHECK(discover_keyframes(d4, 1e-4) == std::vector<int64_t>{2});

  CHECK_THROWS_AS(discover_keyframes(Demonstration{}, 1e-4), std::invalid_argument);
  CHECK_THROWS_AS(discover_keyframes(d, 0.0), std::invalid_argument);
}

TEST_CASE("scene sampling is deterministic, seed-sensitive, and validates tasks") {
  for (const char* task : kDiscreteTasks) {
    DiscreteWorld a = make_discrete_world(task, 7);
    DiscreteWorld b = make_discrete_world(task, 7);
    REQUIRE(a.objects.size() == b.objects.size());
    for (size_t i = 0; i < a.objects.size(); ++i) {
      CHECK(a.objects[i].pos.x == b.objects[i].pos.x);
      CHECK(a.objects[i].pos.y == b.objects[i].pos.y);
      CHECK(a.objects[i].yaw_deg == b.objects[i].yaw_deg);
    }
    DiscreteWorld c = make_discrete_world(task, 8);
    bool any_diff = false;
    for (size_t i = 0; i < a.objects.size(); ++i)
      any_diff = any_diff || a.objects[i].pos.x != c.objects[i].pos.x ||
                 a.objects[i].pos.y != c.objects[i].pos.y;
    CHECK(any_diff);
    CHECK(clouds_identical(world_cloud(a), world_cloud(b)));
    CHECK(!task_language(task).empty());
  }
  CHECK_THROWS_AS(make_discrete_world("juggle", 1), std::invalid_argument);
}

TEST_CASE("demo generation is bit-deterministic per (task, seed)") {
  for (const char* task : kDiscreteTasks) {
    Demonstration a = generate_discrete_demo(task, 3);
    Demonstration b = generate_discrete_demo(task, 3);
    CHECK(demos_identical(a, b));
    Demonstration c = generate_discrete_demo(task, 4);
    CHECK(!demos_identical(a, c));
  }
}

TEST_CASE("oracle keyframes equal first-principles discovery on generated demos") {
  for (const char* task : kDiscreteTasks) {
    for (uint64_t seed : {1, 2, 3}) {
      Demonstration d = generate_discrete_demo(task, seed);
      REQUIRE(!d.frames.empty());
      CHECK(discover_keyframes(d, 1e-4) == d.oracle_keyframes);
      for (size_t i = 1; i < d.oracle_keyframes.size(); ++i)
        CHECK(d.oracle_keyframes[i] > d.oracle_keyframes[i - 1]);
      CHECK(d.oracle_keyframes.back() == static_cast<int64_t>(d.frames.size()) - 1);
      for (const Frame& f : d.frames) {
        CHECK(f.language == task_language(task));
        CHECK(f.obs.n_cams == 5);
        CHECK(f.state.joint_vel.size() == 4);
      }
    }
  }
}

TEST_CASE("waypoint counts: peg insertion has exactly five keyframes") {
  CHECK(generate_discrete_demo("peg-insert", 11).oracle_keyframes.size() == 5);
  CHECK(generate_discrete_demo("pick-place", 11).oracle_keyframes.size() == 5);
  CHECK(generate_discrete_demo("stack", 11).oracle_keyframes.size() == 10);
  CHECK(generate_discrete_demo("drawer-put", 11).oracle_keyframes.size() == 5);
}

TEST_CASE("the grasp keyframe's translation coincides with the object") {
  for (const char* task : kDiscreteTasks) {
    Demonstration d = generate_discrete_demo(task, 21);
    auto events = extract_grasp_events(d);
    size_t expected = std::string(task) == "stack" ? 2 : 1;
    REQUIRE(events.size() == expected);

    DiscreteWorld w = make_discrete_world(task, 21);
    // the first grasp targets the first graspable object's grasp point (its
    // top-face center) at the initial pose
    const GraspEvent& ev = events[0];
    double best = 1e9;
    for (const auto& o : w.objects) {
      if (!o.graspable) continue;
      Vec3 g = o.grasp_points_local.empty() ? Vec3{0, 0, 0} : o.grasp_points_local.front();
      best = std::min(best, dist3(ev.grasp_pose.trans, o.pos + rotate_yaw(g, o.yaw_deg)));
    }
    CHECK(best < 1e-6);
    CHECK(ev.grasp_pose.gripper == 1);
    CHECK(ev.frame_index >= 1);
    CHECK(ev.obs.cloud.size() > 0);
    // the observation comes from the frame before the transition
    CHECK(clouds_identical(ev.obs.cloud,
                           d.frames[static_cast<size_t>(ev.frame_index) - 1].obs.cloud));
  }
}

TEST_CASE("replaying a demo's actions through the stepper reproduces success") {
  for (const char* task : kDiscreteTasks) {
    for (uint64_t seed : {5, 6}) {
      Demonstration d = generate_discrete_demo(task, seed);
      DiscreteWorld w = make_discrete_world(task, seed);
      bool success = false;
      for (const Frame& f : d.frames) {
        StepResult r = step_discrete_world(w, f.action[0]);
        REQUIRE(r.ok);
        success = success || r.success;
      }
      CHECK(success);
      CHECK(world_success(w));  // terminal state, not just a transient
    }
  }
}

TEST_CASE("grasping requires proximity and a compatible wrist rotation") {
  DiscreteWorld w = make_discrete_world("pick-place", 33);
  Vec3 cube = named(w, "cube").pos;
  // the cube's grasp point is its top-face center (half-height 0.016 above
  // the origin, yaw-invariant because it sits on the spin axis)
  Vec3 gp{cube.x, cube.y, cube.z + 0.016};

  // close 10 cm above the object: nothing attaches
  RawAction far{{cube.x, cube.y, cube.z + 0.10}, {0, 0, 0}, 1, 0};
  step_discrete_world(w, far);
  CHECK(w.attached == -1);

  // wrong wrist yaw at the right position: still nothing (45 deg is 9 bins
  // from every 4-fold symmetric grasp yaw)
  RawAction open_again{{cube.x, cube.y, cube.z + 0.10}, {0, 0, 0}, 0, 0};
  step_discrete_world(w, open_again);
  RawAction wrong_yaw{{gp.x, gp.y, gp.z}, {0, 0, 45}, 1, 0};
  step_discrete_world(w, wrong_yaw);
  CHECK(w.attached == -1);

  // grasp point reached with a compatible yaw: attaches
  step_discrete_world(w, {{cube.x, cube.y, cube.z + 0.10}, {0, 0, 0}, 0, 0});
  RawAction good{{gp.x, gp.y, gp.z}, {0, 0, 0}, 1, 0};
  step_discrete_world(w, good);
  CHECK(w.attached == 0);

  // the object origin is NOT the grasp point: closing there misses
  DiscreteWorld w1 = make_discrete_world("pick-place", 33);
  RawAction center{{cube.x, cube.y, cube.z}, {0, 0, 0}, 1, 0};
  step_discrete_world(w1, center);
  CHECK(w1.attached == -1);

  // symmetric yaw (90 deg for a 4-fold cube) also works after releasing
  DiscreteWorld w2 = make_discrete_world("pick-place", 33);
  RawAction sym{{gp.x, gp.y, gp.z}, {0, 0, 90}, 1, 0};
  step_discrete_world(w2, sym);
  CHECK(w2.attached == 0);
}

TEST_CASE("actions outside the workspace are rejected without mutating the world") {
  DiscreteWorld w = make_discrete_world("pick-place", 2);
  Vec3 before = w.ee_pos;
  int64_t steps_before = w.steps;
  StepResult r = step_discrete_world(w, {{0, 0, 0.60}, {0, 0, 0}, 0, 0});
  CHECK(!r.ok);
  CHECK(w.ee_pos.x == before.x);
  CHECK(w.ee_pos.z == before.z);
  CHECK(w.steps == steps_before);
  StepResult r2 = step_discrete_world(w, {{0.3, 0, 0.2}, {0, 0, 0}, 0, 0});
  CHECK(!r2.ok);
}

TEST_CASE("a scripted pick and place drives the success predicate") {
  DiscreteWorld w = make_discrete_world("pick-place", 17);
  Vec3 cube = named(w, "cube").pos;
  Vec3 pad = named(w, "pad").pos;
  Vec3 gp{cube.x, cube.y, cube.z + 0.016};  // top-face grasp point
  CHECK(!world_success(w));

  step_discrete_world(w, {{cube.x, cube.y, cube.z + 0.08}, {0, 0, 0}, 0, 0});
  // hovering just above the cube is reported as a near-contact
  StepResult near = step_discrete_world(w, {{cube.x, cube.y, cube.z + 0.02}, {0, 0, 0}, 0, 0});
  CHECK(near.collision);
  step_discrete_world(w, {{gp.x, gp.y, gp.z}, {0, 0, 0}, 1, 0});
  REQUIRE(w.attached == 0);
  // carrying: the cube tracks the ee, hanging half a side below the grip
  step_discrete_world(w, {{gp.x, gp.y, gp.z + 0.12}, {0, 0, 0}, 1, 0});
  CHECK(named(w, "cube").pos.z == doctest::Approx(cube.z + 0.12));
  step_discrete_world(w, {{pad.x, pad.y, 0.10}, {0, 0, 0}, 1, 0});
  // open with the gripped top face one cube height above the pad top
  StepResult fin = step_discrete_world(w, {{pad.x, pad.y, 0.004 + 0.032}, {0, 0, 0}, 0, 0});
  CHECK(fin.success);
  CHECK(named(w, "cube").pos.z == doctest::Approx(0.020));
}

TEST_CASE("bimanual world: determinism, clamps, and reach bands") {
  ContinuousWorld a = make_continuous_world("transfer", 9);
  ContinuousWorld b = make_continuous_world("transfer", 9);
  CHECK(a.objects[0].pos.x == b.objects[0].pos.x);
  CHECK(a.objects[0].pos.y == b.objects[0].pos.y);
  CHECK(clouds_identical(continuous_cloud(a), continuous_cloud(b)));

  // zero-displacement commands leave everything but the step counter alone
  std::array<RawAction, 2> hold{};
  hold[0].trans = {a.arm_pos[0].x, a.arm_pos[0].y, a.arm_pos[0].z};
  hold[1].trans = {a.arm_pos[1].x, a.arm_pos[1].y, a.arm_pos[1].z};
  Vec3 p0 = a.arm_pos[0];
  step_continuous_world(a, hold);
  CHECK(a.arm_pos[0].x == p0.x);
  CHECK(a.arm_pos[0].y == p0.y);
  CHECK(a.arm_pos[0].z == p0.z);
  CHECK(a.steps == 1);

  // a far command moves by exactly the per-step clamp
  std::array<RawAction, 2> lunge = hold;
  lunge[0].trans = {a.arm_pos[0].x, a.arm_pos[0].y + 0.2, a.arm_pos[0].z};
  Vec3 before = a.arm_pos[0];
  step_continuous_world(a, lunge);
  CHECK(norm(a.arm_pos[0] - before) == doctest::Approx(kMaxArmSpeed * a.dt).epsilon(1e-12));

  // the left arm can never cross its reach band no matter the command
  std::array<RawAction, 2> cross = hold;
  cross[0].trans = {0.20, 0.0, 0.20};
  for (int i = 0; i < 40; ++i) step_continuous_world(a, cross);
  CHECK(a.arm_pos[0].x <= 0.05 + 1e-12);

  ContinuousWorld c = make_continuous_world("insertion", 9);
  CHECK(c.objects.size() == 2);
  CHECK_THROWS_AS(make_continuous_world("fly", 1), std::invalid_argument);
  CHECK_THROWS_AS(make_continuous_world("transfer", 1, 30), std::invalid_argument);
}

TEST_CASE("bimanual expert demos: oracle keyframes, events, replay to success") {
  for (const char* task : kContinuousTasks) {
    for (uint64_t seed : {1, 2, 3}) {
      Demonstration d = generate_continuous_demo(task, seed);
      REQUIRE(d.frames.size() > 20);
      CHECK(discover_keyframes(d, 1e-4) == d.oracle_keyframes);
      CHECK(d.oracle_keyframes.back() == static_cast<int64_t>(d.frames.size()) - 1);

      auto events = extract_grasp_events(d);
      CHECK(events.size() == 2);  // one grasp per arm
      std::set<int> arms;
      for (const auto& ev : events) arms.insert(ev.arm);
      CHECK(arms == std::set<int>{0, 1});

      for (const Frame& f : d.frames) {
        CHECK(f.language.empty());
        CHECK(f.obs.n_cams == 2);
        CHECK(f.action.size() == 2);
        CHECK(f.state.joint_vel.size() == 8);
      }

      // replay through a fresh world instance
      ContinuousWorld w = make_continuous_world(task, seed);
      bool success = false;
      for (const Frame& f : d.frames)
        success = step_continuous_world(w, {f.action[0], f.action[1]}) || success;
      CHECK(success);
      if (std::string(task) == "transfer") {
        CHECK(w.attached[1] == 0);
        CHECK(w.arm_closed[0] == 0);
      } else {
        CHECK(w.attached[0] == 1);
        CHECK(w.attached[1] == 0);
      }
    }
  }
}

TEST_CASE("doubling the control rate roughly doubles demo length") {
  Demonstration slow = generate_continuous_demo("transfer", 4, 50);
  Demonstration fast = generate_continuous_demo("transfer", 4, 100);
  double ratio = static_cast<double>(fast.frames.size()) / static_cast<double>(slow.frames.size());
  CHECK(ratio > 1.7);
  CHECK(ratio < 2.3);
  CHECK(discover_keyframes(fast, 1e-4) == fast.oracle_keyframes);
}
