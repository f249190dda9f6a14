#include "gparam/continuous_world.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gparam/rng.hpp"

namespace gparam {

namespace {

Vec3 to_vec(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
std::array<double, 3> to_arr(Vec3 v) { return {v.x, v.y, v.z}; }

PointCloud rod_cloud() {
  PointCloud pc;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 3; ++j) {
      double x = -0.045 + 0.09 * (i + 0.5) / 12;
      double y = -0.01 + 0.02 * (j + 0.5) / 3;
      pc.push({x, y, 0.012}, 0.9f, 0.3f, 0.2f);
      pc.push({x, y, -0.004}, 0.8f, 0.25f, 0.18f);
    }
  for (int i = 0; i < 10; ++i) {
    double x = -0.045 + 0.09 * (i + 0.5) / 10;
    pc.push({x, -0.01, 0.004}, 0.85f, 0.28f, 0.19f);
    pc.push({x, 0.01, 0.004}, 0.85f, 0.28f, 0.19f);
  }
  return pc;
}

PointCloud peg_rod_cloud() {
  PointCloud pc;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j) {
      double x = -0.035 + 0.07 * (i + 0.5) / 10;
      double y = -0.01 + 0.02 * (j + 0.5) / 3;
      pc.push({x, y, 0.010}, 0.95f, 0.55f, 0.1f);
      pc.push({x, y, -0.004}, 0.85f, 0.5f, 0.1f);
    }
  for (int j = 0; j < 3; ++j) {  // bright tip band
    double y = -0.01 + 0.02 * (j + 0.5) / 3;
    pc.push({-0.035, y, 0.003}, 1.0f, 0.9f, 0.4f);
  }
  return pc;
}

PointCloud socket_tube_cloud() {
  PointCloud pc;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 4; ++j) {
      double x = -0.03 + 0.06 * (i + 0.5) / 8;
      double y = -0.015 + 0.03 * (j + 0.5) / 4;
      pc.push({x, y, 0.015}, 0.3f, 0.4f, 0.8f);
      pc.push({x, y, -0.008}, 0.25f, 0.35f, 0.7f);
    }
  for (int j = 0; j < 4; ++j) {  // mouth ring
    double y = -0.015 + 0.03 * (j + 0.5) / 4;
    pc.push({0.03, y, 0.004}, 0.5f, 0.8f, 1.0f);
    pc.push({0.03, y, 0.012}, 0.5f, 0.8f, 1.0f);
  }
  return pc;
}

Vec3 peg_tip(const RigidObject& peg) { return peg.pos + rotate_yaw({-0.035, 0, 0}, peg.yaw_deg); }
Vec3 socket_mouth(const RigidObject& s) { return s.pos + rotate_yaw({0.03, 0, 0}, s.yaw_deg); }

double grasp_tol(const ContinuousWorld& w) {
  return w.task_id == "insertion" ? kGraspTolInsertion : kGraspTolTransfer;
}

void sync_arm(ContinuousWorld& w, int arm) {
  int idx = w.attached[static_cast<size_t>(arm)];
  if (idx < 0) return;
  RigidObject& obj = w.objects[static_cast<size_t>(idx)];
  obj.pos = w.arm_pos[static_cast<size_t>(arm)] +
            rotate_yaw(w.attach_offset[static_cast<size_t>(arm)],
                       w.arm_yaw[static_cast<size_t>(arm)]);
  obj.yaw_deg = wrap_deg(w.arm_yaw[static_cast<size_t>(arm)] +
                         w.attach_yaw_off[static_cast<size_t>(arm)]);
}

void attach_arm(ContinuousWorld& w, int arm) {
  double tol = grasp_tol(w);
  int best = -1;
  double best_d = tol;
  for (size_t i = 0; i < w.objects.size(); ++i) {
    const RigidObject& o = w.objects[i];
    if (!o.graspable) continue;
    std::vector<Vec3> pts = o.grasp_points_local;
    if (pts.empty()) pts.push_back({0, 0, 0});
    for (const Vec3& g : pts) {
      double d = norm(o.pos + rotate_yaw(g, o.yaw_deg) - w.arm_pos[static_cast<size_t>(arm)]);
      if (d <= best_d) {
        best = static_cast<int>(i);
        best_d = d;
      }
    }
  }
  if (best < 0) return;
  int other = 1 - arm;
  if (w.attached[static_cast<size_t>(other)] == best)
    w.attached[static_cast<size_t>(other)] = -1;  // handoff: the later grasp wins
  w.attached[static_cast<size_t>(arm)] = best;
  RigidObject& obj = w.objects[static_cast<size_t>(best)];
  w.attach_offset[static_cast<size_t>(arm)] = rotate_yaw(
      obj.pos - w.arm_pos[static_cast<size_t>(arm)], -w.arm_yaw[static_cast<size_t>(arm)]);
  w.attach_yaw_off[static_cast<size_t>(arm)] = obj.yaw_deg - w.arm_yaw[static_cast<size_t>(arm)];
}

}  // namespace

ContinuousWorld make_continuous_world(const std::string& task_id, uint64_t seed, int hz) {
  if (task_id != "transfer" && task_id != "insertion")
    throw std::invalid_argument("unknown task: " + task_id);
  if (hz != 50 && hz != 100) throw std::invalid_argument("hz must be 50 or 100");

  Rng rng = Rng::from_seed_and_label(seed, "cworld/" + task_id);
  ContinuousWorld w;
  w.task_id = task_id;
  w.seed = seed;
  w.hz = hz;
  w.dt = 1.0 / hz;
  w.arm_pos = {Vec3{-0.10, 0, 0.20}, Vec3{0.10, 0, 0.20}};

  auto add = [&](const std::string& name, PointCloud local, Vec3 pos, double half_height,
                 std::vector<Vec3> grasp_pts) {
    RigidObject o;
    o.name = name;
    o.local = std::move(local);
    o.pos = {pos.x, pos.y, half_height};
    o.half_height = half_height;
    o.graspable = true;
    o.grasp_points_local = std::move(grasp_pts);
    w.objects.push_back(std::move(o));
  };

  if (task_id == "transfer") {
    Vec3 p{rng.uniform(-0.19, -0.13), rng.uniform(-0.08, 0.08), 0};
    add("rod", rod_cloud(), p, 0.012, {{-0.025, 0, 0}, {0.025, 0, 0}});
  } else {
    Vec3 pp{rng.uniform(0.12, 0.18), rng.uniform(-0.08, 0.08), 0};
    Vec3 sp{rng.uniform(-0.18, -0.12), rng.uniform(-0.08, 0.08), 0};
    add("peg", peg_rod_cloud(), pp, 0.010, {{0.02, 0, 0}});
    add("socket", socket_tube_cloud(), sp, 0.015, {{0, 0, 0}});
  }
  return w;
}

PointCloud continuous_cloud(const ContinuousWorld& w) {
  PointCloud pc = table_cloud();
  for (const auto& o : w.objects)
    for (size_t i = 0; i < o.local.size(); ++i)
      pc.push(o.pos + rotate_yaw(o.local.xyz[i], o.yaw_deg), o.local.rgb[i][0], o.local.rgb[i][1],
              o.local.rgb[i][2]);
  pc.append(gripper_marker(w.arm_pos[0], w.arm_yaw[0], w.arm_closed[0] != 0, 1.0f, 0.85f, 0.1f));
  pc.append(gripper_marker(w.arm_pos[1], w.arm_yaw[1], w.arm_closed[1] != 0, 0.1f, 0.8f, 0.9f));
  return pc;
}

bool continuous_success(const ContinuousWorld& w) {
  if (w.task_id == "transfer") {
    const RigidObject& rod = w.objects[0];
    return w.attached[1] == 0 && w.arm_closed[0] == 0 && rod.pos.z > 0.08;
  }
  const RigidObject &peg = w.objects[0], &socket = w.objects[1];
  return w.attached[1] == 0 && w.attached[0] == 1 &&
         norm(peg_tip(peg) - socket_mouth(socket)) <= 0.01;
}

bool step_continuous_world(ContinuousWorld& w, const std::array<RawAction, 2>& a) {
  double step_clamp = kMaxArmSpeed * w.dt;
  double yaw_clamp = kMaxYawRate * w.dt;
  for (int arm = 0; arm < 2; ++arm) {
    Vec3 target = to_vec(a[static_cast<size_t>(arm)].trans);
    target.x = std::clamp(target.x, w.reach_lo_x[static_cast<size_t>(arm)],
                          w.reach_hi_x[static_cast<size_t>(arm)]);
    target.y = std::clamp(target.y, w.bounds.lo.y, w.bounds.hi.y);
    target.z = std::clamp(target.z, w.bounds.lo.z, w.bounds.hi.z);
    Vec3 d = target - w.arm_pos[static_cast<size_t>(arm)];
    double n = norm(d);
    w.arm_pos[static_cast<size_t>(arm)] =
        n > step_clamp ? w.arm_pos[static_cast<size_t>(arm)] + d * (step_clamp / n) : target;
    double dy = wrap_deg(a[static_cast<size_t>(arm)].rot[2]) -
                w.arm_yaw[static_cast<size_t>(arm)];
    if (dy > 180) dy -= 360;
    if (dy < -180) dy += 360;
    w.arm_yaw[static_cast<size_t>(arm)] =
        wrap_deg(w.arm_yaw[static_cast<size_t>(arm)] + std::clamp(dy, -yaw_clamp, yaw_clamp));
    sync_arm(w, arm);
  }
  // closes resolve before opens so one-step handoffs transfer, not drop
  for (int arm = 0; arm < 2; ++arm)
    if (a[static_cast<size_t>(arm)].gripper == 1 && !w.arm_closed[static_cast<size_t>(arm)]) {
      w.arm_closed[static_cast<size_t>(arm)] = 1;
      if (w.attached[static_cast<size_t>(arm)] < 0) attach_arm(w, arm);
    }
  for (int arm = 0; arm < 2; ++arm)
    if (a[static_cast<size_t>(arm)].gripper == 0 && w.arm_closed[static_cast<size_t>(arm)]) {
      w.arm_closed[static_cast<size_t>(arm)] = 0;
      int idx = w.attached[static_cast<size_t>(arm)];
      if (idx >= 0) {
        w.attached[static_cast<size_t>(arm)] = -1;
        RigidObject& obj = w.objects[static_cast<size_t>(idx)];
        obj.pos.z = obj.half_height;  // drops straight to the table
      }
    }
  for (int arm = 0; arm < 2; ++arm) sync_arm(w, arm);
  w.steps += 1;
  return continuous_success(w);
}

Demonstration generate_continuous_demo(const std::string& task_id, uint64_t seed, int hz) {
  ContinuousWorld w = make_continuous_world(task_id, seed, hz);
  double speed = 0.75 * kMaxArmSpeed * w.dt;
  double snap = kMaxArmSpeed * w.dt;  // final approach within one clamped step lands exactly

  struct Phase {
    std::array<Vec3, 2> target;
    std::array<int, 2> grips_after;
  };
  std::vector<Phase> phases;
  if (task_id == "transfer") {
    const RigidObject& rod = w.objects[0];
    Vec3 gl = rod.pos + Vec3{-0.025, 0, 0};
    Vec3 h{0, rod.pos.y * 0.5, 0.14};
    Vec3 hl = h + Vec3{-0.025, 0, 0}, hr = h + Vec3{0.025, 0, 0};
    phases.push_back({{gl + Vec3{0, 0, 0.055}, Vec3{0.10, h.y, 0.16}}, {0, 0}});
    phases.push_back({{gl, Vec3{0.10, h.y, 0.16}}, {1, 0}});
    phases.push_back({{hl, Vec3{0.085, h.y, 0.14}}, {1, 0}});
    phases.push_back({{hl, hr}, {1, 1}});
    phases.push_back({{Vec3{-0.07, h.y, 0.16}, hr}, {0, 1}});
    phases.push_back({{Vec3{-0.12, 0, 0.20}, Vec3{0.13, h.y * 0.5, 0.17}}, {0, 1}});
  } else {
    const RigidObject &peg = w.objects[0], &socket = w.objects[1];
    Vec3 gr = peg.pos + Vec3{0.02, 0, 0};
    Vec3 gs = socket.pos;
    double ym = (peg.pos.y + socket.pos.y) / 2;
    phases.push_back({{gs + Vec3{0, 0, 0.055}, gr + Vec3{0, 0, 0.055}}, {0, 0}});
    phases.push_back({{gs, gr}, {1, 1}});
    phases.push_back({{Vec3{-0.05, ym, 0.14}, Vec3{0.08, ym, 0.14}}, {1, 1}});
    phases.push_back({{Vec3{-0.05, ym, 0.14}, Vec3{0.035, ym, 0.14}}, {1, 1}});
    phases.push_back({{Vec3{-0.05, ym, 0.165}, Vec3{0.035, ym, 0.165}}, {1, 1}});
  }

  Demonstration demo;
  demo.task_id = task_id;
  demo.seed = seed;

  std::array<Vec3, 2> cmd = w.arm_pos;
  std::array<int, 2> grips{0, 0};

  auto emit = [&](const std::array<Vec3, 2>& cmd_now, const std::array<int, 2>& grips_now) {
    Frame f;
    f.obs.cloud = continuous_cloud(w);
    f.obs.n_cams = 2;
    f.obs.height = 64;
    f.obs.width = 64;
    f.state.n_arms = 2;
    f.state.timestep = static_cast<int64_t>(demo.frames.size());
    for (int arm = 0; arm < 2; ++arm) {
      RawAction a;
      a.trans = to_arr(cmd_now[static_cast<size_t>(arm)]);
      a.rot = {0, 0, 0};
      a.gripper = grips_now[static_cast<size_t>(arm)];
      f.action.push_back(a);
      const Vec3& p = w.arm_pos[static_cast<size_t>(arm)];
      f.state.ee_pose.push_back({p.x, p.y, p.z, 1, 0, 0, 0});
      f.state.gripper_open.push_back(w.arm_closed[static_cast<size_t>(arm)] ? 0.0 : 1.0);
      Vec3 v = (cmd_now[static_cast<size_t>(arm)] - p) * (1.0 / w.dt);
      f.state.joint_vel.push_back(v.x);
      f.state.joint_vel.push_back(v.y);
      f.state.joint_vel.push_back(v.z);
      f.state.joint_vel.push_back(0.0);
    }
    demo.frames.push_back(std::move(f));
  };

  for (const Phase& ph : phases) {
    while (cmd[0].x != ph.target[0].x || cmd[0].y != ph.target[0].y ||
           cmd[0].z != ph.target[0].z || cmd[1].x != ph.target[1].x ||
           cmd[1].y != ph.target[1].y || cmd[1].z != ph.target[1].z) {
      for (int arm = 0; arm < 2; ++arm) {
        Vec3 d = ph.target[static_cast<size_t>(arm)] - cmd[static_cast<size_t>(arm)];
        double n = norm(d);
        cmd[static_cast<size_t>(arm)] =
            n > snap ? cmd[static_cast<size_t>(arm)] + d * (speed / n)
                     : ph.target[static_cast<size_t>(arm)];
      }
      emit(cmd, grips);
      step_continuous_world(
          w, {RawAction{to_arr(cmd[0]), {0, 0, 0}, grips[0], 0},
              RawAction{to_arr(cmd[1]), {0, 0, 0}, grips[1], 0}});
    }
    // dwell frame: arms parked, gripper transition commanded here
    grips = ph.grips_after;
    emit(cmd, grips);
    demo.oracle_keyframes.push_back(static_cast<int64_t>(demo.frames.size()) - 1);
    step_continuous_world(w, {RawAction{to_arr(cmd[0]), {0, 0, 0}, grips[0], 0},
                              RawAction{to_arr(cmd[1]), {0, 0, 0}, grips[1], 0}});
  }
  return demo;
}

}  // namespace gparam
