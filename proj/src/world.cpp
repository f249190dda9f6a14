#include "gparam/world.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gparam {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGraspTol = 0.01;      // meters
constexpr int kGraspRotTolBins = 1;     // per axis
constexpr double kPadTopZ = 0.004;      // pad surface height
constexpr double kInsertTolXy = 0.012;  // slot capture radius
constexpr double kPlaceTolXy = 0.03;
constexpr double kStackTolXy = 0.025;
constexpr double kFrameDt = 0.1;  // nominal seconds per discrete demo frame

Vec3 to_vec(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
std::array<double, 3> to_arr(Vec3 v) { return {v.x, v.y, v.z}; }

double dist_xy(Vec3 a, Vec3 b) { return std::hypot(a.x - b.x, a.y - b.y); }

// deterministic per-point brightness jitter so clusters do not render flat
float shade(size_t i) {
  uint32_t h = static_cast<uint32_t>(i) * 2654435761u;
  return 0.90f + 0.10f * static_cast<float>((h >> 27) & 15u) / 15.0f;
}

void push_shaded(PointCloud& pc, Vec3 p, float r, float g, float b) {
  float s = shade(pc.size());
  pc.push(p, std::min(1.0f, r * s), std::min(1.0f, g * s), std::min(1.0f, b * s));
}

// Box cluster: top face grid plus sparser side strips. Extents are full
// lengths; the origin sits at the box center.
PointCloud box_cloud(double lx, double ly, double lz, float r, float g, float b, int nx, int ny) {
  PointCloud pc;
  double hx = lx / 2, hy = ly / 2, hz = lz / 2;
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      double x = -hx + lx * (i + 0.5) / nx;
      double y = -hy + ly * (j + 0.5) / ny;
      push_shaded(pc, {x, y, hz}, r, g, b);
    }
  for (int i = 0; i < nx; ++i)
    for (int k = 0; k < 2; ++k) {
      double x = -hx + lx * (i + 0.5) / nx;
      double z = -hz + lz * (k + 0.5) / 2;
      push_shaded(pc, {x, -hy, z}, r, g, b);
      push_shaded(pc, {x, hy, z}, r, g, b);
    }
  for (int j = 0; j < ny; ++j)
    for (int k = 0; k < 2; ++k) {
      double y = -hy + ly * (j + 0.5) / ny;
      double z = -hz + lz * (k + 0.5) / 2;
      push_shaded(pc, {-hx, y, z}, r, g, b);
      push_shaded(pc, {hx, y, z}, r, g, b);
    }
  return pc;
}

PointCloud cube_cloud(double side, float r, float g, float b) {
  return box_cloud(side, side, side, r, g, b, 6, 6);
}

PointCloud pad_cloud(double radius, float r, float g, float b) {
  PointCloud pc;
  push_shaded(pc, {0, 0, 0.002}, r, g, b);
  for (int ring = 1; ring <= 3; ++ring) {
    double rr = radius * ring / 3.0;
    int n = 6 * ring;
    for (int i = 0; i < n; ++i) {
      double a = 2 * kPi * i / n;
      push_shaded(pc, {rr * std::cos(a), rr * std::sin(a), 0.002}, r, g, b);
    }
  }
  return pc;
}

// Slab with a slot cut along its local x axis; slot floor points are bright so
// the opening is visible from above.
PointCloud socket_cloud() {
  PointCloud pc;
  double hx = 0.045, hy = 0.045, hz = 0.012;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) {
      double x = -hx + 2 * hx * (i + 0.5) / 9;
      double y = -hy + 2 * hy * (j + 0.5) / 9;
      if (std::abs(y) < 0.008 && std::abs(x) < 0.038) continue;  // slot opening
      push_shaded(pc, {x, y, hz}, 0.3f, 0.3f, 0.38f);
    }
  for (int i = 0; i < 8; ++i) {  // slot floor
    double x = -0.035 + 0.07 * (i + 0.5) / 8;
    push_shaded(pc, {x, 0, -0.008}, 0.15f, 0.95f, 0.95f);
    push_shaded(pc, {x, 0.004, -0.008}, 0.15f, 0.95f, 0.95f);
    push_shaded(pc, {x, -0.004, -0.008}, 0.15f, 0.95f, 0.95f);
  }
  for (int i = 0; i < 6; ++i)
    for (int k = 0; k < 2; ++k) {
      double t = -hx + 2 * hx * (i + 0.5) / 6;
      double z = -hz + 2 * hz * (k + 0.5) / 2;
      push_shaded(pc, {t, -hy, z}, 0.3f, 0.3f, 0.38f);
      push_shaded(pc, {t, hy, z}, 0.3f, 0.3f, 0.38f);
      push_shaded(pc, {-hx, t, z}, 0.3f, 0.3f, 0.38f);
      push_shaded(pc, {hx, t, z}, 0.3f, 0.3f, 0.38f);
    }
  return pc;
}

PointCloud drawer_cloud() {
  PointCloud pc;
  double hx = 0.06, hy = 0.045, wall_top = 0.018, floor_z = -0.026;
  for (int i = 0; i < 8; ++i)  // interior floor
    for (int j = 0; j < 5; ++j) {
      double x = -0.046 + 0.092 * (i + 0.5) / 8;
      double y = -0.031 + 0.062 * (j + 0.5) / 5;
      push_shaded(pc, {x, y, floor_z}, 0.32f, 0.2f, 0.1f);
    }
  for (int i = 0; i < 10; ++i) {  // wall rims
    double x = -hx + 2 * hx * (i + 0.5) / 10;
    push_shaded(pc, {x, -hy, wall_top}, 0.55f, 0.36f, 0.2f);
    push_shaded(pc, {x, hy, wall_top}, 0.55f, 0.36f, 0.2f);
  }
  for (int j = 0; j < 7; ++j) {
    double y = -hy + 2 * hy * (j + 0.5) / 7;
    push_shaded(pc, {-hx, y, wall_top}, 0.55f, 0.36f, 0.2f);
    push_shaded(pc, {hx, y, wall_top}, 0.55f, 0.36f, 0.2f);
  }
  for (int i = 0; i < 8; ++i)  // outer wall faces, mid height
    for (int k = 0; k < 2; ++k) {
      double x = -hx + 2 * hx * (i + 0.5) / 8;
      double z = floor_z + (wall_top - floor_z) * (k + 0.5) / 2;
      push_shaded(pc, {x, -hy, z}, 0.5f, 0.33f, 0.18f);
      push_shaded(pc, {x, hy, z}, 0.5f, 0.33f, 0.18f);
    }
  return pc;
}

double bound_radius(const PointCloud& pc) {
  double r = 0;
  for (const auto& p : pc.xyz) r = std::max(r, norm(p));
  return r;
}

// Objects keep only a yaw orientation; the stated symmetry order widens the
// set of gripper yaws that count as a valid grasp.
int yaw_symmetry(const std::string& name) {
  if (name == "peg") return 2;
  if (name.rfind("cube", 0) == 0 || name == "item") return 4;
  return 1;
}

bool rot_bins_match(const std::array<double, 3>& rot, double grasp_yaw, int symmetry) {
  auto bins = discretize_rotation(rot);
  if (bin_distance(bins[0], 0) > kGraspRotTolBins) return false;
  if (bin_distance(bins[1], 0) > kGraspRotTolBins) return false;
  for (int s = 0; s < symmetry; ++s) {
    double cand = grasp_yaw + 360.0 * s / symmetry;
    int cb = discretize_rotation({0, 0, cand})[2];
    if (bin_distance(bins[2], cb) <= kGraspRotTolBins) return true;
  }
  return false;
}

const RigidObject* find_object(const DiscreteWorld& w, const std::string& name) {
  for (const auto& o : w.objects)
    if (o.name == name) return &o;
  return nullptr;
}

// Rest height for an object released at its current xy: supports (pad, resting
// cubes, drawer floor, socket slot) win over the bare table.
void settle_object(DiscreteWorld& w, int idx) {
  RigidObject& obj = w.objects[static_cast<size_t>(idx)];
  double z = obj.half_height;
  obj.inserted = false;
  if (w.task_id == "pick-place" || w.task_id == "stack") {
    for (size_t j = 0; j < w.objects.size(); ++j) {
      if (static_cast<int>(j) == idx || w.attached == static_cast<int>(j)) continue;
      const RigidObject& o = w.objects[j];
      if (o.name == "pad" && dist_xy(obj.pos, o.pos) <= kPlaceTolXy)
        z = std::max(z, kPadTopZ + obj.half_height);
      if (o.name.rfind("cube", 0) == 0 && dist_xy(obj.pos, o.pos) <= kStackTolXy)
        z = std::max(z, o.pos.z + o.half_height + obj.half_height);
    }
  } else if (w.task_id == "peg-insert" && obj.name == "peg") {
    const RigidObject* socket = find_object(w, "socket");
    if (socket && dist_xy(obj.pos, socket->pos) <= kInsertTolXy) {
      int pb = discretize_rotation({0, 0, obj.yaw_deg})[2];
      int sb0 = discretize_rotation({0, 0, socket->yaw_deg})[2];
      int sb1 = discretize_rotation({0, 0, socket->yaw_deg + 180.0})[2];
      if (bin_distance(pb, sb0) <= 1 || bin_distance(pb, sb1) <= 1) {
        z = kPadTopZ + obj.half_height;  // slot floor sits at pad height
        obj.inserted = true;
      }
    }
  } else if (w.task_id == "drawer-put" && obj.name == "item") {
    const RigidObject* drawer = find_object(w, "drawer");
    if (drawer) {
      Vec3 rel = rotate_yaw(obj.pos - drawer->pos, -drawer->yaw_deg);
      if (std::abs(rel.x) <= 0.046 && std::abs(rel.y) <= 0.031) z = kPadTopZ + obj.half_height;
    }
  }
  obj.pos.z = z;
}

void sync_attached(DiscreteWorld& w) {
  if (w.attached < 0) return;
  RigidObject& obj = w.objects[static_cast<size_t>(w.attached)];
  obj.pos = w.ee_pos + rotate_yaw(w.attach_offset, w.ee_rot[2]);
  obj.yaw_deg = wrap_deg(w.ee_rot[2] + w.attach_yaw_off);
}

// Shared by the demo generator and the executor so replaying a scripted demo
// reproduces the exact same attach/release outcomes.
void apply_gripper(DiscreteWorld& w, const RawAction& a) {
  int was_closed = w.gripper_closed;
  w.gripper_closed = a.gripper;
  if (a.gripper == 1 && !was_closed && w.attached < 0) {
    int best = -1;
    double best_d = kGraspTol;
    for (size_t i = 0; i < w.objects.size(); ++i) {
      const RigidObject& o = w.objects[i];
      if (!o.graspable) continue;
      std::vector<Vec3> pts = o.grasp_points_local;
      if (pts.empty()) pts.push_back({0, 0, 0});
      for (const Vec3& g : pts) {
        double d = norm(o.pos + rotate_yaw(g, o.yaw_deg) - to_vec(a.trans));
        if (d <= best_d && rot_bins_match(a.rot, o.grasp_yaw, yaw_symmetry(o.name))) {
          best = static_cast<int>(i);
          best_d = d;
        }
      }
    }
    if (best >= 0) {
      w.attached = best;
      RigidObject& obj = w.objects[static_cast<size_t>(best)];
      w.attach_offset = rotate_yaw(obj.pos - w.ee_pos, -w.ee_rot[2]);
      w.attach_yaw_off = obj.yaw_deg - w.ee_rot[2];
      obj.inserted = false;
    }
  } else if (a.gripper == 0 && was_closed && w.attached >= 0) {
    int idx = w.attached;
    w.attached = -1;
    settle_object(w, idx);
  }
}

std::vector<Vec3> sample_positions(Rng& rng, size_t count, double min_sep) {
  std::vector<Vec3> out;
  while (out.size() < count) {
    Vec3 p{rng.uniform(-0.16, 0.16), rng.uniform(-0.16, 0.16), 0};
    bool ok = true;
    for (const auto& q : out) ok = ok && dist_xy(p, q) >= min_sep;
    if (ok) out.push_back(p);
  }
  return out;
}

struct Waypoint {
  Vec3 pos;
  double yaw = 0;
  int gripper = 0;
  int collision = 0;
};

std::vector<Waypoint> script_waypoints(const DiscreteWorld& w) {
  auto above = [](Vec3 p, double dz) { return Vec3{p.x, p.y, p.z + dz}; };
  std::vector<Waypoint> wps;
  auto pick = [&](const RigidObject& obj, double yaw) {
    Vec3 g = obj.grasp_points_local.empty() ? Vec3{0, 0, 0} : obj.grasp_points_local.front();
    Vec3 gp = obj.pos + rotate_yaw(g, obj.yaw_deg);
    wps.push_back({above(gp, 0.08), yaw, 0, 0});
    wps.push_back({gp, yaw, 1, 1});
    wps.push_back({above(gp, 0.12), yaw, 1, 0});
  };
  auto put = [&](Vec3 target, double yaw, double hover) {
    wps.push_back({{target.x, target.y, hover}, yaw, 1, 0});
    wps.push_back({target, yaw, 0, 1});
  };
  if (w.task_id == "pick-place") {
    const RigidObject &cube = *find_object(w, "cube"), &pad = *find_object(w, "pad");
    pick(cube, cube.grasp_yaw);
    put({pad.pos.x, pad.pos.y, kPadTopZ + cube.half_height}, cube.grasp_yaw, 0.10);
  } else if (w.task_id == "peg-insert") {
    const RigidObject &peg = *find_object(w, "peg"), &socket = *find_object(w, "socket");
    pick(peg, peg.grasp_yaw);
    put({socket.pos.x, socket.pos.y, kPadTopZ + peg.half_height}, socket.yaw_deg, 0.10);
  } else if (w.task_id == "stack") {
    const RigidObject &a = *find_object(w, "cubeA"), &b = *find_object(w, "cubeB");
    const RigidObject& pad = *find_object(w, "pad");
    pick(a, 0);
    put({pad.pos.x, pad.pos.y, kPadTopZ + a.half_height}, 0, 0.10);
    pick(b, 0);
    put({pad.pos.x, pad.pos.y, kPadTopZ + 2 * a.half_height + b.half_height}, 0, 0.12);
  } else if (w.task_id == "drawer-put") {
    const RigidObject &item = *find_object(w, "item"), &drawer = *find_object(w, "drawer");
    pick(item, 0);
    put({drawer.pos.x, drawer.pos.y, kPadTopZ + item.half_height}, 0, 0.13);
  } else {
    throw std::invalid_argument("unknown task: " + w.task_id);
  }
  return wps;
}

}  // namespace

Vec3 rotate_yaw(Vec3 p, double yaw_deg) {
  double r = yaw_deg * kPi / 180.0;
  double c = std::cos(r), s = std::sin(r);
  return {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
}

double wrap_deg(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r < 0) r += 360.0;
  if (r >= 360.0) r = 0.0;
  return r;
}

std::array<double, 4> quat_from_euler(const std::array<double, 3>& euler_deg) {
  double roll = euler_deg[0] * kPi / 180.0 / 2;
  double pitch = euler_deg[1] * kPi / 180.0 / 2;
  double yaw = euler_deg[2] * kPi / 180.0 / 2;
  double cr = std::cos(roll), sr = std::sin(roll);
  double cp = std::cos(pitch), sp = std::sin(pitch);
  double cy = std::cos(yaw), sy = std::sin(yaw);
  return {cy * cp * cr + sy * sp * sr, cy * cp * sr - sy * sp * cr, cy * sp * cr + sy * cp * sr,
          sy * cp * cr - cy * sp * sr};
}

void PointCloud::append(const PointCloud& other) {
  xyz.insert(xyz.end(), other.xyz.begin(), other.xyz.end());
  rgb.insert(rgb.end(), other.rgb.begin(), other.rgb.end());
}

PointCloud table_cloud() {
  PointCloud pc;
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j) {
      double x = -0.232 + 0.464 * i / 29.0;
      double y = -0.232 + 0.464 * j / 29.0;
      float v = 0.32f + 0.08f * static_cast<float>((i + j) % 2);
      pc.push({x, y, 0.0}, v, v, v + 0.05f);
    }
  return pc;
}

PointCloud gripper_marker(Vec3 ee, double yaw_deg, bool closed, float r, float g, float b) {
  PointCloud pc;
  double sep = closed ? 0.011 : 0.025;
  Vec3 perp = rotate_yaw({0, 1, 0}, yaw_deg);
  Vec3 along = rotate_yaw({1, 0, 0}, yaw_deg);
  for (int side = -1; side <= 1; side += 2)
    for (int iz = 0; iz < 3; ++iz)
      for (int ix = 0; ix < 2; ++ix) {
        Vec3 p = ee + perp * (side * sep) + along * (0.008 * (ix - 0.5)) +
                 Vec3{0, 0, -0.010 + 0.012 * iz};
        pc.push(p, r, g, b);
      }
  for (int i = 0; i < 5; ++i) {  // crossbar above the fingers
    Vec3 p = ee + perp * (sep * (i - 2) / 2.0) + Vec3{0, 0, 0.028};
    pc.push(p, r, g, b);
  }
  for (int i = 0; i < 3; ++i)
    pc.push(ee + Vec3{0, 0, 0.034 + 0.008 * i}, std::min(1.0f, r + 0.05f),
            std::min(1.0f, g + 0.05f), std::min(1.0f, b + 0.2f));
  return pc;
}

std::string task_language(const std::string& task_id) {
  if (task_id == "pick-place") return "pick up the red cube and place it on the green pad";
  if (task_id == "peg-insert") return "slide the orange peg into the matching slot";
  if (task_id == "stack") return "stack both cubes on the green pad";
  if (task_id == "drawer-put") return "put the small item inside the open drawer";
  return "";
}

DiscreteWorld make_discrete_world(const std::string& task_id, uint64_t seed) {
  bool known = false;
  for (const char* t : kDiscreteTasks) known = known || task_id == t;
  if (!known) throw std::invalid_argument("unknown task: " + task_id);

  Rng rng = Rng::from_seed_and_label(seed, "world/" + task_id);
  DiscreteWorld w;
  w.task_id = task_id;
  w.seed = seed;
  w.ee_pos = {0, -0.15, 0.30};

  auto add = [&](const std::string& name, PointCloud local, Vec3 pos, double yaw,
                 double half_height, bool graspable) {
    RigidObject o;
    o.name = name;
    o.local = std::move(local);
    o.pos = {pos.x, pos.y, half_height};
    o.yaw_deg = yaw;
    o.half_height = half_height;
    o.grasp_yaw = yaw;
    o.graspable = graspable;
    // Grasps engage the top-face center: a commanded pose snapped to the
    // object's rendered points can actually reach it (the origin cannot be
    // reached from surface points within the grasp tolerance).
    if (graspable) o.grasp_points_local = {{0, 0, half_height}};
    w.objects.push_back(std::move(o));
  };

  if (task_id == "pick-place") {
    auto ps = sample_positions(rng, 2, 0.12);
    add("cube", cube_cloud(0.032, 0.85f, 0.15f, 0.1f), ps[0], 0, 0.016, true);
    add("pad", pad_cloud(0.035, 0.1f, 0.8f, 0.2f), ps[1], 0, 0.002, false);
  } else if (task_id == "peg-insert") {
    auto ps = sample_positions(rng, 2, 0.14);
    double peg_yaw = rng.uniform(0.0, 85.0);
    double socket_yaw = rng.uniform(0.0, 85.0);
    add("peg", box_cloud(0.07, 0.024, 0.024, 0.95f, 0.55f, 0.1f, 10, 4), ps[0], peg_yaw, 0.012,
        true);
    add("socket", socket_cloud(), ps[1], socket_yaw, 0.012, false);
  } else if (task_id == "stack") {
    auto ps = sample_positions(rng, 3, 0.12);
    add("cubeA", cube_cloud(0.032, 0.85f, 0.15f, 0.1f), ps[0], 0, 0.016, true);
    add("cubeB", cube_cloud(0.032, 0.15f, 0.25f, 0.9f), ps[1], 0, 0.016, true);
    add("pad", pad_cloud(0.035, 0.1f, 0.8f, 0.2f), ps[2], 0, 0.002, false);
  } else {  // drawer-put
    auto ps = sample_positions(rng, 2, 0.15);
    double drawer_yaw = rng.uniform(0.0, 85.0);
    add("item", cube_cloud(0.026, 0.8f, 0.15f, 0.75f), ps[0], 0, 0.013, true);
    add("drawer", drawer_cloud(), ps[1], drawer_yaw, 0.03, false);
  }
  return w;
}

PointCloud world_cloud(const DiscreteWorld& w) {
  PointCloud pc = table_cloud();
  for (const auto& o : w.objects) {
    for (size_t i = 0; i < o.local.size(); ++i) {
      pc.push(o.pos + rotate_yaw(o.local.xyz[i], o.yaw_deg), o.local.rgb[i][0], o.local.rgb[i][1],
              o.local.rgb[i][2]);
    }
  }
  pc.append(gripper_marker(w.ee_pos, w.ee_rot[2], w.gripper_closed != 0, 1.0f, 0.85f, 0.1f));
  return pc;
}

RobotState discrete_robot_state(const DiscreteWorld& w) {
  RobotState st;
  st.n_arms = 1;
  st.ee_pose = {{w.ee_pos.x, w.ee_pos.y, w.ee_pos.z, 0, 0, 0, 0}};
  auto q = quat_from_euler(w.ee_rot);
  for (int i = 0; i < 4; ++i) st.ee_pose[0][static_cast<size_t>(3 + i)] = q[i];
  st.gripper_open = {w.gripper_closed ? 0.0 : 1.0};
  st.joint_vel = {0, 0, 0, 0};
  st.timestep = w.steps;
  return st;
}

bool world_success(const DiscreteWorld& w) {
  const double eps = 1e-9;
  auto resting_on = [&](const RigidObject& o, double support_top, Vec3 at, double tol) {
    return dist_xy(o.pos, at) <= tol && std::abs(o.pos.z - (support_top + o.half_height)) < eps;
  };
  if (w.task_id == "pick-place") {
    const RigidObject &cube = *find_object(w, "cube"), &pad = *find_object(w, "pad");
    return w.attached != 0 && resting_on(cube, kPadTopZ, pad.pos, kPlaceTolXy);
  }
  if (w.task_id == "peg-insert") {
    const RigidObject& peg = *find_object(w, "peg");
    return w.attached != 0 && peg.inserted;
  }
  if (w.task_id == "stack") {
    const RigidObject &a = *find_object(w, "cubeA"), &b = *find_object(w, "cubeB");
    const RigidObject& pad = *find_object(w, "pad");
    bool a_on_pad = resting_on(a, kPadTopZ, pad.pos, kPlaceTolXy);
    bool b_on_a = resting_on(b, a.pos.z + a.half_height, a.pos, kStackTolXy);
    return w.attached < 0 && a_on_pad && b_on_a;
  }
  if (w.task_id == "drawer-put") {
    const RigidObject &item = *find_object(w, "item"), &drawer = *find_object(w, "drawer");
    Vec3 rel = rotate_yaw(item.pos - drawer.pos, -drawer.yaw_deg);
    return w.attached != 0 && std::abs(rel.x) <= 0.046 && std::abs(rel.y) <= 0.031 &&
           std::abs(item.pos.z - (kPadTopZ + item.half_height)) < eps;
  }
  return false;
}

StepResult step_discrete_world(DiscreteWorld& w, const RawAction& a) {
  StepResult res;
  if (!w.bounds.contains(a.trans)) {
    res.ok = false;
    res.success = world_success(w);
    return res;
  }
  w.ee_pos = to_vec(a.trans);
  w.ee_rot = {wrap_deg(a.rot[0]), wrap_deg(a.rot[1]), wrap_deg(a.rot[2])};
  sync_attached(w);
  apply_gripper(w, a);
  sync_attached(w);
  for (size_t i = 0; i < w.objects.size(); ++i) {
    if (static_cast<int>(i) == w.attached) continue;
    const RigidObject& o = w.objects[i];
    if (norm(w.ee_pos - o.pos) <= bound_radius(o.local) + 0.005) res.collision = true;
  }
  w.steps += 1;
  res.success = world_success(w);
  return res;
}

Demonstration generate_discrete_demo(const std::string& task_id, uint64_t seed) {
  DiscreteWorld w = make_discrete_world(task_id, seed);
  Rng rng = Rng::from_seed_and_label(seed, "demo/" + task_id);
  std::vector<Waypoint> wps = script_waypoints(w);

  Demonstration demo;
  demo.task_id = task_id;
  demo.seed = seed;
  std::string lang = task_language(task_id);

  auto emit = [&](const RawAction& act, std::array<double, 4> vel) {
    Frame f;
    f.obs.cloud = world_cloud(w);
    f.obs.n_cams = 5;
    f.obs.height = 64;
    f.obs.width = 64;
    f.action = {act};
    f.state = discrete_robot_state(w);
    f.state.joint_vel = {vel[0], vel[1], vel[2], vel[3]};
    f.state.timestep = static_cast<int64_t>(demo.frames.size());
    f.language = lang;
    demo.frames.push_back(std::move(f));
  };

  Vec3 pos = w.ee_pos;
  double yaw = 0;
  int grip = 0;
  for (const Waypoint& wp : wps) {
    double dyaw = wp.yaw - yaw;
    if (dyaw > 180) dyaw -= 360;
    if (dyaw < -180) dyaw += 360;
    double dist = norm(wp.pos - pos);
    int steps = static_cast<int>(
        std::clamp<int64_t>(static_cast<int64_t>(std::ceil(std::max(dist / 0.03,
                                                                     std::abs(dyaw) / 25.0))),
                            2, 8));
    steps += static_cast<int>(rng.randint(2));  // seed-dependent pacing
    Vec3 seg_start = pos;
    double yaw_start = yaw;
    for (int s = 1; s < steps; ++s) {
      double t = static_cast<double>(s) / steps;
      Vec3 p = seg_start + (wp.pos - seg_start) * t;
      double yw = wrap_deg(yaw_start + dyaw * t);
      Vec3 v = (p - pos) * (1.0 / kFrameDt);
      double yr = (dyaw / steps) / kFrameDt * 0.01;
      w.ee_pos = p;
      w.ee_rot = {0, 0, yw};
      sync_attached(w);
      emit({to_arr(p), {0, 0, yw}, grip, 0}, {v.x, v.y, v.z, yr});
      pos = p;
      yaw = yw;
    }
    w.ee_pos = wp.pos;
    w.ee_rot = {0, 0, wrap_deg(wp.yaw)};
    sync_attached(w);
    RawAction act{to_arr(wp.pos), {0, 0, wrap_deg(wp.yaw)}, wp.gripper, wp.collision};
    emit(act, {0, 0, 0, 0});
    demo.oracle_keyframes.push_back(static_cast<int64_t>(demo.frames.size()) - 1);
    apply_gripper(w, act);
    sync_attached(w);
    pos = wp.pos;
    yaw = wrap_deg(wp.yaw);
    grip = wp.gripper;
  }
  return demo;
}

std::vector<int64_t> discover_keyframes(const Demonstration& demo, double v_eps) {
  if (demo.frames.empty()) throw std::invalid_argument("discover_keyframes: empty demo");
  if (v_eps <= 0) throw std::invalid_argument("discover_keyframes: v_eps must be positive");
  std::vector<int64_t> out;
  const int64_t n = static_cast<int64_t>(demo.frames.size());
  for (int64_t t = 0; t < n; ++t) {
    const Frame& f = demo.frames[static_cast<size_t>(t)];
    double vmax = 0;
    for (double v : f.state.joint_vel) vmax = std::max(vmax, std::abs(v));
    bool still = vmax < v_eps;
    bool grip_change = false;
    if (t > 0) {
      const Frame& prev = demo.frames[static_cast<size_t>(t - 1)];
      for (size_t arm = 0; arm < f.action.size(); ++arm)
        grip_change = grip_change || f.action[arm].gripper != prev.action[arm].gripper;
    }
    if (still || grip_change) out.push_back(t);
  }
  if (out.empty() || out.back() != n - 1) out.push_back(n - 1);
  return out;
}

std::array<int, 3> discretize_rotation(const std::array<double, 3>& euler_deg) {
  std::array<int, 3> bins;
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(euler_deg[static_cast<size_t>(i)]))
      throw std::invalid_argument("discretize_rotation: non-finite angle");
    double wrapped = wrap_deg(euler_deg[static_cast<size_t>(i)]);
    int b = static_cast<int>(std::floor(wrapped / 5.0));
    bins[static_cast<size_t>(i)] = std::min(b, 71);
  }
  return bins;
}

std::array<double, 3> undiscretize_rotation(const std::array<int, 3>& bins) {
  return {5.0 * bins[0] + 2.5, 5.0 * bins[1] + 2.5, 5.0 * bins[2] + 2.5};
}

int bin_distance(int a, int b) {
  int d = std::abs(a - b) % 72;
  return std::min(d, 72 - d);
}

std::pair<int, int> binarize_flags(double gripper_raw, double collision_raw) {
  if (!std::isfinite(gripper_raw) || !std::isfinite(collision_raw))
    throw std::invalid_argument("binarize_flags: non-finite input");
  return {gripper_raw >= 0.5 ? 1 : 0, collision_raw >= 0.5 ? 1 : 0};
}

std::vector<GraspEvent> extract_grasp_events(const Demonstration& demo) {
  if (demo.frames.empty()) throw std::invalid_argument("extract_grasp_events: empty demo");
  std::vector<GraspEvent> events;
  for (size_t t = 1; t < demo.frames.size(); ++t) {
    const Frame &prev = demo.frames[t - 1], &cur = demo.frames[t];
    for (size_t arm = 0; arm < cur.action.size(); ++arm) {
      if (prev.action[arm].gripper == 0 && cur.action[arm].gripper == 1) {
        GraspEvent ev;
        ev.obs = prev.obs;
        ev.grasp_pose = cur.action[arm];
        ev.demo_seed = demo.seed;
        ev.frame_index = static_cast<int64_t>(t);
        ev.arm = static_cast<int>(arm);
        events.push_back(std::move(ev));
      }
    }
  }
  return events;
}

}  // namespace gparam
