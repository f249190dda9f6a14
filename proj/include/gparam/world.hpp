#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gparam/rng.hpp"

namespace gparam {

// ---- small geometry helpers ------------------------------------------------

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

// Rotate about +z by yaw (degrees).
Vec3 rotate_yaw(Vec3 p, double yaw_deg);
// Wrap an angle into [0, 360).
double wrap_deg(double deg);
// Unit quaternion (w,x,y,z) from Euler degrees applied as Rz(yaw)Ry(pitch)Rx(roll).
std::array<double, 4> quat_from_euler(const std::array<double, 3>& euler_deg);

// ---- core data types ---------------------------------------------------------

struct PointCloud {
  std::vector<Vec3> xyz;
  std::vector<std::array<float, 3>> rgb;  // [0,1]
  size_t size() const { return xyz.size(); }
  void push(Vec3 p, float r, float g, float b) {
    xyz.push_back(p);
    rgb.push_back({r, g, b});
  }
  void append(const PointCloud& other);
};

struct SceneObservation {
  PointCloud cloud;
  int n_cams = 5;
  int height = 64, width = 64;
  // Rigid camera-to-pixel transforms come from the fixed orthographic rig;
  // see render.hpp. Stored lazily as (n_cams, H, W) metadata here.
};

// One end-effector command / recorded pose. Angles are Euler degrees wrapped
// into [0, 360); flags are binary with 1 = closed / colliding.
struct RawAction {
  std::array<double, 3> trans{0, 0, 0};
  std::array<double, 3> rot{0, 0, 0};
  int gripper = 0;
  int collision = 0;
};

struct RobotState {
  int n_arms = 1;
  // per arm: xyz + unit quaternion (w,x,y,z)
  std::vector<std::array<double, 7>> ee_pose;
  std::vector<double> gripper_open;  // [0,1], 1 = fully open
  std::vector<double> joint_vel;     // 4 per arm: vx, vy, vz, yaw rate
  int64_t timestep = 0;
};

struct Frame {
  SceneObservation obs;
  std::vector<RawAction> action;  // one per arm
  RobotState state;
  std::string language;  // empty for continuous tasks
};

struct Demonstration {
  std::string task_id;
  uint64_t seed = 0;
  std::vector<Frame> frames;
  std::vector<int64_t> oracle_keyframes;  // strictly increasing, last = n-1
};

struct GraspEvent {
  SceneObservation obs;   // pre-transition frame
  RawAction grasp_pose;   // action at the transition frame (gripper = 1)
  uint64_t demo_seed = 0;
  int64_t frame_index = 0;
  int arm = 0;
};

// ---- discrete toy worlds -----------------------------------------------------

struct RigidObject {
  std::string name;
  PointCloud local;  // points in the object frame (origin at the center)
  Vec3 pos;          // world position of the origin
  double yaw_deg = 0;
  double half_height = 0;   // origin sits half_height above the support
  double grasp_yaw = 0;     // oracle end-effector yaw for a valid grasp
  bool graspable = true;
  bool inserted = false;                 // peg-insert bookkeeping
  std::vector<Vec3> grasp_points_local;  // empty = grasp at the origin
};

struct WorkspaceBounds {
  Vec3 lo{-0.25, -0.25, 0.0};
  Vec3 hi{0.25, 0.25, 0.5};
  bool contains(const std::array<double, 3>& p) const {
    return p[0] >= lo.x && p[0] <= hi.x && p[1] >= lo.y && p[1] <= hi.y && p[2] >= lo.z &&
           p[2] <= hi.z;
  }
};

struct DiscreteWorld {
  std::string task_id;
  uint64_t seed = 0;
  WorkspaceBounds bounds;
  std::vector<RigidObject> objects;

  Vec3 ee_pos{0, 0, 0.40};
  std::array<double, 3> ee_rot{0, 0, 0};
  int gripper_closed = 0;
  int attached = -1;          // object index or -1
  Vec3 attach_offset;         // object origin in the yaw-aligned gripper frame
  double attach_yaw_off = 0;  // object yaw minus gripper yaw at attach time
  int64_t steps = 0;
};

inline const std::array<const char*, 4> kDiscreteTasks = {"pick-place", "peg-insert", "stack",
                                                          "drawer-put"};
std::string task_language(const std::string& task_id);

// Scenery shared by the discrete and bimanual worlds.
PointCloud table_cloud();
PointCloud gripper_marker(Vec3 ee, double yaw_deg, bool closed, float r, float g, float b);

// Deterministic scene sampling for a task instance.
DiscreteWorld make_discrete_world(const std::string& task_id, uint64_t seed);

// Cloud snapshot of the world: table + objects + gripper marker.
PointCloud world_cloud(const DiscreteWorld& w);
bool world_success(const DiscreteWorld& w);
// Proprioception snapshot matching the demonstration recording convention.
RobotState discrete_robot_state(const DiscreteWorld& w);

struct StepResult {
  bool ok = true;  // false: action rejected (outside workspace), world unchanged
  bool success = false;
  bool collision = false;
};
StepResult step_discrete_world(DiscreteWorld& w, const RawAction& a);

// Scripted expert episode with oracle keyframe indices.
Demonstration generate_discrete_demo(const std::string& task_id, uint64_t seed);

// ---- dataset mining ----------------------------------------------------------

// Frames where the arm is (near) stationary or the gripper flag flips;
// the final frame is always included.
std::vector<int64_t> discover_keyframes(const Demonstration& demo, double v_eps);

// Per-axis 5-degree binning of Euler angles into [0, 72).
std::array<int, 3> discretize_rotation(const std::array<double, 3>& euler_deg);
std::array<double, 3> undiscretize_rotation(const std::array<int, 3>& bins);
// Wrap-aware distance between two 72-way bins.
int bin_distance(int a, int b);
std::pair<int, int> binarize_flags(double gripper_raw, double collision_raw);

// One event per open->close transition of any arm: the observation of the
// frame before the transition paired with the action at the transition.
std::vector<GraspEvent> extract_grasp_events(const Demonstration& demo);

}  // namespace gparam
