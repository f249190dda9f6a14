#pragma once

#include <array>
#include <string>
#include <vector>

#include "gparam/world.hpp"

namespace gparam {

// Bimanual tabletop with two floating end-effectors that track commanded
// targets under a per-step displacement clamp. Arm 0 works the left half of
// the table, arm 1 the right half; the overlap band around x = 0 is where
// handoffs happen.
struct ContinuousWorld {
  std::string task_id;  // "transfer" | "insertion"
  uint64_t seed = 0;
  int hz = 50;
  double dt = 0.02;
  WorkspaceBounds bounds;

  std::array<Vec3, 2> arm_pos;
  std::array<double, 2> arm_yaw{0, 0};
  std::array<int, 2> arm_closed{0, 0};
  std::array<double, 2> reach_lo_x{-0.25, -0.05};
  std::array<double, 2> reach_hi_x{0.05, 0.25};

  std::vector<RigidObject> objects;
  std::array<int, 2> attached{-1, -1};       // object index per arm
  std::array<Vec3, 2> attach_offset;         // object origin in the arm frame
  std::array<double, 2> attach_yaw_off{0, 0};
  int64_t steps = 0;
};

inline const std::array<const char*, 2> kContinuousTasks = {"transfer", "insertion"};

ContinuousWorld make_continuous_world(const std::string& task_id, uint64_t seed, int hz = 50);
PointCloud continuous_cloud(const ContinuousWorld& w);
bool continuous_success(const ContinuousWorld& w);

// Per-arm targets; positions move toward a.trans clamped to max_arm_speed*dt,
// yaw tracks a.rot[2] under a rate clamp, and the binarized gripper flag
// drives the attach/release rules (closes resolve before opens so a handoff
// commanded in one step transfers the object instead of dropping it).
bool step_continuous_world(ContinuousWorld& w, const std::array<RawAction, 2>& a);

// Scripted two-arm expert at the world's control rate. Waypoint arrivals get
// one zero-velocity dwell frame (the oracle keyframes); gripper transitions
// are commanded at dwell frames only.
Demonstration generate_continuous_demo(const std::string& task_id, uint64_t seed, int hz = 50);

constexpr double kMaxArmSpeed = 1.0;     // m/s before the per-step clamp
constexpr double kMaxYawRate = 180.0;    // deg/s
constexpr double kGraspTolTransfer = 0.02;
constexpr double kGraspTolInsertion = 0.01;

}  // namespace gparam
