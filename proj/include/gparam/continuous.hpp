#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "gparam/continuous_world.hpp"
#include "gparam/gpa.hpp"
#include "gparam/ram.hpp"

namespace gparam {

// Chunk rows hold both arms' targets: per arm x, y, z, then roll/pitch/yaw in
// radians wrapped to (-pi, pi], then the gripper command (1 = close).
inline constexpr int64_t kChunkDof = 14;

// Encode per-step two-arm commands as chunk rows and back. The gripper entry
// binarizes at 0.5 on the way out.
Tensor chunk_from_actions(const std::vector<std::array<RawAction, 2>>& steps, Dtype dt);
std::array<RawAction, 2> chunk_row_actions(const Tensor& chunk, int64_t row);

// Ground-truth chunk starting at frame t: the commanded actions of frames
// t .. t+k-1, repeating the final frame when the demo runs out.
Tensor demo_chunk(const Demonstration& demo, int64_t t, int64_t k, Dtype dt);

// Mean squared error over all k x dof entries.
Tensor chunk_loss(Tape& tp, const Tensor& pred, const Tensor& gt);

struct ContinuousPolicyConfig {
  RamConfig ram;  // defaults below: two fixed cameras, two arms, no language
  bool use_gpa = true;
  int64_t chunk = 20;
  int64_t k_exec = 10;

  ContinuousPolicyConfig() {
    ram.n_views = 2;
    ram.n_arms = 2;
    ram.use_language = false;
  }
  void validate() const;
};

// Single-stage encoder (no coarse-to-fine refinement), optional frozen grasp
// features fused in, and a two-block attention decoder that turns k learned
// queries into a k x 14 action chunk.
struct ContinuousPolicy {
  ContinuousPolicyConfig cfg;
  RamStage encoder;
  FrozenFeatureExtractor extractor;  // required when cfg.use_gpa
  PloFusion fusion;
  Tensor queries;  // [chunk, D] learned decoder queries
  DecoderBlock dec1, dec2;
  Linear head;  // D -> kChunkDof

  ContinuousPolicy() = default;
  ContinuousPolicy(Rng& rng, ContinuousPolicyConfig cfg);

  void set_extractor(FrozenFeatureExtractor fx) { extractor = std::move(fx); }

  // Encoder tokens for one observation (patch tokens only; no language).
  Tensor encode(Tape& tp, const std::vector<Tensor>& views, const RobotState& state) const;
  // Fused memory: frozen grasp tokens adapted and appended after the encoder
  // tokens; reduces to the plain encoder path when use_gpa is off.
  Tensor fuse(Tape& tp, const std::vector<Tensor>& views, const Tensor& ram_tokens) const;
  // Cross-attend the learned queries into the memory and map to a chunk.
  Tensor decode(Tape& tp, const Tensor& memory) const;

  Tensor forward(Tape& tp, const PointCloud& cloud, const RobotState& state) const;
  // Gradient-free forward for rollouts.
  Tensor predict(const PointCloud& cloud, const RobotState& state) const;

  void collect(const std::string& prefix, ParamList& out) const;
  std::vector<Tensor> trainable() const;
};

struct ContinuousTrainPair {
  PointCloud cloud;
  RobotState state;
  Tensor chunk;  // [k, kChunkDof]
};

// Observation/chunk pairs sampled every `stride` frames of a demonstration,
// matching the fixed-stride re-planning used at rollout time.
std::vector<ContinuousTrainPair> chunk_training_pairs(const Demonstration& demo, int64_t k,
                                                      int64_t stride, Dtype dt);

// Proprioception snapshot matching the demonstration recording convention
// (the recorded commanded-velocity field is not part of the policy input, so
// it is left zero here).
RobotState continuous_robot_state(const ContinuousWorld& w);

using ChunkPolicyFn = std::function<Tensor(const PointCloud&, const RobotState&)>;

struct RolloutResult {
  std::string task;
  uint64_t seed = 0;
  bool success = false;
  int64_t steps = 0;
  std::vector<std::array<Vec3, 2>> arm_trace;  // per executed step
};

// Every k_exec steps re-observe and request a fresh chunk; execute its first
// k_exec rows open-loop; stop at success or horizon.
RolloutResult rollout_continuous(const ChunkPolicyFn& fn, ContinuousWorld& w, int64_t horizon,
                                 int64_t k_exec);

std::string rollout_json(const RolloutResult& r);

}  // namespace gparam
