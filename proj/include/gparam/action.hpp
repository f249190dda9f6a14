#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gparam/gpa.hpp"
#include "gparam/ram.hpp"
#include "gparam/render.hpp"
#include "gparam/world.hpp"

namespace gparam {

// ---- prediction heads ---------------------------------------------------

struct HeadOutputs {
  Tensor heat_logits;      // [V,H,W] fine location logits (upsampled)
  Tensor heatmaps;         // per-view softmax of heat_logits
  Tensor rot_logits;       // [3,72]
  Tensor gripper_logit;    // [1,1]
  Tensor collision_logit;  // [1,1]
};

// Location scores come from the planner patch tokens; rotation, gripper and
// collision heads read a global mean-pool over every fused token.
struct ActionHeads {
  Linear score;         // D -> 1
  Mlp rot, grip, coll;  // D -> 128 -> {216, 1, 1}

  ActionHeads() = default;
  ActionHeads(Rng& rng, int64_t dim, Dtype dt);
  HeadOutputs forward(Tape& tp, const Tensor& tokens, const std::vector<TokenSource>& tags,
                      const RamConfig& cfg) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// ---- heatmap to 3D translation -------------------------------------------

struct BackprojectResult {
  Vec3 point;
  int64_t index = 0;  // cloud point index of the arg max
  double score = 0;
};

// Scores every cloud point by the sum over views of the bilinearly sampled
// heatmap value at its projection; returns the best-scoring point.
// Ties break toward the lowest point index.
BackprojectResult backproject_translation(const Tensor& heatmaps, const PointCloud& cloud,
                                          const std::vector<OrthoCam>& cams);

// ---- losses ---------------------------------------------------------------

struct LossWeights {
  double trans = 1, rot = 1, gripper = 1, collision = 1;
  void validate() const;  // nonnegative
};

// Ground truth for one keyframe prediction, discretized like the dataset.
struct KeyframeTarget {
  Vec3 trans;
  std::array<int, 3> rot_bins{0, 0, 0};
  int gripper = 0;
  int collision = 0;
};
KeyframeTarget keyframe_target(const RawAction& a);

struct LossReport {
  Tensor total;  // scalar, lives on the caller's tape
  double total_value = 0;
  double trans_ce = 0;       // fine heatmap cross-entropy
  double rot_brier = 0;      // squared L2 between probability rows and one-hots
  double gripper_bce = 0;
  double collision_bce = 0;
  double coarse_ce = 0;      // auxiliary first-stage heatmap cross-entropy
  double trans_l2 = 0;       // squared Euclidean metric, reported only
};

// Differentiable prediction in probability space (heat stays in logits for a
// numerically stable log-softmax inside the cross-entropy).
struct PredictedAction {
  Tensor heat_logits;     // [V,H,W]
  Tensor rot_rows;        // [3,72], rows sum to 1
  Tensor gripper_prob;    // [1,1]
  Tensor collision_prob;  // [1,1]
};
PredictedAction to_distribution(Tape& tp, const HeadOutputs& h);

// Shared helpers: per-view Gaussian heatmap targets and their cross-entropy.
Tensor gaussian_heat_targets(const std::vector<OrthoCam>& cams, Vec3 p, double sigma, Dtype dt);
Tensor heatmap_ce(Tape& tp, const Tensor& logits, const Tensor& targets);

// Composite objective. The translation arg max is not differentiable, so the
// position is trained through the heatmap cross-entropy; the Euclidean gap of
// predicted_trans is reported untrained. coarse_logits may be undefined.
// Throws on non-finite values.
LossReport total_loss(Tape& tp, const PredictedAction& pred, const Tensor& coarse_logits,
                      const std::vector<OrthoCam>& fine_cams,
                      const std::vector<OrthoCam>& coarse_cams, const KeyframeTarget& gt,
                      Vec3 predicted_trans, const LossWeights& w, double sigma);

// ---- the two-stage discrete policy ----------------------------------------

struct DiscreteAction {
  Vec3 trans;
  Tensor rot_rows;  // [3,72] probabilities, each row sums to 1
  double gripper_prob = 0;
  double collision_prob = 0;
  RawAction to_raw() const;  // arg max bins -> degrees; probs thresholded at 0.5
};

struct DiscretePolicyConfig {
  RamConfig ram;        // geometry shared by both stages
  bool use_gpa = true;  // fuse frozen grasp features into the fine stage
  void validate() const;
};

struct DiscretePolicy {
  DiscretePolicyConfig cfg;
  RamStage coarse, fine;
  FrozenFeatureExtractor extractor;  // set via set_extractor when use_gpa
  PloFusion fusion;
  ActionHeads heads;

  DiscretePolicy() = default;
  DiscretePolicy(Rng& rng, DiscretePolicyConfig cfg);
  void set_extractor(FrozenFeatureExtractor fx);

  struct Prediction {
    DiscreteAction action;
    CoarseLocation coarse_loc;
    Vec3 anchor;
    std::vector<OrthoCam> fine_cams;
  };
  Prediction predict(const PointCloud& cloud, const RobotState& state,
                     const std::string& language) const;

  // Training-time forward for one (observation, keyframe target) pair. The
  // refinement crop is centered on the target plus a small jitter so the fine
  // stage cannot learn "the answer is at the image center".
  LossReport train_forward(Tape& tp, const PointCloud& cloud, const RobotState& state,
                           const std::string& language, const KeyframeTarget& gt,
                           const LossWeights& w, Rng& jitter) const;

  void collect(const std::string& prefix, ParamList& out) const;
  std::vector<Tensor> trainable() const;
};

// ---- training pairs and closed-loop evaluation ----------------------------

struct TrainPair {
  PointCloud cloud;
  RobotState state;
  std::string language;
  KeyframeTarget target;
};

// Replays the demo's keyframe actions in a fresh world and pairs each
// intermediate observation with the next keyframe action, so the training
// observations match the closed-loop evaluation distribution exactly.
std::vector<TrainPair> keyframe_training_pairs(const Demonstration& demo, double v_eps = 1e-4);

using DiscretePolicyFn =
    std::function<RawAction(const PointCloud&, const RobotState&, const std::string&)>;

struct EpisodeResult {
  std::string task;
  uint64_t seed = 0;
  bool success = false;
  int64_t steps = 0;
  std::vector<RawAction> actions;       // one per executed step
  std::vector<double> trans_trace;      // per-step squared translation gap
  double trans_l2 = 0;                  // mean over aligned steps
  double rot_bin_acc = 0;               // exact-bin fraction over axes
  double gripper_acc = 0;
  double collision_acc = 0;
};

// Repeatedly predicts the next keyframe action and steps the world until
// success or max_steps. Metrics compare step i against oracle_targets[i]
// while both exist; pass nullptr to skip metrics.
EpisodeResult evaluate_episode(const DiscretePolicyFn& policy, DiscreteWorld& world, int max_steps,
                               const std::vector<KeyframeTarget>* oracle_targets = nullptr);

// One JSON-lines record per episode.
std::string episode_json(const EpisodeResult& r);

}  // namespace gparam
