#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gparam/attention.hpp"
#include "gparam/nn.hpp"
#include "gparam/render.hpp"
#include "gparam/rng.hpp"
#include "gparam/tensor.hpp"
#include "gparam/world.hpp"

namespace gparam {

// Grasp-pretraining: a small convolutional detector is trained on grasp
// events mined from the demonstrations themselves (no extra labels), then its
// heads are stripped and its features are fused with the planner's tokens.

struct GpaConfig {
  int64_t patch = 8;  // spatial stride of the feature grid; 2, 4 or 8
  int64_t n_views = 5;
  int64_t height = 64, width = 64;
  double zoom = 4.0;   // second training scale, anchored at the grasp point
  double sigma = 1.5;  // pixel std-dev of heatmap targets
  double lr = 2e-3;
  Dtype dt = Dtype::f32;

  int64_t grid_h() const { return height / patch; }
  int64_t grid_w() const { return width / patch; }
  int64_t tokens_per_view() const { return grid_h() * grid_w(); }
  void validate() const;
};

inline constexpr int64_t kGraspFeatDim = 64;  // channel width of the last conv

// Convolutional grasp-pose detector over 7-channel orthographic views.
// Stride-2 stages downsample to the planner's token grid so every grasp
// feature token is spatially aligned with a planner patch token.
struct GraspDetector {
  GpaConfig cfg;
  Conv2d c1, c2, c3, c4;  // 7 -> 16 -> 32 -> 64 -> 64
  Linear score;           // 64 -> 1, per-token grasp location logit
  Linear rot;             // 64 -> 3*72 rotation-bin logits
  Linear grip;            // 64 -> 1 gripper logit

  GraspDetector() = default;
  GraspDetector(Rng& rng, GpaConfig cfg);

  // views: n_views tensors [7,H,W] -> features [n_views*P, 64],
  // view-major row-major (same ordering as planner patch tokens).
  Tensor features(Tape& tp, const std::vector<Tensor>& views) const;
  // features -> per-view location logits [n_views, H, W] via upsampling.
  Tensor heat_logits(Tape& tp, const Tensor& tokens) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct PretrainResult {
  GraspDetector detector;
  std::vector<double> curve;  // mean sample loss per epoch
};

// Trains grasp-location cross-entropy (Gaussian target at the projected grasp
// point) plus per-axis rotation-bin cross-entropy. Each event is seen at the
// base camera scale and at a zoomed scale anchored on the grasp point, so the
// features stay meaningful for both coarse and refined views downstream.
PretrainResult pretrain_grasp_detector(Rng& rng, const GpaConfig& cfg,
                                       const std::vector<GraspEvent>& events, int epochs);

// The detector's encoder with heads removed. When frozen, parameters are
// excluded from any optimizer (requires_grad false) and the fingerprint stays
// constant over downstream training.
struct FrozenFeatureExtractor {
  GpaConfig cfg;
  Conv2d c1, c2, c3, c4;
  bool frozen = true;

  Tensor features(Tape& tp, const std::vector<Tensor>& views) const;
  uint64_t fingerprint() const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Drops the heads and deep-copies the encoder. fine_tune = true leaves the
// copied weights trainable; the default freezes them.
FrozenFeatureExtractor strip_and_freeze(const GraspDetector& d, bool fine_tune = false);

enum class TokenSource : uint8_t { ram = 0, grasp = 1 };

struct FusedFeatures {
  Tensor tokens;                  // [T_ram + T_grasp, D]
  std::vector<TokenSource> tags;  // provenance, one per output token
};

// Adapts grasp features to the planner width, concatenates both streams along
// the token axis and mixes them with two self-attention encoder blocks.
// Planner tokens come first, grasp tokens after.
struct PloFusion {
  Linear adapter;  // kGraspFeatDim -> D
  EncoderBlock b1, b2;

  PloFusion() = default;
  PloFusion(Rng& rng, int64_t dim, int64_t heads, Dtype dt);

  // grasp_tokens may be undefined (or empty) -> plain encoder over ram_tokens.
  FusedFeatures forward(Tape& tp, const Tensor& grasp_tokens, const Tensor& ram_tokens) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace gparam
