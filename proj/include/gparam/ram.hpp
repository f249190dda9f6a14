#pragma once

#include <array>
#include <string>
#include <vector>

#include "gparam/attention.hpp"
#include "gparam/nn.hpp"
#include "gparam/render.hpp"
#include "gparam/ssm.hpp"
#include "gparam/tensor.hpp"
#include "gparam/world.hpp"

namespace gparam {

// One perception stage: per-view self-attention with an appended
// proprioception token, multi-view + language merge, a sequence mixer over
// the flattened patch sequence (selective state space by default, a matched
// attention block for ablations), and a per-token score head that decodes to
// per-view probability heatmaps.
struct RamConfig {
  int64_t dim = 64;
  int64_t patch = 8;
  int64_t heads = 4;
  int64_t lang_vocab = 256;
  int n_views = 5;
  int height = 64, width = 64;
  int n_arms = 1;
  double zoom = 4.0;
  double sigma = 1.5;       // heatmap target stddev, pixels
  bool use_language = true;
  bool mamba = true;        // false: swap the sequence mixer for attention
  Dtype dt = Dtype::f32;

  int64_t grid_h() const { return height / patch; }
  int64_t grid_w() const { return width / patch; }
  int64_t tokens_per_view() const { return grid_h() * grid_w(); }
  int64_t state_inputs() const { return 8 * n_arms; }  // pose (7) + opening per arm
  void validate() const;
};

// Hash a whitespace-separated tag into fixed embedding-table rows.
std::vector<int> language_token_ids(const std::string& text, int64_t vocab);

// Flattened proprioception vector [1, 8*n_arms]: per arm xyz + quaternion +
// gripper opening. Joint velocities are excluded so the policy cannot key on
// motion cues that differ between recorded frames and closed-loop rollouts.
Tensor state_vector(const RobotState& state, int n_arms, Dtype dt);

struct RamStage {
  RamConfig cfg;
  Conv2d patch_embed;   // 7 -> D, kernel = stride = patch
  Tensor pos_embed;     // [tokens_per_view, D]
  Tensor view_embed;    // [n_views, D]
  Tensor lang_table;    // [vocab, D], frozen hash-keyed lookup
  Mlp state_mlp;        // 8*n_arms -> D -> D
  EncoderBlock view_block;  // shared across views (phase 1)
  MambaBlock mixer_ssm;     // used when cfg.mamba
  LayerNorm mix_ln;         // } used when !cfg.mamba: x + attn(LN(x))
  Mhsa mix_attn;            // }
  LayerNorm post_ln;        // LN + FFN + residual after the mixer
  Linear ffn1, ffn2;
  LayerNorm out_ln;
  Linear score;             // D -> 1 per-token heatmap logit

  RamStage() = default;
  RamStage(Rng& rng, RamConfig cfg);

  struct Features {
    Tensor tokens;     // [T, D] final merged tokens (patch tokens then language)
    int64_t t_patch = 0;
    int64_t t_lang = 0;
    std::vector<Tensor> view_tokens;  // post-phase-1 per-view [P, D]
    Tensor heat_logits;  // [V, H, W] upsampled per-token scores
    Tensor heatmaps;     // [V, H, W] softmax-normalized per view
  };
  Features forward(Tape& tp, const std::vector<Tensor>& views, const RobotState& state,
                   const std::string& language) const;

  void collect(const std::string& prefix, ParamList& out) const;
};

// Patch-token bookkeeping: merged index -> (view, row, col). Bijective over
// the patch prefix of the token sequence.
std::array<int, 3> token_coord(const RamConfig& cfg, int64_t token_index);
int64_t coord_token(const RamConfig& cfg, int view, int row, int col);

// Rendered [7,H,W] images for every camera in the rig.
std::vector<Tensor> render_views(const std::vector<OrthoCam>& cams, const PointCloud& cloud);

struct CoarseLocation {
  int view = 0, row = 0, col = 0;
  double value = 0;
};

// Global arg max over all views and pixels; exact ties break toward the
// lowest (view, row, col).
CoarseLocation heatmap_argmax(const Tensor& heatmaps);

// World-space anchor for zooming: the xyz channel at the arg max pixel. A
// background hit falls back to the nearest foreground pixel within 5 px;
// throws "empty coarse region" when none exists.
Vec3 backproject_anchor(const std::vector<Tensor>& views, const CoarseLocation& loc);

// Refined camera set: re-centered on the anchor with z-times finer scale.
// zoom = 1 keeps the original cameras (identity refinement).
std::vector<OrthoCam> zoom_crop(const std::vector<OrthoCam>& base, Vec3 anchor, double zoom);

}  // namespace gparam
