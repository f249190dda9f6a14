#include "gparam/ram.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "gparam/io_util.hpp"

namespace gparam {

void RamConfig::validate() const {
  if (patch <= 0 || height % patch != 0 || width % patch != 0)
    throw std::invalid_argument("RamConfig: patch size must divide height and width");
  if (dim % heads != 0) throw std::invalid_argument("RamConfig: heads must divide dim");
  if (n_views != 2 && n_views != 5)
    throw std::invalid_argument("RamConfig: n_views must be 2 or 5");
  if (zoom < 1.0) throw std::invalid_argument("RamConfig: zoom must be >= 1");
}

std::vector<int> language_token_ids(const std::string& text, int64_t vocab) {
  std::vector<int> ids;
  std::istringstream ss(text);
  std::string word;
  while (ss >> word) ids.push_back(static_cast<int>(fnv1a64(word) % static_cast<uint64_t>(vocab)));
  return ids;
}

Tensor state_vector(const RobotState& state, int n_arms, Dtype dt) {
  if (static_cast<int>(state.ee_pose.size()) < n_arms ||
      static_cast<int>(state.gripper_open.size()) < n_arms)
    throw std::invalid_argument("state_vector: robot state is missing arms");
  Tensor t = Tensor::zeros({1, 8 * n_arms}, dt);
  for (int a = 0; a < n_arms; ++a) {
    for (int i = 0; i < 7; ++i)
      t.set(8 * a + i, state.ee_pose[static_cast<size_t>(a)][static_cast<size_t>(i)]);
    t.set(8 * a + 7, state.gripper_open[static_cast<size_t>(a)]);
  }
  return t;
}

RamStage::RamStage(Rng& rng, RamConfig cfg_in) : cfg(cfg_in) {
  cfg.validate();
  const int64_t D = cfg.dim, P = cfg.tokens_per_view();
  patch_embed = Conv2d(rng, 7, D, cfg.patch, static_cast<int>(cfg.patch), 0, cfg.dt);

  auto table = [&](Shape shape, double sd) {
    Tensor t = Tensor::zeros(shape, cfg.dt, true);
    for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal(0.0, sd));
    return t;
  };
  pos_embed = table({P, D}, 0.02);
  view_embed = table({cfg.n_views, D}, 0.02);
  lang_table = table({cfg.lang_vocab, D}, 1.0 / std::sqrt(static_cast<double>(D)));
  lang_table.set_requires_grad(false);  // frozen deterministic lookup

  state_mlp = Mlp(rng, cfg.state_inputs(), D, D, cfg.dt);
  AttentionConfig ac{D, cfg.heads, 4};
  view_block = EncoderBlock(rng, ac, cfg.dt);
  if (cfg.mamba) {
    MambaConfig mc;
    mc.dim = D;
    mixer_ssm = MambaBlock(rng, mc, cfg.dt);
  } else {
    mix_ln = LayerNorm(D, cfg.dt);
    mix_attn = Mhsa(rng, ac, cfg.dt);
  }
  post_ln = LayerNorm(D, cfg.dt);
  ffn1 = Linear(rng, D, 4 * D, cfg.dt);
  ffn2 = Linear(rng, 4 * D, D, cfg.dt);
  out_ln = LayerNorm(D, cfg.dt);
  score = Linear(rng, D, 1, cfg.dt);
}

RamStage::Features RamStage::forward(Tape& tp, const std::vector<Tensor>& views,
                                     const RobotState& state, const std::string& language) const {
  if (static_cast<int>(views.size()) != cfg.n_views)
    throw std::invalid_argument("RamStage: expected " + std::to_string(cfg.n_views) + " views");
  const int64_t D = cfg.dim, P = cfg.tokens_per_view();

  Tensor f_s = state_mlp.forward(tp, state_vector(state, cfg.n_arms, cfg.dt));  // [1,D]

  Features out;
  std::vector<Tensor> merged;
  for (int v = 0; v < cfg.n_views; ++v) {
    Tensor img = views[static_cast<size_t>(v)];
    if (img.dtype() != cfg.dt) img = img.astype(cfg.dt);
    Tensor fm = patch_embed.forward(tp, img);              // [D, gh, gw]
    Tensor tok = transpose2d(tp, reshape(tp, fm, {D, P})); // [P, D]
    tok = add(tp, tok, pos_embed);
    Tensor ve = reshape(tp, slice(tp, view_embed, 0, v, 1), {D});
    tok = add_rowwise(tp, tok, ve);
    std::array<Tensor, 2> with_state{tok, f_s};
    Tensor seq = concat(tp, with_state, 0);                // [P+1, D]
    seq = view_block.forward(tp, seq);
    Tensor kept = slice(tp, seq, 0, 0, P);  // proprioception token dropped at merge
    out.view_tokens.push_back(kept);
    merged.push_back(kept);
  }
  if (cfg.use_language) {
    std::vector<int> ids = language_token_ids(language, cfg.lang_vocab);
    if (!ids.empty()) merged.push_back(embedding(tp, lang_table, ids));
    out.t_lang = static_cast<int64_t>(ids.size());
  }
  Tensor x = concat(tp, merged, 0);  // [T, D], view-major row-major, language last
  out.t_patch = cfg.n_views * P;

  Tensor mixed =
      cfg.mamba ? mixer_ssm.forward(tp, x) : mix_attn.forward(tp, mix_ln.forward(tp, x));
  x = add(tp, x, mixed);
  Tensor h = post_ln.forward(tp, x);
  h = ffn2.forward(tp, silu(tp, ffn1.forward(tp, h)));
  x = add(tp, x, h);
  x = out_ln.forward(tp, x);
  out.tokens = x;

  Tensor logits = score.forward(tp, slice(tp, x, 0, 0, out.t_patch));  // [Vp, 1]
  Tensor grid = reshape(tp, logits, {cfg.n_views, cfg.grid_h(), cfg.grid_w()});
  Tensor up = bilinear_upsample2d(tp, grid, static_cast<int>(cfg.patch));  // [V, H, W]
  out.heat_logits = up;
  Tensor flat = reshape(tp, up, {cfg.n_views, static_cast<int64_t>(cfg.height) * cfg.width});
  out.heatmaps = reshape(tp, softmax_lastdim(tp, flat), {cfg.n_views, cfg.height, cfg.width});
  return out;
}

void RamStage::collect(const std::string& prefix, ParamList& out) const {
  patch_embed.collect(prefix + "patch_embed.", out);
  out.emplace_back(prefix + "pos_embed", pos_embed);
  out.emplace_back(prefix + "view_embed", view_embed);
  out.emplace_back(prefix + "lang_table", lang_table);
  state_mlp.collect(prefix + "state_mlp.", out);
  view_block.collect(prefix + "view_block.", out);
  if (cfg.mamba) {
    mixer_ssm.collect(prefix + "mixer_ssm.", out);
  } else {
    mix_ln.collect(prefix + "mix_ln.", out);
    mix_attn.collect(prefix + "mix_attn.", out);
  }
  post_ln.collect(prefix + "post_ln.", out);
  ffn1.collect(prefix + "ffn1.", out);
  ffn2.collect(prefix + "ffn2.", out);
  out_ln.collect(prefix + "out_ln.", out);
  score.collect(prefix + "score.", out);
}

std::array<int, 3> token_coord(const RamConfig& cfg, int64_t token_index) {
  const int64_t P = cfg.tokens_per_view();
  if (token_index < 0 || token_index >= cfg.n_views * P)
    throw std::out_of_range("token_coord: not a patch token");
  int64_t v = token_index / P, rc = token_index % P;
  return {static_cast<int>(v), static_cast<int>(rc / cfg.grid_w()),
          static_cast<int>(rc % cfg.grid_w())};
}

int64_t coord_token(const RamConfig& cfg, int view, int row, int col) {
  return (static_cast<int64_t>(view) * cfg.grid_h() + row) * cfg.grid_w() + col;
}

std::vector<Tensor> render_views(const std::vector<OrthoCam>& cams, const PointCloud& cloud) {
  std::vector<Tensor> out;
  out.reserve(cams.size());
  for (const OrthoCam& cam : cams) out.push_back(render_view(cam, cloud));
  return out;
}

CoarseLocation heatmap_argmax(const Tensor& heatmaps) {
  if (heatmaps.ndim() != 3) throw std::invalid_argument("heatmap_argmax: expected [V,H,W]");
  const int64_t V = heatmaps.dim(0), H = heatmaps.dim(1), W = heatmaps.dim(2);
  CoarseLocation best;
  best.value = -1e300;
  for (int64_t v = 0; v < V; ++v)
    for (int64_t r = 0; r < H; ++r)
      for (int64_t c = 0; c < W; ++c) {
        double x = heatmaps.at((v * H + r) * W + c);
        if (x > best.value) {
          best.value = x;
          best.view = static_cast<int>(v);
          best.row = static_cast<int>(r);
          best.col = static_cast<int>(c);
        }
      }
  return best;
}

Vec3 backproject_anchor(const std::vector<Tensor>& views, const CoarseLocation& loc) {
  if (loc.view < 0 || loc.view >= static_cast<int>(views.size()))
    throw std::out_of_range("backproject_anchor: view index out of range");
  const Tensor& img = views[static_cast<size_t>(loc.view)];
  const int64_t H = img.dim(1), W = img.dim(2);
  auto chan = [&](int c, int64_t r, int64_t col) { return img.at((c * H + r) * W + col); };

  int64_t best_r = -1, best_c = -1;
  double best_d2 = 25.0 + 1e-9;  // search radius 5 px
  for (int64_t r = std::max<int64_t>(0, loc.row - 5); r <= std::min<int64_t>(H - 1, loc.row + 5);
       ++r)
    for (int64_t c = std::max<int64_t>(0, loc.col - 5);
         c <= std::min<int64_t>(W - 1, loc.col + 5); ++c) {
      if (chan(6, r, c) >= 2.0) continue;  // background
      double dr = static_cast<double>(r - loc.row), dc = static_cast<double>(c - loc.col);
      double d2 = dr * dr + dc * dc;
      if (d2 < best_d2) {
        best_d2 = d2;
        best_r = r;
        best_c = c;
      }
    }
  if (best_r < 0) throw std::runtime_error("empty coarse region");
  return {chan(3, best_r, best_c), chan(4, best_r, best_c), chan(5, best_r, best_c)};
}

std::vector<OrthoCam> zoom_crop(const std::vector<OrthoCam>& base, Vec3 anchor, double zoom) {
  if (zoom < 1.0) throw std::invalid_argument("zoom_crop: zoom must be >= 1");
  if (zoom == 1.0) return base;  // identity refinement keeps the original framing
  return zoom_rig(base, anchor, zoom);
}

}  // namespace gparam
