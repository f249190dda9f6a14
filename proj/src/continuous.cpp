#include "gparam/continuous.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace gparam {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Degrees (any range) -> radians in (-pi, pi].
double rad_wrapped(double deg) {
  double d = wrap_deg(deg);
  if (d > 180.0) d -= 360.0;
  return d * kPi / 180.0;
}

void encode_row(Tensor& chunk, int64_t row, const std::array<RawAction, 2>& acts) {
  for (int arm = 0; arm < 2; ++arm) {
    const RawAction& a = acts[static_cast<size_t>(arm)];
    int64_t base = row * kChunkDof + arm * 7;
    for (int i = 0; i < 3; ++i) chunk.set(base + i, a.trans[static_cast<size_t>(i)]);
    for (int i = 0; i < 3; ++i) chunk.set(base + 3 + i, rad_wrapped(a.rot[static_cast<size_t>(i)]));
    chunk.set(base + 6, static_cast<double>(a.gripper));
  }
}

}  // namespace

Tensor chunk_from_actions(const std::vector<std::array<RawAction, 2>>& steps, Dtype dt) {
  if (steps.empty()) throw std::invalid_argument("chunk_from_actions: no steps");
  Tensor chunk = Tensor::zeros({static_cast<int64_t>(steps.size()), kChunkDof}, dt);
  for (size_t r = 0; r < steps.size(); ++r)
    encode_row(chunk, static_cast<int64_t>(r), steps[r]);
  return chunk;
}

std::array<RawAction, 2> chunk_row_actions(const Tensor& chunk, int64_t row) {
  if (chunk.ndim() != 2 || chunk.dim(1) != kChunkDof)
    throw std::invalid_argument("chunk_row_actions: chunk must be [k, 14]");
  if (row < 0 || row >= chunk.dim(0)) throw std::out_of_range("chunk_row_actions: row");
  std::array<RawAction, 2> acts;
  for (int arm = 0; arm < 2; ++arm) {
    int64_t base = row * kChunkDof + arm * 7;
    RawAction& a = acts[static_cast<size_t>(arm)];
    for (int i = 0; i < 3; ++i) a.trans[static_cast<size_t>(i)] = chunk.at(base + i);
    for (int i = 0; i < 3; ++i)
      a.rot[static_cast<size_t>(i)] = wrap_deg(chunk.at(base + 3 + i) * 180.0 / kPi);
    a.gripper = chunk.at(base + 6) > 0.5 ? 1 : 0;
    a.collision = 0;
  }
  return acts;
}

Tensor demo_chunk(const Demonstration& demo, int64_t t, int64_t k, Dtype dt) {
  const int64_t n = static_cast<int64_t>(demo.frames.size());
  if (n == 0) throw std::invalid_argument("demo_chunk: empty demonstration");
  if (t < 0 || t >= n) throw std::out_of_range("demo_chunk: start frame");
  if (k < 1) throw std::invalid_argument("demo_chunk: k must be >= 1");
  std::vector<std::array<RawAction, 2>> steps;
  steps.reserve(static_cast<size_t>(k));
  for (int64_t j = 0; j < k; ++j) {
    const auto& acts = demo.frames[static_cast<size_t>(std::min(t + j, n - 1))].action;
    if (acts.size() != 2) throw std::invalid_argument("demo_chunk: frames must have two arms");
    steps.push_back({acts[0], acts[1]});
  }
  return chunk_from_actions(steps, dt);
}

Tensor chunk_loss(Tape& tp, const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape())
    throw std::invalid_argument("chunk_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                shape_str(gt.shape()));
  Tensor d = sub(tp, pred, gt);
  return mean_all(tp, mul(tp, d, d));
}

void ContinuousPolicyConfig::validate() const {
  ram.validate();
  if (ram.use_language) throw std::invalid_argument("continuous policy takes no language input");
  if (ram.n_arms != 2) throw std::invalid_argument("continuous policy drives two arms");
  if (chunk < 1) throw std::invalid_argument("chunk size must be >= 1");
  if (k_exec < 1 || k_exec > chunk)
    throw std::invalid_argument("k_exec must lie in [1, chunk]");
}

ContinuousPolicy::ContinuousPolicy(Rng& rng, ContinuousPolicyConfig cfg_in) : cfg(cfg_in) {
  cfg.validate();
  const int64_t D = cfg.ram.dim;
  encoder = RamStage(rng, cfg.ram);
  fusion = PloFusion(rng, D, cfg.ram.heads, cfg.ram.dt);
  queries = Tensor::zeros({cfg.chunk, D}, cfg.ram.dt, true);
  for (int64_t i = 0; i < queries.numel(); ++i) queries.set(i, rng.normal(0.0, 0.02));
  AttentionConfig ac{D, cfg.ram.heads, 4};
  dec1 = DecoderBlock(rng, ac, cfg.ram.dt);
  dec2 = DecoderBlock(rng, ac, cfg.ram.dt);
  head = Linear(rng, D, kChunkDof, cfg.ram.dt);
}

Tensor ContinuousPolicy::encode(Tape& tp, const std::vector<Tensor>& views,
                                const RobotState& state) const {
  return encoder.forward(tp, views, state, "").tokens;
}

Tensor ContinuousPolicy::fuse(Tape& tp, const std::vector<Tensor>& views,
                              const Tensor& ram_tokens) const {
  Tensor grasp;  // undefined: plain encoder-only memory
  if (cfg.use_gpa) {
    if (!extractor.c1.w.defined()) throw std::logic_error("grasp extractor required");
    grasp = extractor.features(tp, views);
  }
  return fusion.forward(tp, grasp, ram_tokens).tokens;
}

Tensor ContinuousPolicy::decode(Tape& tp, const Tensor& memory) const {
  Tensor q = dec1.forward(tp, queries, memory);
  q = dec2.forward(tp, q, memory);
  return head.forward(tp, q);
}

Tensor ContinuousPolicy::forward(Tape& tp, const PointCloud& cloud,
                                 const RobotState& state) const {
  auto cams = standard_rig(cfg.ram.n_views, cfg.ram.height, cfg.ram.width);
  auto views = render_views(cams, cloud);
  Tensor tokens = encode(tp, views, state);
  return decode(tp, fuse(tp, views, tokens));
}

Tensor ContinuousPolicy::predict(const PointCloud& cloud, const RobotState& state) const {
  Tape tp(false);
  return forward(tp, cloud, state);
}

void ContinuousPolicy::collect(const std::string& prefix, ParamList& out) const {
  encoder.collect(prefix + "encoder.", out);
  if (extractor.c1.w.defined()) extractor.collect(prefix + "extractor.", out);
  fusion.collect(prefix + "fusion.", out);
  out.emplace_back(prefix + "queries", queries);
  dec1.collect(prefix + "dec1.", out);
  dec2.collect(prefix + "dec2.", out);
  head.collect(prefix + "head.", out);
}

std::vector<Tensor> ContinuousPolicy::trainable() const {
  ParamList all;
  collect("", all);
  std::vector<Tensor> out;
  for (auto& [name, t] : all)
    if (t.requires_grad()) out.push_back(t);
  return out;
}

std::vector<ContinuousTrainPair> chunk_training_pairs(const Demonstration& demo, int64_t k,
                                                      int64_t stride, Dtype dt) {
  if (stride < 1) throw std::invalid_argument("chunk_training_pairs: stride must be >= 1");
  std::vector<ContinuousTrainPair> out;
  for (int64_t t = 0; t < static_cast<int64_t>(demo.frames.size()); t += stride) {
    ContinuousTrainPair p;
    p.cloud = demo.frames[static_cast<size_t>(t)].obs.cloud;
    p.state = demo.frames[static_cast<size_t>(t)].state;
    p.chunk = demo_chunk(demo, t, k, dt);
    out.push_back(std::move(p));
  }
  return out;
}

RobotState continuous_robot_state(const ContinuousWorld& w) {
  RobotState s;
  s.n_arms = 2;
  s.timestep = w.steps;
  for (int arm = 0; arm < 2; ++arm) {
    const Vec3& p = w.arm_pos[static_cast<size_t>(arm)];
    s.ee_pose.push_back({p.x, p.y, p.z, 1, 0, 0, 0});
    s.gripper_open.push_back(w.arm_closed[static_cast<size_t>(arm)] ? 0.0 : 1.0);
    for (int i = 0; i < 4; ++i) s.joint_vel.push_back(0.0);
  }
  return s;
}

RolloutResult rollout_continuous(const ChunkPolicyFn& fn, ContinuousWorld& w, int64_t horizon,
                                 int64_t k_exec) {
  if (horizon < 0) throw std::invalid_argument("rollout: horizon must be >= 0");
  if (k_exec < 1) throw std::invalid_argument("rollout: k_exec must be >= 1");
  RolloutResult r;
  r.task = w.task_id;
  r.seed = w.seed;
  Tensor chunk;
  int64_t base = 0;
  for (int64_t step = 0; step < horizon; ++step) {
    if (!chunk.defined() || step - base == k_exec) {
      chunk = fn(continuous_cloud(w), continuous_robot_state(w));
      if (chunk.ndim() != 2 || chunk.dim(1) != kChunkDof || chunk.dim(0) < k_exec)
        throw std::invalid_argument("rollout: policy chunk must be [k, 14] with k >= k_exec");
      for (int64_t i = 0; i < chunk.numel(); ++i)
        if (!std::isfinite(chunk.at(i))) throw std::runtime_error("rollout: non-finite chunk");
      base = step;
    }
    bool done = step_continuous_world(w, chunk_row_actions(chunk, step - base));
    r.arm_trace.push_back({w.arm_pos[0], w.arm_pos[1]});
    r.steps = step + 1;
    if (done) {
      r.success = true;
      break;
    }
  }
  return r;
}

std::string rollout_json(const RolloutResult& r) {
  nlohmann::json j;
  j["task"] = r.task;
  j["seed"] = r.seed;
  j["success"] = r.success;
  j["steps"] = r.steps;
  return j.dump();
}

}  // namespace gparam
