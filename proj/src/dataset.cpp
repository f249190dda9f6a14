#include "gparam/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "gparam/continuous_world.hpp"
#include "gparam/io_util.hpp"

namespace gparam {

namespace {

constexpr char kMagic[4] = {'G', 'P', 'R', 'D'};
constexpr char kIndexMagic[4] = {'G', 'P', 'R', 'I'};
constexpr uint16_t kVersion = 1;

void write_demo(std::ostream& os, const Demonstration& d) {
  write_str(os, d.task_id);
  write_le<uint64_t>(os, d.seed);
  write_le<uint32_t>(os, static_cast<uint32_t>(d.frames.size()));
  uint32_t n_arms = d.frames.empty() ? 1 : static_cast<uint32_t>(d.frames[0].action.size());
  write_le<uint32_t>(os, n_arms);
  write_str(os, d.frames.empty() ? "" : d.frames[0].language);
  write_le<uint32_t>(os, static_cast<uint32_t>(d.oracle_keyframes.size()));
  for (int64_t k : d.oracle_keyframes) write_le<int64_t>(os, k);

  for (const Frame& f : d.frames) {
    if (f.action.size() != n_arms)
      throw std::invalid_argument("save_dataset: ragged arm count within a demo");
    const PointCloud& pc = f.obs.cloud;
    write_le<uint32_t>(os, static_cast<uint32_t>(pc.size()));
    for (const Vec3& p : pc.xyz) {
      write_le<float>(os, static_cast<float>(p.x));
      write_le<float>(os, static_cast<float>(p.y));
      write_le<float>(os, static_cast<float>(p.z));
    }
    for (const auto& c : pc.rgb)
      for (float v : c) write_le<float>(os, v);
    for (const RawAction& a : f.action) {
      for (double v : a.trans) write_le<double>(os, v);
      for (double v : a.rot) write_le<double>(os, v);
      write_le<uint8_t>(os, static_cast<uint8_t>(a.gripper));
      write_le<uint8_t>(os, static_cast<uint8_t>(a.collision));
    }
    for (uint32_t arm = 0; arm < n_arms; ++arm) {
      for (double v : f.state.ee_pose[arm]) write_le<double>(os, v);
      write_le<double>(os, f.state.gripper_open[arm]);
      for (int k = 0; k < 4; ++k) write_le<double>(os, f.state.joint_vel[4 * arm + k]);
    }
    write_le<int64_t>(os, f.state.timestep);
  }
}

Demonstration read_demo(std::istream& is) {
  Demonstration d;
  d.task_id = read_str(is);
  d.seed = read_le<uint64_t>(is);
  uint32_t n_frames = read_le<uint32_t>(is);
  uint32_t n_arms = read_le<uint32_t>(is);
  std::string language = read_str(is);
  uint32_t n_keys = read_le<uint32_t>(is);
  d.oracle_keyframes.resize(n_keys);
  for (auto& k : d.oracle_keyframes) k = read_le<int64_t>(is);

  d.frames.resize(n_frames);
  for (Frame& f : d.frames) {
    uint32_t n_points = read_le<uint32_t>(is);
    f.obs.cloud.xyz.resize(n_points);
    f.obs.cloud.rgb.resize(n_points);
    for (auto& p : f.obs.cloud.xyz) {
      p.x = read_le<float>(is);
      p.y = read_le<float>(is);
      p.z = read_le<float>(is);
    }
    for (auto& c : f.obs.cloud.rgb)
      for (float& v : c) v = read_le<float>(is);
    f.action.resize(n_arms);
    for (RawAction& a : f.action) {
      for (double& v : a.trans) v = read_le<double>(is);
      for (double& v : a.rot) v = read_le<double>(is);
      a.gripper = read_le<uint8_t>(is);
      a.collision = read_le<uint8_t>(is);
    }
    f.state.n_arms = static_cast<int>(n_arms);
    f.state.ee_pose.resize(n_arms);
    f.state.gripper_open.resize(n_arms);
    f.state.joint_vel.resize(4 * n_arms);
    for (uint32_t arm = 0; arm < n_arms; ++arm) {
      for (double& v : f.state.ee_pose[arm]) v = read_le<double>(is);
      f.state.gripper_open[arm] = read_le<double>(is);
      for (int k = 0; k < 4; ++k) f.state.joint_vel[4 * arm + k] = read_le<double>(is);
    }
    f.state.timestep = read_le<int64_t>(is);
    f.language = language;
  }
  return d;
}

DatasetMeta read_header(std::istream& is) {
  char magic[4];
  read_bytes(is, magic, 4);
  if (!std::equal(magic, magic + 4, kMagic))
    throw std::runtime_error("not a demonstration container (bad magic)");
  uint16_t version = read_le<uint16_t>(is);
  if (version != kVersion)
    throw std::runtime_error("unsupported demonstration container version");
  DatasetMeta meta;
  meta.layout = read_le<uint8_t>(is);
  meta.n_cams = read_le<uint16_t>(is);
  meta.height = read_le<uint16_t>(is);
  meta.width = read_le<uint16_t>(is);
  meta.hz = read_le<uint16_t>(is);
  return meta;
}

}  // namespace

void save_dataset(const std::string& path, const std::vector<Demonstration>& demos,
                  const DatasetMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
  write_bytes(os, kMagic, 4);
  write_le<uint16_t>(os, kVersion);
  write_le<uint8_t>(os, static_cast<uint8_t>(meta.layout));
  write_le<uint16_t>(os, static_cast<uint16_t>(meta.n_cams));
  write_le<uint16_t>(os, static_cast<uint16_t>(meta.height));
  write_le<uint16_t>(os, static_cast<uint16_t>(meta.width));
  write_le<uint16_t>(os, static_cast<uint16_t>(meta.hz));
  write_le<uint32_t>(os, static_cast<uint32_t>(demos.size()));

  std::vector<uint64_t> offsets;
  offsets.reserve(demos.size());
  for (const Demonstration& d : demos) {
    offsets.push_back(static_cast<uint64_t>(os.tellp()));
    write_demo(os, d);
  }
  uint64_t table_off = static_cast<uint64_t>(os.tellp());
  for (uint64_t off : offsets) write_le<uint64_t>(os, off);
  write_le<uint64_t>(os, table_off);
  write_bytes(os, kIndexMagic, 4);
  if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

std::vector<Demonstration> load_dataset(const std::string& path, DatasetMeta* meta_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
  DatasetMeta meta = read_header(is);
  uint32_t n_demos = read_le<uint32_t>(is);
  std::vector<Demonstration> demos;
  demos.reserve(n_demos);
  for (uint32_t i = 0; i < n_demos; ++i) demos.push_back(read_demo(is));
  if (meta_out) *meta_out = meta;
  return demos;
}

DatasetReader::DatasetReader(const std::string& path) : path_(path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("DatasetReader: cannot open " + path);
  meta_ = read_header(is);
  uint32_t n_demos = read_le<uint32_t>(is);
  is.seekg(-12, std::ios::end);
  uint64_t table_off = read_le<uint64_t>(is);
  char magic[4];
  read_bytes(is, magic, 4);
  if (!std::equal(magic, magic + 4, kIndexMagic))
    throw std::runtime_error("DatasetReader: missing footer index");
  is.seekg(static_cast<std::streamoff>(table_off));
  offsets_.resize(n_demos);
  for (auto& off : offsets_) off = read_le<uint64_t>(is);
}

Demonstration DatasetReader::demo(size_t i) const {
  if (i >= offsets_.size()) throw std::out_of_range("DatasetReader: demo index out of range");
  std::ifstream is(path_, std::ios::binary);
  if (!is) throw std::runtime_error("DatasetReader: cannot open " + path_);
  is.seekg(static_cast<std::streamoff>(offsets_[i]));
  return read_demo(is);
}

DatasetMeta dataset_meta_for(const std::string& task, int hz) {
  DatasetMeta meta;
  for (const char* t : kContinuousTasks)
    if (task == t) {
      meta.layout = 1;
      meta.n_cams = 2;
      meta.hz = hz;
      return meta;
    }
  for (const char* t : kDiscreteTasks)
    if (task == t) {
      meta.layout = 0;
      meta.n_cams = 5;
      meta.hz = 10;
      return meta;
    }
  throw std::invalid_argument("unknown task: " + task);
}

std::vector<Demonstration> generate_dataset(const std::string& task, uint64_t seed0, int count,
                                            int hz) {
  DatasetMeta meta = dataset_meta_for(task, hz);
  std::vector<Demonstration> demos;
  demos.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    uint64_t seed = seed0 + static_cast<uint64_t>(i);
    demos.push_back(meta.layout == 1 ? generate_continuous_demo(task, seed, hz)
                                     : generate_discrete_demo(task, seed));
  }
  return demos;
}

}  // namespace gparam
