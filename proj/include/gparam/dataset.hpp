#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gparam/world.hpp"

namespace gparam {

// Demonstration container ("GPRD"): little-endian, bit-exact round trip.
// Header: magic, u16 version, u8 layout (0 = single-arm discrete,
// 1 = bimanual continuous), u16 n_cams/height/width/hz, u32 n_demos.
// Body: one demo record per episode (frames carry clouds as f32, actions and
// robot state as f64). Footer: per-demo byte offsets + table offset, so
// readers can seek without parsing everything.
struct DatasetMeta {
  int layout = 0;
  int n_cams = 5;
  int height = 64;
  int width = 64;
  int hz = 10;  // nominal control rate of the recorded frames
};

void save_dataset(const std::string& path, const std::vector<Demonstration>& demos,
                  const DatasetMeta& meta);
std::vector<Demonstration> load_dataset(const std::string& path, DatasetMeta* meta = nullptr);

// Seek-based reader over the footer index; loads one demo at a time.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path);
  const DatasetMeta& meta() const { return meta_; }
  size_t size() const { return offsets_.size(); }
  Demonstration demo(size_t i) const;

 private:
  std::string path_;
  DatasetMeta meta_;
  std::vector<uint64_t> offsets_;
};

// Scripted-expert episodes for `task` under seeds seed0 .. seed0+count-1.
// Discrete task names produce layout 0; bimanual names produce layout 1
// (hz applies only to the latter).
std::vector<Demonstration> generate_dataset(const std::string& task, uint64_t seed0, int count,
                                            int hz = 50);
DatasetMeta dataset_meta_for(const std::string& task, int hz = 50);

}  // namespace gparam
