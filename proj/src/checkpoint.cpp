#include "gparam/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "gparam/io_util.hpp"

namespace gparam {

namespace {
constexpr char kMagic[4] = {'G', 'P', 'R', 'C'};
constexpr uint16_t kVersion = 1;
}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}

const std::string* Checkpoint::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return &v;
  return nullptr;
}

namespace {

// Raw little-endian value bytes of a tensor, independent of host endianness.
std::vector<unsigned char> tensor_bytes(const Tensor& t) {
  size_t esz = dtype_size(t.dtype());
  std::vector<unsigned char> out(static_cast<size_t>(t.numel()) * esz);
  if (t.dtype() == Dtype::f32) {
    auto v = t.vals<float>();
    std::memcpy(out.data(), v.data(), out.size());
  } else {
    auto v = t.vals<double>();
    std::memcpy(out.data(), v.data(), out.size());
  }
  if (!host_little_endian()) {
    for (size_t i = 0; i < out.size(); i += esz)
      for (size_t j = 0; j < esz / 2; ++j) std::swap(out[i + j], out[i + esz - 1 - j]);
  }
  return out;
}

void bytes_into_tensor(const std::vector<unsigned char>& bytes, Tensor& t) {
  size_t esz = dtype_size(t.dtype());
  std::vector<unsigned char> buf = bytes;
  if (!host_little_endian()) {
    for (size_t i = 0; i < buf.size(); i += esz)
      for (size_t j = 0; j < esz / 2; ++j) std::swap(buf[i + j], buf[i + esz - 1 - j]);
  }
  if (t.dtype() == Dtype::f32) {
    auto v = t.vals<float>();
    std::memcpy(v.data(), buf.data(), buf.size());
  } else {
    auto v = t.vals<double>();
    std::memcpy(v.data(), buf.data(), buf.size());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kMagic, 4);
  write_le<uint16_t>(os, kVersion);
  write_le<uint32_t>(os, static_cast<uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    write_str(os, k);
    write_str(os, v);
  }
  write_le<uint32_t>(os, static_cast<uint32_t>(ckpt.params.size()));
  uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.params) {
    write_str(os, name);
    write_le<uint8_t>(os, static_cast<uint8_t>(t.dtype()));
    write_le<uint8_t>(os, static_cast<uint8_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_le<int64_t>(os, t.dim(i));
    uint64_t nbytes = static_cast<uint64_t>(t.numel()) * dtype_size(t.dtype());
    write_le<uint64_t>(os, offset);
    write_le<uint64_t>(os, nbytes);
    offset += nbytes;
  }
  write_le<uint64_t>(os, offset);  // payload size
  for (const auto& [name, t] : ckpt.params) {
    auto bytes = tensor_bytes(t);
    write_bytes(os, bytes.data(), bytes.size());
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a GPRC file");
  uint16_t version = read_le<uint16_t>(is);
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  uint32_t nmeta = read_le<uint32_t>(is);
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = read_str(is);
    std::string v = read_str(is);
    ckpt.metadata.emplace_back(std::move(k), std::move(v));
  }
  uint32_t nparams = read_le<uint32_t>(is);
  struct Entry {
    std::string name;
    Dtype dt;
    Shape shape;
    uint64_t offset, nbytes;
  };
  std::vector<Entry> entries;
  for (uint32_t i = 0; i < nparams; ++i) {
    Entry e;
    e.name = read_str(is);
    uint8_t dt = read_le<uint8_t>(is);
    if (dt > 1) throw std::runtime_error("load_checkpoint: bad dtype tag");
    e.dt = static_cast<Dtype>(dt);
    uint8_t nd = read_le<uint8_t>(is);
    for (uint8_t d = 0; d < nd; ++d) e.shape.push_back(read_le<int64_t>(is));
    e.offset = read_le<uint64_t>(is);
    e.nbytes = read_le<uint64_t>(is);
    entries.push_back(std::move(e));
  }
  uint64_t payload = read_le<uint64_t>(is);
  std::vector<unsigned char> blob(payload);
  if (payload) read_bytes(is, blob.data(), payload);
  for (auto& e : entries) {
    Tensor t = Tensor::zeros(e.shape, e.dt);
    uint64_t expect = static_cast<uint64_t>(t.numel()) * dtype_size(e.dt);
    if (e.nbytes != expect || e.offset + e.nbytes > payload)
      throw std::runtime_error("load_checkpoint: corrupt entry " + e.name);
    std::vector<unsigned char> bytes(blob.begin() + static_cast<ptrdiff_t>(e.offset),
                                     blob.begin() + static_cast<ptrdiff_t>(e.offset + e.nbytes));
    bytes_into_tensor(bytes, t);
    ckpt.params.emplace_back(e.name, std::move(t));
  }
  return ckpt;
}

uint64_t params_fingerprint(const ParamList& params) {
  uint64_t h = kFnvOffset;
  for (const auto& [name, t] : params) {
    h = fnv1a64(name, h);
    auto bytes = tensor_bytes(t);
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

void restore_params(const Checkpoint& ckpt, const ParamList& live) {
  for (const auto& [name, t] : live) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw std::runtime_error("restore_params: missing param " + name);
    if (src->shape() != t.shape() || src->dtype() != t.dtype())
      throw std::runtime_error("restore_params: shape/dtype mismatch for " + name + ": file " +
                               shape_str(src->shape()) + " vs live " + shape_str(t.shape()));
    Tensor dst = t;
    dst.copy_values_from(*src);
  }
}

}  // namespace gparam
