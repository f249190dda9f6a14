#include "gparam/render.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace gparam {

namespace {

constexpr double kFarDepth = 2.0;
constexpr Vec3 kRigCenter{0, 0, 0.25};
constexpr double kRigDistance = 0.6;

OrthoCam aimed(std::string name, Vec3 right, Vec3 down, Vec3 fwd, int height, int width) {
  OrthoCam cam;
  cam.name = std::move(name);
  cam.right = right;
  cam.down = down;
  cam.fwd = fwd;
  cam.pos = kRigCenter - fwd * kRigDistance;
  cam.scale = 0.5 / width;
  cam.height = height;
  cam.width = width;
  return cam;
}

}  // namespace

std::vector<OrthoCam> standard_rig(int n_cams, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("standard_rig: bad image size");
  OrthoCam top = aimed("top", {1, 0, 0}, {0, -1, 0}, {0, 0, -1}, height, width);
  OrthoCam front = aimed("front", {1, 0, 0}, {0, 0, -1}, {0, 1, 0}, height, width);
  if (n_cams == 5) {
    OrthoCam back = aimed("back", {-1, 0, 0}, {0, 0, -1}, {0, -1, 0}, height, width);
    OrthoCam left = aimed("left", {0, -1, 0}, {0, 0, -1}, {1, 0, 0}, height, width);
    OrthoCam right = aimed("right", {0, 1, 0}, {0, 0, -1}, {-1, 0, 0}, height, width);
    return {top, front, back, left, right};
  }
  if (n_cams == 2) return {front, top};
  throw std::invalid_argument("standard_rig: n_cams must be 2 or 5");
}

std::array<double, 16> cam_transform(const OrthoCam& cam) {
  auto row = [&](Vec3 axis) {
    return std::array<double, 4>{axis.x, axis.y, axis.z, -dot(axis, cam.pos)};
  };
  std::array<double, 16> m{};
  auto r0 = row(cam.right), r1 = row(cam.down), r2 = row(cam.fwd);
  for (int i = 0; i < 4; ++i) {
    m[static_cast<size_t>(i)] = r0[static_cast<size_t>(i)];
    m[static_cast<size_t>(4 + i)] = r1[static_cast<size_t>(i)];
    m[static_cast<size_t>(8 + i)] = r2[static_cast<size_t>(i)];
  }
  m[15] = 1.0;
  return m;
}

std::array<double, 3> project(const OrthoCam& cam, Vec3 p) {
  Vec3 rel = p - cam.pos;
  return {dot(cam.right, rel) / cam.scale + cam.width / 2.0,
          dot(cam.down, rel) / cam.scale + cam.height / 2.0, dot(cam.fwd, rel)};
}

Tensor render_view(const OrthoCam& cam, const PointCloud& cloud) {
  const int H = cam.height, W = cam.width;
  Tensor img = Tensor::zeros({7, H, W}, Dtype::f32);
  auto v = img.vals<float>();
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int64_t i = 0; i < plane; ++i) v[static_cast<size_t>(6 * plane + i)] = kFarDepth;

  for (size_t i = 0; i < cloud.size(); ++i) {
    Vec3 p = cloud.xyz[i];
    auto uvd = project(cam, p);
    double depth = uvd[2];
    if (depth <= 0) continue;
    int u = static_cast<int>(std::floor(uvd[0]));
    int vv = static_cast<int>(std::floor(uvd[1]));
    if (u < 0 || u >= W || vv < 0 || vv >= H) continue;
    int64_t px = static_cast<int64_t>(vv) * W + u;
    float& z = v[static_cast<size_t>(6 * plane + px)];
    if (static_cast<float>(depth) < z) {
      z = static_cast<float>(depth);
      v[static_cast<size_t>(0 * plane + px)] = cloud.rgb[i][0];
      v[static_cast<size_t>(1 * plane + px)] = cloud.rgb[i][1];
      v[static_cast<size_t>(2 * plane + px)] = cloud.rgb[i][2];
      v[static_cast<size_t>(3 * plane + px)] = static_cast<float>(p.x);
      v[static_cast<size_t>(4 * plane + px)] = static_cast<float>(p.y);
      v[static_cast<size_t>(5 * plane + px)] = static_cast<float>(p.z);
    }
  }
  return img;
}

std::vector<OrthoCam> zoom_rig(const std::vector<OrthoCam>& base, Vec3 anchor, double zoom) {
  if (zoom <= 0) throw std::invalid_argument("zoom_rig: zoom must be positive");
  std::vector<OrthoCam> out = base;
  for (OrthoCam& cam : out) {
    cam.scale /= zoom;
    cam.pos = anchor - cam.fwd * kRigDistance;
  }
  return out;
}

Tensor gaussian_target(const OrthoCam& cam, Vec3 point, double sigma) {
  if (sigma <= 0) throw std::invalid_argument("gaussian_target: sigma must be positive");
  const int H = cam.height, W = cam.width;
  auto uvd = project(cam, point);
  Tensor t = Tensor::zeros({H, W}, Dtype::f32);
  auto v = t.vals<float>();
  double total = 0;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double du = c + 0.5 - uvd[0];
      double dv = r + 0.5 - uvd[1];
      double e = std::exp(-(du * du + dv * dv) * inv);
      v[static_cast<size_t>(r * W + c)] = static_cast<float>(e);
      total += e;
    }
  if (total < 1e-12) {
    float u = 1.0f / static_cast<float>(H * W);
    for (auto& x : v) x = u;
    return t;
  }
  for (auto& x : v) x = static_cast<float>(x / total);
  return t;
}

double bilinear_sample(const Tensor& hw, double u, double v) {
  if (hw.ndim() != 2) throw std::invalid_argument("bilinear_sample: expected a [H, W] tensor");
  const int64_t H = hw.dim(0), W = hw.dim(1);
  auto clampi = [](double x, int64_t n) {
    return std::min<double>(std::max(x, 0.0), static_cast<double>(n - 1));
  };
  double x = clampi(u - 0.5, W);
  double y = clampi(v - 0.5, H);
  int64_t x0 = static_cast<int64_t>(std::floor(x)), y0 = static_cast<int64_t>(std::floor(y));
  int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  auto at = [&](int64_t r, int64_t c) { return hw.at(r * W + c); };
  return at(y0, x0) * (1 - fx) * (1 - fy) + at(y0, x1) * fx * (1 - fy) +
         at(y1, x0) * (1 - fx) * fy + at(y1, x1) * fx * fy;
}

void write_pgm(const Tensor& image, int channel, const std::string& path) {
  if (image.ndim() != 3) throw std::invalid_argument("write_pgm: expected [C, H, W]");
  const int64_t H = image.dim(1), W = image.dim(2);
  const int64_t off = channel * H * W;
  double lo = 1e30, hi = -1e30;
  for (int64_t i = 0; i < H * W; ++i) {
    lo = std::min(lo, image.at(off + i));
    hi = std::max(hi, image.at(off + i));
  }
  double span = hi > lo ? hi - lo : 1.0;
  std::ofstream f(path, std::ios::binary);
  f << "P5\n" << W << " " << H << "\n255\n";
  for (int64_t i = 0; i < H * W; ++i) {
    double n = (image.at(off + i) - lo) / span;
    f.put(static_cast<char>(static_cast<int>(n * 255.0 + 0.5)));
  }
}

}  // namespace gparam
