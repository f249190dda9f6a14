#pragma once

#include <array>
#include <string>
#include <vector>

#include "gparam/tensor.hpp"
#include "gparam/world.hpp"

namespace gparam {

// Orthographic camera. `right`, `down`, `fwd` are orthonormal rows of the
// world->camera rotation (right x down = fwd); `scale` is meters per pixel.
// A world point p maps to continuous image coordinates
//   u = dot(right, p - pos) / scale + W/2
//   v = dot(down,  p - pos) / scale + H/2
// and lands in pixel (floor(v), floor(u)); depth is dot(fwd, p - pos).
struct OrthoCam {
  std::string name;
  Vec3 right, down, fwd;
  Vec3 pos;
  double scale = 0;
  int height = 64, width = 64;
};

// Fixed multi-view rigs around the tabletop, all aimed at (0, 0, 0.25) from
// 0.6 m away with a 0.5 m field of view across the image width.
//   5 cameras: top, front, back, left, right  (single-arm scenes)
//   2 cameras: front, top                     (bimanual scenes)
std::vector<OrthoCam> standard_rig(int n_cams, int height, int width);

// Row-major 4x4 world->camera rigid transform (rotation rows + translation).
std::array<double, 16> cam_transform(const OrthoCam& cam);

// {u, v, depth} in the convention above.
std::array<double, 3> project(const OrthoCam& cam, Vec3 p);

// Z-buffered splat of the cloud into a [7, H, W] f32 image. Channels:
// 0-2 rgb, 3-5 world xyz of the visible point, 6 depth along fwd.
// Background pixels keep rgb = 0, xyz = 0, depth = 2 (far sentinel).
Tensor render_view(const OrthoCam& cam, const PointCloud& cloud);

// Same rig rotated views re-aimed at `anchor` with `zoom`-times finer scale.
std::vector<OrthoCam> zoom_rig(const std::vector<OrthoCam>& base, Vec3 anchor, double zoom);

// [H, W] f32 target that integrates to 1: an isotropic Gaussian (sigma in
// pixels) around the projection of `point`, evaluated at pixel centers. If
// the point projects entirely off-view the target degrades to uniform.
Tensor gaussian_target(const OrthoCam& cam, Vec3 point, double sigma);

// Bilinear read of a [H, W] tensor at continuous coordinates (values live at
// pixel centers, border-clamped). Host-side; not differentiable.
double bilinear_sample(const Tensor& hw, double u, double v);

// Debug dump of one channel as an 8-bit PGM (values min-max normalized).
void write_pgm(const Tensor& image, int channel, const std::string& path);

}  // namespace gparam
