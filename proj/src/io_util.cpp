#include "gparam/io_util.hpp"

#include <algorithm>
#include <cmath>

namespace gparam {

void write_pgm(const std::string& path, const std::vector<double>& img, int h, int w) {
  if (static_cast<size_t>(h) * static_cast<size_t>(w) != img.size())
    throw std::invalid_argument("write_pgm: size mismatch");
  double mx = 0.0;
  for (double v : img) mx = std::max(mx, v);
  if (mx <= 0.0) mx = 1.0;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (double v : img) {
    int q = static_cast<int>(std::lround(255.0 * std::clamp(v / mx, 0.0, 1.0)));
    os.put(static_cast<char>(q));
  }
  if (!os) throw std::runtime_error("write_pgm: write failed for " + path);
}

}  // namespace gparam
