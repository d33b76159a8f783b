#include "sed/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sed {

Image area_resample(const Image& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("area_resample: non-positive output dims");
  if (out_h == src.h && out_w == src.w) return src;

  Image dst(out_h, out_w);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;

  // Integer shrink: plain block mean, summed in fixed order.
  if (src.h % out_h == 0 && src.w % out_w == 0) {
    const int by = src.h / out_h, bx = src.w / out_w;
    const double inv = 1.0 / (static_cast<double>(by) * bx);
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x)
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int j = 0; j < by; ++j)
            for (int i = 0; i < bx; ++i) acc += src.at(y * by + j, x * bx + i, c);
          dst.at(y, x, c) = acc * inv;
        }
    return dst;
  }

  for (int y = 0; y < out_h; ++y) {
    const double y0 = y * sy, y1 = (y + 1) * sy;
    const int iy0 = static_cast<int>(std::floor(y0));
    const int iy1 = std::min(src.h, static_cast<int>(std::ceil(y1)));
    for (int x = 0; x < out_w; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx;
      const int ix0 = static_cast<int>(std::floor(x0));
      const int ix1 = std::min(src.w, static_cast<int>(std::ceil(x1)));
      double acc[3] = {0, 0, 0};
      double wsum = 0.0;
      for (int j = iy0; j < iy1; ++j) {
        const double wy = std::min<double>(j + 1, y1) - std::max<double>(j, y0);
        for (int i = ix0; i < ix1; ++i) {
          const double wx = std::min<double>(i + 1, x1) - std::max<double>(i, x0);
          const double w = wy * wx;
          wsum += w;
          for (int c = 0; c < 3; ++c) acc[c] += w * src.at(j, i, c);
        }
      }
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = acc[c] / wsum;
    }
  }
  return dst;
}

}  // namespace sed
