#pragma once

#include <cstdint>
#include <vector>

namespace sed {

// HxWx3 interleaved image, intensities in [0, 1].
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> data;  // h * w * 3

  Image() = default;
  Image(int h_, int w_, double fill = 0.0) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_ * 3, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * w + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * w + x) * 3 + c]; }

  double mean() const {
    double s = 0.0;
    for (double x : data) s += x;
    return data.empty() ? 0.0 : s / static_cast<double>(data.size());
  }

  void clamp01() {
    for (double& x : data) x = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
  }
};

// Box-filter (area average) resampling; exact block mean when the ratio is an
// integer shrink. Handles both shrink and enlarge.
Image area_resample(const Image& src, int out_h, int out_w);

}  // namespace sed
