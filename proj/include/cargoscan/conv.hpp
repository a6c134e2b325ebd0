#pragma once

#include <cmath>
#include <vector>

#include "cargoscan/types.hpp"

namespace cargoscan {

// Sampled Gaussian-derivative kernels, calibrated so that polynomial inputs
// produce exact derivatives under correlation: order 0 sums to 1, order 1 has
// first moment 1, order 2 has zero sum and second moment 2.
inline std::vector<double> gaussian_kernel(double sigma, int order) {
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-i * i * inv2s2);

  if (order == 0) {
    double sum = 0.0;
    for (double v : k) sum += v;
    for (double& v : k) v /= sum;
  } else if (order == 1) {
    double m1 = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      k[i + radius] *= i;
      m1 += i * k[i + radius];
    }
    for (double& v : k) v /= m1;
  } else {  // order == 2
    for (int i = -radius; i <= radius; ++i) k[i + radius] *= (i * i - sigma * sigma);
    double sum = 0.0;
    for (double v : k) sum += v;
    const double mean = sum / k.size();
    double m2 = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      k[i + radius] -= mean;
      m2 += i * i * k[i + radius];
    }
    for (double& v : k) v *= 2.0 / m2;
  }
  return k;
}

namespace detail {
inline int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}
}  // namespace detail

// Correlation along x (within rows); reflected boundary.
inline PlaneD correlate_rows(const PlaneD& img, const std::vector<double>& kernel) {
  const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  const int r = static_cast<int>(kernel.size() / 2);
  PlaneD out(h, w);
  for (int y = 0; y < h; ++y) {
    const double* row = img.data() + static_cast<std::ptrdiff_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      if (x >= r && x + r < w) {
        const double* p = row + x - r;
        for (size_t k = 0; k < kernel.size(); ++k) acc += kernel[k] * p[k];
      } else {
        for (size_t k = 0; k < kernel.size(); ++k)
          acc += kernel[k] * row[detail::reflect(x - r + static_cast<int>(k), w)];
      }
      out(y, x) = acc;
    }
  }
  return out;
}

// Correlation along y (within columns); reflected boundary.
inline PlaneD correlate_cols(const PlaneD& img, const std::vector<double>& kernel) {
  const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  const int r = static_cast<int>(kernel.size() / 2);
  PlaneD out(h, w);
  for (int y = 0; y < h; ++y) {
    double* dst = out.data() + static_cast<std::ptrdiff_t>(y) * w;
    for (int x = 0; x < w; ++x) dst[x] = 0.0;
    for (size_t k = 0; k < kernel.size(); ++k) {
      const int sy = (y >= r && y + r < h) ? y - r + static_cast<int>(k)
                                           : detail::reflect(y - r + static_cast<int>(k), h);
      const double* src = img.data() + static_cast<std::ptrdiff_t>(sy) * w;
      const double kv = kernel[k];
      for (int x = 0; x < w; ++x) dst[x] += kv * src[x];
    }
  }
  return out;
}

inline PlaneD gaussian_smooth(const PlaneD& img, double sigma) {
  const auto g = gaussian_kernel(sigma, 0);
  return correlate_cols(correlate_rows(img, g), g);
}

}  // namespace cargoscan
