#pragma once

#include <array>
#include <string>
#include <vector>

#include "cargoscan/types.hpp"

namespace cargoscan::obif {

// Gaussian-derivative responses up to second order at one scale.
struct Jet {
  double sigma = 0.0;
  PlaneD l, lx, ly, lxx, lxy, lyy;

  int width() const { return static_cast<int>(l.cols()); }
  int height() const { return static_cast<int>(l.rows()); }
};

struct ObifParams {
  std::array<double, 4> sigmas{0.7, 1.4, 2.8, 5.6};
  std::array<double, 2> eps_flats{0.011, 0.1};
};

inline constexpr int kBifClasses = 7;    // flat, slope, blobs, lines, saddle
inline constexpr int kObifLabels = 23;   // 1 + 8 + 2 + 4 + 4 + 4
inline constexpr int kFeatureDim = 184;  // 8 (sigma, eps) pairs x 23 bins

// Label layout of the oriented classes:
//   0            flat
//   1..8         slope, gradient direction in 8 bins of 45 deg (bin 0 at +x)
//   9, 10        dark blob, light blob
//   11..14       dark line, axis in 4 bins of 45 deg (period 180)
//   15..18       light line, axis in 4 bins of 45 deg
//   19..22       saddle, principal direction in 4 bins of 22.5 deg (period 90)
enum class BifClass : std::uint8_t {
  kFlat = 0,
  kSlope,
  kDarkBlob,
  kLightBlob,
  kDarkLine,
  kLightLine,
  kSaddle,
};

// Separable correlation with calibrated Gaussian-derivative kernels of orders
// (0,0),(1,0),(0,1),(2,0),(1,1),(0,2); reflect boundary, radius ceil(4*sigma).
Jet gaussian_jet(const PlaneD& img, double sigma);

// The seven scale-normalized scores at one pixel, in class order:
//   [eps*L, 2*grad, lambda, -lambda, (spread+lambda)/sqrt2,
//    (spread-lambda)/sqrt2, spread]
// with lambda = sigma^2 (Lxx+Lyy), spread = sigma^2 sqrt((Lxx-Lyy)^2+4Lxy^2)
// and grad = sigma sqrt(Lx^2+Ly^2).
std::array<double, kBifClasses> bif_scores(const Jet& jet, double eps_flat, int x, int y);

// Per-pixel argmax of the seven scores; ties resolved to the lowest index.
PlaneU8 classify_bifs(const Jet& jet, double eps_flat);

// Oriented labels (0..22) per the layout above.
PlaneU8 classify_obifs(const Jet& jet, double eps_flat);

// All eight label planes in sigma-major order:
//   (s0,e0), (s0,e1), (s1,e0), ... jets are shared between the two eps values.
struct ObifStack {
  ObifParams params;
  std::vector<PlaneU8> planes;  // size 8

  int width() const { return static_cast<int>(planes.front().cols()); }
  int height() const { return static_cast<int>(planes.front().rows()); }
};

ObifStack compute_stack(const PlaneD& img, const ObifParams& params = ObifParams());

// 184-dimensional window descriptor: per label plane a 23-bin count histogram
// over the window, L1-normalized per plane, concatenated in plane order.
Vec<float> window_feature(const ObifStack& stack, int x, int y, int side);

// Debug dump: raw label indices as an 8-bit PGM (palette index = label).
void dump_label_plane(const PlaneU8& labels, const std::string& path);

}  // namespace cargoscan::obif
