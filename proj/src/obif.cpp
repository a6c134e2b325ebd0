#include "cargoscan/obif.hpp"

#include <cmath>

#include "cargoscan/conv.hpp"
#include "cargoscan/image.hpp"

namespace cargoscan::obif {

namespace {

constexpr double kPi = 3.141592653589793;
constexpr double kInvSqrt2 = 0.7071067811865476;

inline int quantize_angle(double angle, double period, int bins) {
  const double step = period / bins;
  double a = std::fmod(angle, period);
  if (a < 0) a += period;
  return static_cast<int>(std::floor(a / step + 0.5)) % bins;
}

struct PixelScores {
  double lambda, spread, grad;
  int best;
};

inline PixelScores score_pixel(const Jet& jet, double eps_flat, int x, int y) {
  const double s2 = jet.sigma * jet.sigma;
  const double lxx = jet.lxx(y, x), lyy = jet.lyy(y, x), lxy = jet.lxy(y, x);
  const double lambda = s2 * (lxx + lyy);
  const double dxx = lxx - lyy;
  const double spread = s2 * std::sqrt(dxx * dxx + 4.0 * lxy * lxy);
  const double gx = jet.lx(y, x), gy = jet.ly(y, x);
  const double grad = jet.sigma * std::sqrt(gx * gx + gy * gy);

  const double scores[kBifClasses] = {
      eps_flat * jet.l(y, x), 2.0 * grad,           lambda, -lambda,
      (spread + lambda) * kInvSqrt2, (spread - lambda) * kInvSqrt2, spread};
  int best = 0;
  for (int k = 1; k < kBifClasses; ++k)
    if (scores[k] > scores[best]) best = k;
  return {lambda, spread, grad, best};
}

}  // namespace

Jet gaussian_jet(const PlaneD& img, double sigma) {
  if (sigma <= 0.0) throw_config("gaussian_jet: sigma must be positive");
  const auto g0 = gaussian_kernel(sigma, 0);
  const auto g1 = gaussian_kernel(sigma, 1);
  const auto g2 = gaussian_kernel(sigma, 2);

  Jet jet;
  jet.sigma = sigma;
  // column passes are shared between the row passes that need them
  const PlaneD c0 = correlate_cols(img, g0);
  const PlaneD c1 = correlate_cols(img, g1);
  const PlaneD c2 = correlate_cols(img, g2);
  jet.l = correlate_rows(c0, g0);
  jet.lx = correlate_rows(c0, g1);
  jet.lxx = correlate_rows(c0, g2);
  jet.ly = correlate_rows(c1, g0);
  jet.lxy = correlate_rows(c1, g1);
  jet.lyy = correlate_rows(c2, g0);
  return jet;
}

std::array<double, kBifClasses> bif_scores(const Jet& jet, double eps_flat, int x, int y) {
  const double s2 = jet.sigma * jet.sigma;
  const double lxx = jet.lxx(y, x), lyy = jet.lyy(y, x), lxy = jet.lxy(y, x);
  const double lambda = s2 * (lxx + lyy);
  const double dxx = lxx - lyy;
  const double spread = s2 * std::sqrt(dxx * dxx + 4.0 * lxy * lxy);
  const double gx = jet.lx(y, x), gy = jet.ly(y, x);
  const double grad = jet.sigma * std::sqrt(gx * gx + gy * gy);
  return {eps_flat * jet.l(y, x), 2.0 * grad,           lambda, -lambda,
          (spread + lambda) * kInvSqrt2, (spread - lambda) * kInvSqrt2, spread};
}

PlaneU8 classify_bifs(const Jet& jet, double eps_flat) {
  const int w = jet.width(), h = jet.height();
  PlaneU8 out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(y, x) = static_cast<std::uint8_t>(score_pixel(jet, eps_flat, x, y).best);
  return out;
}

PlaneU8 classify_obifs(const Jet& jet, double eps_flat) {
  const int w = jet.width(), h = jet.height();
  PlaneU8 out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const PixelScores px = score_pixel(jet, eps_flat, x, y);
      int label = 0;
      switch (static_cast<BifClass>(px.best)) {
        case BifClass::kFlat:
          label = 0;
          break;
        case BifClass::kSlope: {
          const double theta = std::atan2(jet.ly(y, x), jet.lx(y, x));
          label = 1 + quantize_angle(theta, 2.0 * kPi, 8);
          break;
        }
        case BifClass::kDarkBlob:
          label = 9;
          break;
        case BifClass::kLightBlob:
          label = 10;
          break;
        case BifClass::kDarkLine:
        case BifClass::kLightLine: {
          // Direction of the eigenvector of the larger Hessian eigenvalue;
          // the across-ridge direction is the one whose eigenvalue dominates
          // in magnitude, and the line axis is perpendicular to it.
          const double psi =
              0.5 * std::atan2(2.0 * jet.lxy(y, x), jet.lxx(y, x) - jet.lyy(y, x));
          const double across = px.lambda >= 0.0 ? psi : psi + kPi / 2.0;
          const double axis = across + kPi / 2.0;
          const int bin = quantize_angle(axis, kPi, 4);
          label = (px.best == static_cast<int>(BifClass::kDarkLine) ? 11 : 15) + bin;
          break;
        }
        case BifClass::kSaddle: {
          const double psi =
              0.5 * std::atan2(2.0 * jet.lxy(y, x), jet.lxx(y, x) - jet.lyy(y, x));
          label = 19 + quantize_angle(psi, kPi / 2.0, 4);
          break;
        }
      }
      out(y, x) = static_cast<std::uint8_t>(label);
    }
  }
  return out;
}

ObifStack compute_stack(const PlaneD& img, const ObifParams& params) {
  ObifStack stack;
  stack.params = params;
  stack.planes.reserve(params.sigmas.size() * params.eps_flats.size());
  for (double sigma : params.sigmas) {
    const Jet jet = gaussian_jet(img, sigma);
    for (double eps : params.eps_flats) stack.planes.push_back(classify_obifs(jet, eps));
  }
  return stack;
}

Vec<float> window_feature(const ObifStack& stack, int x, int y, int side) {
  if (stack.planes.empty()) throw_domain("window_feature: empty stack");
  const int w = stack.width(), h = stack.height();
  if (x < 0 || y < 0 || side < 1 || x + side > w || y + side > h)
    throw_domain("window_feature: window outside the image");

  Vec<float> feature(static_cast<int>(stack.planes.size()) * kObifLabels);
  feature.setZero();
  const float norm = 1.0f / (static_cast<float>(side) * side);
  for (size_t p = 0; p < stack.planes.size(); ++p) {
    int counts[kObifLabels] = {0};
    const PlaneU8& plane = stack.planes[p];
    for (int yy = y; yy < y + side; ++yy)
      for (int xx = x; xx < x + side; ++xx) ++counts[plane(yy, xx)];
    for (int b = 0; b < kObifLabels; ++b)
      feature[static_cast<int>(p) * kObifLabels + b] = counts[b] * norm;
  }
  return feature;
}

void dump_label_plane(const PlaneU8& labels, const std::string& path) {
  write_pgm8(labels, path);
}

}  // namespace cargoscan::obif
