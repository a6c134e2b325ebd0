#pragma once

#include <string>
#include <vector>

#include "cargoscan/types.hpp"

namespace cargoscan {

// 16-bit grayscale scanner image. air_value is the reference intensity of the
// unobstructed beam; px_size_mm is informational (horizontal resolution).
struct RawScan {
  PlaneU16 pixels;  // rows = height, cols = width
  std::uint16_t air_value = 0;
  double px_size_mm = 6.0;

  int width() const { return static_cast<int>(pixels.cols()); }
  int height() const { return static_cast<int>(pixels.rows()); }
};

// Per-pixel beam transmission, clamped to [kTransmissionFloor, 1].
struct TransmissionImage {
  static constexpr double kTransmissionFloor = 1e-4;

  PlaneD values;

  int width() const { return static_cast<int>(values.cols()); }
  int height() const { return static_cast<int>(values.rows()); }
};

// Attenuation image, -ln(transmission); values in [0, -ln(kTransmissionFloor)].
struct LogImage {
  PlaneD values;

  int width() const { return static_cast<int>(values.cols()); }
  int height() const { return static_cast<int>(values.rows()); }
};

inline double clamp_transmission(double v) {
  if (v < TransmissionImage::kTransmissionFloor) return TransmissionImage::kTransmissionFloor;
  if (v > 1.0) return 1.0;
  return v;
}

// --- 16-bit binary PGM (P5, maxval 65535, big-endian samples) ------------
//
// A header comment of the form `# air=<int>` carries the air reference;
// without it air_value defaults to the maximum pixel value.
RawScan read_pgm16(const std::string& path);
void write_pgm16(const RawScan& scan, const std::string& path);

// 8-bit PGM, used for masks and heatmap renders.
PlaneU8 read_pgm8(const std::string& path);
void write_pgm8(const PlaneU8& img, const std::string& path);

// --- XTF float plane container --------------------------------------------
//
// 16-byte ASCII header "XTF1 <w> <h>\n" (space padded), then w*h little-endian
// float32 samples, row-major. Used for transmission/attenuation planes and
// threat patches.
void write_xtf(const PlaneD& plane, const std::string& path);
PlaneD read_xtf(const std::string& path);

// --- Preprocessing chain ----------------------------------------------------

struct DeadColumnResult {
  RawScan scan;
  std::vector<int> removed;  // original column indices, ascending
};

// Deletes columns whose fraction of pixels below 0.02*air_value exceeds 0.95.
// Surviving pixel values are untouched. Throws if every column is dead.
DeadColumnResult remove_dead_columns(const RawScan& scan);

// Air normalization. The top `kAirBandRows` rows are assumed unobstructed;
// the per-column air estimate is the column median over that band, smoothed
// along x with a centered moving average of width 9 (window shrinks
// symmetrically at the borders). Output is pixel/air clamped to the
// transmission range.
inline constexpr int kAirBandRows = 16;
TransmissionImage normalize_air(const RawScan& scan);

// Salt-and-pepper removal: a pixel is replaced by its 3x3 median when it
// deviates from that median by more than half the median. All medians are
// computed on the input plane (one Jacobi sweep); borders reflect.
TransmissionImage despeckle(const TransmissionImage& img);

LogImage log_transform(const TransmissionImage& img);

struct PreprocessResult {
  TransmissionImage image;
  std::vector<int> removed_columns;
};

// despeckle . normalize_air . remove_dead_columns
PreprocessResult preprocess(const RawScan& scan);

// Quantizes a transmission image back to raw counts (pixel = round(t * air)).
RawScan raw_from_transmission(const TransmissionImage& img, std::uint16_t air_value);

}  // namespace cargoscan
