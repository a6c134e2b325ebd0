#pragma once

#include <limits>
#include <string>
#include <vector>

#include "cargoscan/image.hpp"
#include "cargoscan/types.hpp"

namespace cargoscan::detect {

struct WindowPos {
  int x = 0;
  int y = 0;
};

// Dense window layout: positions at stride multiples plus an edge-flush
// row/column whenever (dim - side) is not a stride multiple, so every pixel
// is covered.
struct WindowGrid {
  int image_width = 0, image_height = 0;
  int side = 0, stride = 0;
  std::vector<WindowPos> positions;  // row-major (y outer, x inner)
};

WindowGrid sample_windows(int width, int height, int side, int stride);

// Preprocessed channel source handed to classifiers.
struct PreparedImage {
  TransmissionImage trans;
  LogImage log;

  int width() const { return trans.width(); }
  int height() const { return trans.height(); }
};

PreparedImage prepare(TransmissionImage image);

class WindowClassifier {
 public:
  virtual ~WindowClassifier() = default;
  virtual int window_side() const = 0;
  // One score in [0,1] per grid position, in grid order.
  virtual std::vector<double> score(const PreparedImage& image, const WindowGrid& grid) const = 0;
};

struct ScoredImage {
  WindowGrid grid;
  std::vector<double> window_scores;
  double image_score = 0.0;  // max over windows
  double decision_threshold = std::numeric_limits<double>::quiet_NaN();

  bool decision() const { return image_score >= decision_threshold; }
};

ScoredImage score_image(const PreparedImage& image, const WindowGrid& grid,
                        const WindowClassifier& classifier);

// Per-pixel mean of covering window scores, normalized by t90. A pixel under
// a single window carries exactly score/t90.
struct Heatmap {
  PlaneD values;
};

Heatmap render_heatmap(const ScoredImage& scored, double t90);

// 8-bit render: clamp(value, 0, 2)/2 -> 0..255.
PlaneU8 heatmap_to_u8(const Heatmap& heatmap);

// JSON sidecar: image score, threshold, window geometry, per-window scores.
std::string heatmap_sidecar_json(const ScoredImage& scored, double t90);

}  // namespace cargoscan::detect
