#include "cargoscan/detector.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace cargoscan::detect {

namespace {

std::vector<int> axis_positions(int dim, int side, int stride) {
  std::vector<int> positions;
  for (int p = 0; p + side <= dim; p += stride) positions.push_back(p);
  if (positions.empty() || positions.back() != dim - side) positions.push_back(dim - side);
  return positions;
}

}  // namespace

WindowGrid sample_windows(int width, int height, int side, int stride) {
  if (side < 1 || stride < 1) throw_config("sample_windows: side and stride must be positive");
  if (side > width || side > height)
    throw_domain("sample_windows: window side exceeds image dimension");

  WindowGrid grid;
  grid.image_width = width;
  grid.image_height = height;
  grid.side = side;
  grid.stride = stride;
  const std::vector<int> xs = axis_positions(width, side, stride);
  const std::vector<int> ys = axis_positions(height, side, stride);
  grid.positions.reserve(xs.size() * ys.size());
  for (int y : ys)
    for (int x : xs) grid.positions.push_back({x, y});
  return grid;
}

PreparedImage prepare(TransmissionImage image) {
  PreparedImage prepared;
  prepared.log = log_transform(image);
  prepared.trans = std::move(image);
  return prepared;
}

ScoredImage score_image(const PreparedImage& image, const WindowGrid& grid,
                        const WindowClassifier& classifier) {
  if (grid.positions.empty()) throw_domain("score_image: empty window grid");
  if (classifier.window_side() != grid.side)
    throw_config("score_image: classifier window side does not match the grid");
  if (grid.image_width != image.width() || grid.image_height != image.height())
    throw_domain("score_image: grid geometry does not match the image");

  ScoredImage scored;
  scored.grid = grid;
  scored.window_scores = classifier.score(image, grid);
  if (scored.window_scores.size() != grid.positions.size())
    throw_domain("score_image: classifier returned a wrong score count");
  scored.image_score = *std::max_element(scored.window_scores.begin(), scored.window_scores.end());
  return scored;
}

Heatmap render_heatmap(const ScoredImage& scored, double t90) {
  if (!(t90 > 0.0)) throw_domain("render_heatmap: t90 must be positive");
  const WindowGrid& grid = scored.grid;
  PlaneD sum = PlaneD::Zero(grid.image_height, grid.image_width);
  PlaneD count = PlaneD::Zero(grid.image_height, grid.image_width);
  for (size_t i = 0; i < grid.positions.size(); ++i) {
    const WindowPos& p = grid.positions[i];
    sum.block(p.y, p.x, grid.side, grid.side) += scored.window_scores[i];
    count.block(p.y, p.x, grid.side, grid.side) += 1.0;
  }
  Heatmap heatmap;
  heatmap.values = (sum / count.max(1.0)) / t90;
  return heatmap;
}

PlaneU8 heatmap_to_u8(const Heatmap& heatmap) {
  PlaneU8 out(heatmap.values.rows(), heatmap.values.cols());
  for (Eigen::Index i = 0; i < heatmap.values.size(); ++i) {
    const double v = std::clamp(heatmap.values.data()[i], 0.0, 2.0) / 2.0;
    out.data()[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

std::string heatmap_sidecar_json(const ScoredImage& scored, double t90) {
  nlohmann::json j;
  j["image_score"] = scored.image_score;
  j["t90"] = t90;
  j["window_side"] = scored.grid.side;
  j["stride"] = scored.grid.stride;
  j["window_scores"] = scored.window_scores;
  return j.dump();
}

}  // namespace cargoscan::detect
