#include "cargoscan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "cargoscan/conv.hpp"
#include "cargoscan/rng.hpp"

namespace cargoscan::synth {

namespace {

constexpr double kShellBase = 0.90;
constexpr double kCorrugationAmp = 0.028;
constexpr double kCorrugationPeriod = 13.3;
constexpr double kEndWall = 0.55;
constexpr double kRoof = 0.62;
constexpr double kFloorBase = 0.35;
constexpr double kRail = 0.45;
constexpr double kShotNoiseScale = 2.0;
constexpr double kSpeckleRate = 1e-4;
constexpr double kPepperFactor = 0.45;
constexpr double kSaltFactor = 1.9;

struct CargoArea {
  int x0, x1, y0, y1;
};

CargoArea cargo_area(const SceneGeometry& g) {
  return {g.wall_left + 6, g.wall_right - 6, g.roof_end, g.floor_start};
}

}  // namespace

SceneGeometry scene_geometry(int width) {
  SceneGeometry g;
  g.wall_left = 24;
  g.wall_right = width - 24;
  g.roof_end = 48;
  g.floor_start = kSceneHeight - 50;
  g.floor_end = kSceneHeight - 20;
  return g;
}

RawScan gen_container(const SceneSpec& spec) {
  if (spec.clutter == Clutter::kEmpty && spec.n_objects != 0)
    throw_config("gen_container: empty clutter requires n_objects == 0");

  const int w = container_width(spec.container);
  const int h = kSceneHeight;
  const SceneGeometry g = scene_geometry(w);
  Rng rng(spec.noise_seed);

  // transmission scene
  PlaneD t = PlaneD::Constant(h, w, 1.0);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  for (int x = g.wall_left; x < g.wall_right; ++x) {
    const double corrugation = 1.0 + kCorrugationAmp * std::sin(x / kCorrugationPeriod * 6.283185307179586 + phase);
    const bool end_wall = x < g.wall_left + 6 || x >= g.wall_right - 6;
    for (int y = kAirBandRows; y < g.floor_end; ++y) {
      double v = 1.0;
      if (y >= g.roof_end - 8 && y < g.floor_end) {
        const double vertical = 1.0 - 0.03 * static_cast<double>(y - g.roof_end) / (g.floor_start - g.roof_end);
        v = kShellBase * corrugation * vertical;
        if (y < g.roof_end) v *= kRoof;
        if (end_wall) v *= kEndWall;
        if (y >= g.floor_start) {
          v *= kFloorBase;
          const int fy = y - g.floor_start;
          if ((fy >= 3 && fy < 7) || (fy >= 18 && fy < 22)) v *= kRail;
        }
      }
      t(y, x) = std::min(1.0, v);
    }
  }

  // per-column gain, clipped at three sigmas
  std::vector<double> gain(w);
  for (int x = 0; x < w; ++x) {
    const double sd = spec.column_gain_sd;
    gain[x] = std::clamp(1.0 + sd * rng.normal(), 1.0 - 3.0 * sd, 1.0 + 3.0 * sd);
  }

  RawScan scan;
  scan.air_value = kAirCounts;
  scan.pixels.resize(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double counts = kAirCounts * gain[x] * t(y, x);
      if (y >= kAirBandRows) {
        counts += rng.normal() * std::sqrt(kShotNoiseScale * counts);
        const double r = rng.uniform();
        if (r < kSpeckleRate) counts *= (r < kSpeckleRate * 0.5) ? kPepperFactor : kSaltFactor;
      }
      scan.pixels(y, x) = static_cast<std::uint16_t>(std::clamp(std::round(counts), 0.0, 65535.0));
    }
  }

  if (spec.dead_column_prob > 0.0) {
    for (int x = 0; x < w; ++x) {
      if (rng.uniform() < spec.dead_column_prob) {
        for (int y = 0; y < h; ++y)
          scan.pixels(y, x) = static_cast<std::uint16_t>(rng.uniform_int(600));
      }
    }
  }
  return scan;
}

namespace {

struct ObjectParams {
  double cover_target_lo, cover_target_hi;
};

// One cargo object stamped multiplicatively into the counts. Returns the
// number of newly covered pixels.
long stamp_object(Rng& rng, RawScan& scan, Plane<std::uint8_t>& covered, const CargoArea& area) {
  const int aw = area.x1 - area.x0, ah = area.y1 - area.y0;
  const int kind = static_cast<int>(rng.uniform_int(10));
  long newly = 0;

  auto multiply = [&](int x, int y, double factor) {
    const double v = scan.pixels(y, x) * factor;
    scan.pixels(y, x) = static_cast<std::uint16_t>(std::clamp(std::round(v), 0.0, 65535.0));
    if (!covered(y - area.y0, x - area.x0)) {
      covered(y - area.y0, x - area.x0) = 1;
      ++newly;
    }
  };

  if (kind < 4) {  // box
    const int bw = 40 + static_cast<int>(rng.uniform_int(std::min(300, aw) - 39));
    const int bh = 40 + static_cast<int>(rng.uniform_int(std::min(260, ah) - 39));
    const int x0 = area.x0 + static_cast<int>(rng.uniform_int(aw - bw + 1));
    const int y0 = area.y0 + static_cast<int>(rng.uniform_int(ah - bh + 1));
    const double factor = rng.uniform(0.05, 0.95);
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) multiply(x, y, factor);
  } else if (kind < 6) {  // cylinder, horizontal or vertical axis
    const bool horizontal = rng.bernoulli(0.5);
    const int radius = 18 + static_cast<int>(rng.uniform_int(std::min(110, (horizontal ? ah : aw) / 2 - 18)));
    const int length = 60 + static_cast<int>(rng.uniform_int(std::min(400, (horizontal ? aw : ah)) - 59));
    const double core = rng.uniform(0.05, 0.8);
    const double log_core = std::log(core);
    if (horizontal) {
      const int x0 = area.x0 + static_cast<int>(rng.uniform_int(aw - length + 1));
      const int cy = area.y0 + radius + static_cast<int>(rng.uniform_int(ah - 2 * radius + 1));
      for (int y = cy - radius; y < cy + radius; ++y) {
        const double d = static_cast<double>(y - cy) / radius;
        const double factor = std::exp(log_core * std::sqrt(std::max(0.0, 1.0 - d * d)));
        for (int x = x0; x < x0 + length; ++x) multiply(x, y, factor);
      }
    } else {
      const int y0 = area.y0 + static_cast<int>(rng.uniform_int(ah - length + 1));
      const int cx = area.x0 + radius + static_cast<int>(rng.uniform_int(aw - 2 * radius + 1));
      for (int x = cx - radius; x < cx + radius; ++x) {
        const double d = static_cast<double>(x - cx) / radius;
        const double factor = std::exp(log_core * std::sqrt(std::max(0.0, 1.0 - d * d)));
        for (int y = y0; y < y0 + length; ++y) multiply(x, y, factor);
      }
    }
  } else if (kind < 8) {  // sheet stack
    const int bw = 60 + static_cast<int>(rng.uniform_int(std::min(300, aw) - 59));
    const int bh = 40 + static_cast<int>(rng.uniform_int(std::min(200, ah) - 39));
    const int x0 = area.x0 + static_cast<int>(rng.uniform_int(aw - bw + 1));
    const int y0 = area.y0 + static_cast<int>(rng.uniform_int(ah - bh + 1));
    const int period = 6 + static_cast<int>(rng.uniform_int(9));
    const double f1 = rng.uniform(0.3, 0.95);
    const double f2 = rng.uniform(0.05, 0.5);
    for (int y = y0; y < y0 + bh; ++y) {
      const double factor = ((y - y0) / period) % 2 == 0 ? f1 : f2;
      for (int x = x0; x < x0 + bw; ++x) multiply(x, y, factor);
    }
  } else {  // small dense hardware: bracket-sized rect or disc
    const int size = 8 + static_cast<int>(rng.uniform_int(21));
    const int x0 = area.x0 + static_cast<int>(rng.uniform_int(aw - size));
    const int y0 = area.y0 + static_cast<int>(rng.uniform_int(ah - size));
    const double factor = rng.uniform(0.06, 0.35);
    const bool disc = rng.bernoulli(0.5);
    const double r = size / 2.0;
    for (int y = y0; y < y0 + size; ++y) {
      for (int x = x0; x < x0 + size; ++x) {
        if (disc) {
          const double dx = x - x0 - r + 0.5, dy = y - y0 - r + 0.5;
          if (dx * dx + dy * dy > r * r) continue;
        }
        multiply(x, y, factor);
      }
    }
  }
  return newly;
}

}  // namespace

RawScan gen_cargo(const SceneSpec& spec, const RawScan& scan, double* coverage_out) {
  if (spec.clutter == Clutter::kEmpty) throw_config("gen_cargo: empty clutter has no cargo");
  if (coverage_out) *coverage_out = 0.0;
  RawScan out = scan;
  if (spec.n_objects == 0) return out;

  const SceneGeometry g = scene_geometry(out.width());
  const CargoArea area = cargo_area(g);
  const long total = static_cast<long>(area.x1 - area.x0) * (area.y1 - area.y0);
  Plane<std::uint8_t> covered = Plane<std::uint8_t>::Zero(area.y1 - area.y0, area.x1 - area.x0);

  Rng rng = Rng::fork(spec.noise_seed, 0xca9c0);
  long covered_px = 0;

  const double cap = spec.clutter == Clutter::kLight ? 0.29 : 1.0;
  for (int i = 0; i < spec.n_objects; ++i) {
    if (static_cast<double>(covered_px) / total >= cap) break;
    covered_px += stamp_object(rng, out, covered, area);
  }
  if (spec.clutter == Clutter::kDense) {
    // top up to the dense coverage floor
    int guard = 0;
    while (static_cast<double>(covered_px) / total < 0.62 && guard++ < 400)
      covered_px += stamp_object(rng, out, covered, area);
  }
  if (coverage_out) *coverage_out = static_cast<double>(covered_px) / total;
  return out;
}

RawScan gen_scene(const SceneSpec& spec) {
  RawScan scan = gen_container(spec);
  if (spec.clutter != Clutter::kEmpty) scan = gen_cargo(spec, scan);
  return scan;
}

tip::ThreatInstance gen_threat(const ThreatSpec& spec) {
  if (spec.bbox_w < 20 || spec.bbox_w > 60 || spec.bbox_h < 20 || spec.bbox_h > 60)
    throw_config("gen_threat: bbox outside [20, 60] px");
  if (spec.min_attenuation < 1.0 || spec.min_attenuation > 4.0)
    throw_config("gen_threat: min_attenuation outside [1.0, 4.0]");

  const int w = spec.bbox_w, h = spec.bbox_h;
  Rng rng(spec.shape_seed ^ 0x7a3155u);

  PlaneD atten = PlaneD::Zero(h, w);
  PlaneU8 parts = PlaneU8::Zero(h, w);

  auto stamp_disc = [&](double cx, double cy, double r, double a) {
    for (int y = std::max(0, static_cast<int>(cy - r)); y <= std::min(h - 1, static_cast<int>(cy + r)); ++y)
      for (int x = std::max(0, static_cast<int>(cx - r)); x <= std::min(w - 1, static_cast<int>(cx + r)); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) {
          atten(y, x) += a;
          parts(y, x) = 1;
        }
  };
  auto stamp_rect = [&](double cx, double cy, double rw, double rh, double theta, double a) {
    const double c = std::cos(theta), s = std::sin(theta);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        if (std::abs(u) <= rw && std::abs(v) <= rh) {
          atten(y, x) += a;
          parts(y, x) = 1;
        }
      }
  };

  const int n_parts = 2 + static_cast<int>(rng.uniform_int(4));
  const double size_factor = rng.uniform(0.7, 1.45);
  double cx = w / 2.0 + rng.uniform(-w / 4.0, w / 4.0);
  double cy = h / 2.0 + rng.uniform(-h / 4.0, h / 4.0);
  for (int p = 0; p < n_parts; ++p) {
    if (p > 0) {
      // anchor each following part on a pixel of the current union so the
      // mask stays a single connected blob
      std::vector<std::pair<int, int>> on;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (parts(y, x)) on.emplace_back(x, y);
      const auto& anchor = on[rng.uniform_int(on.size())];
      cx = anchor.first;
      cy = anchor.second;
    }
    const double a = rng.uniform(0.4, 1.0);
    // The seed part carries most of the bulk; attachments may be small.
    const double grow = size_factor * (p == 0 ? 1.0 : rng.uniform(0.4, 1.0));
    if (rng.bernoulli(p == 0 ? 0.25 : 0.4)) {
      stamp_disc(cx, cy, grow * rng.uniform(std::min(w, h) / 6.0, std::min(w, h) / 4.0), a);
    } else {
      stamp_rect(cx, cy, grow * rng.uniform(w / 6.0, w / 3.2), grow * rng.uniform(h / 7.0, h / 4.5),
                 rng.uniform(0.0, 3.141592653589793), a);
    }
  }

  atten = gaussian_smooth(atten, 0.8);
  const double peak = atten.maxCoeff();
  atten *= spec.min_attenuation / peak;

  tip::ThreatInstance out;
  out.id = "synth-" + std::to_string(spec.shape_seed);
  out.provenance = tip::ThreatInstance::Provenance::kSynthetic;
  out.mask = PlaneU8::Zero(h, w);
  out.patch.values.resize(h, w);
  const double floor_atten = 0.01 * spec.min_attenuation;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (atten(y, x) > floor_atten) {
        out.mask(y, x) = 1;
        out.patch.values(y, x) = clamp_transmission(std::exp(-atten(y, x)));
      } else {
        out.patch.values(y, x) = 1.0;
      }
    }
  }
  return out;
}

std::string scene_spec_to_json(const SceneSpec& spec) {
  nlohmann::json j;
  j["container"] = spec.container == ContainerClass::k20ft ? "20ft" : "40ft";
  j["clutter"] = spec.clutter == Clutter::kEmpty ? "empty"
                 : spec.clutter == Clutter::kLight ? "light"
                                                   : "dense";
  j["n_objects"] = spec.n_objects;
  j["noise_seed"] = spec.noise_seed;
  j["dead_column_prob"] = spec.dead_column_prob;
  j["column_gain_sd"] = spec.column_gain_sd;
  return j.dump();
}

SceneSpec scene_spec_from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw_format(std::string("scene spec: bad JSON: ") + e.what());
  }
  SceneSpec spec;
  const std::string container = j.value("container", "20ft");
  if (container == "20ft") spec.container = ContainerClass::k20ft;
  else if (container == "40ft") spec.container = ContainerClass::k40ft;
  else throw_format("scene spec: unknown container class " + container);
  const std::string clutter = j.value("clutter", "empty");
  if (clutter == "empty") spec.clutter = Clutter::kEmpty;
  else if (clutter == "light") spec.clutter = Clutter::kLight;
  else if (clutter == "dense") spec.clutter = Clutter::kDense;
  else throw_format("scene spec: unknown clutter class " + clutter);
  spec.n_objects = j.value("n_objects", 0);
  spec.noise_seed = j.value("noise_seed", std::uint64_t{0});
  spec.dead_column_prob = j.value("dead_column_prob", 0.0);
  spec.column_gain_sd = j.value("column_gain_sd", 0.03);
  return spec;
}

}  // namespace cargoscan::synth
