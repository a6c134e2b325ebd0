#include <doctest.h>

#include <cmath>
#include <utility>
#include <vector>

#include "cargoscan/synth.hpp"

using namespace cargoscan;
using namespace cargoscan::synth;

namespace {

// 4/8-connectivity component count over a 0/1 mask.
int component_count(const PlaneU8& mask) {
  PlaneU8 seen = PlaneU8::Zero(mask.rows(), mask.cols());
  int components = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < mask.rows(); ++y) {
    for (int x = 0; x < mask.cols(); ++x) {
      if (!mask(y, x) || seen(y, x)) continue;
      ++components;
      stack.push_back({x, y});
      seen(y, x) = 1;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= mask.cols() || ny >= mask.rows()) continue;
            if (mask(ny, nx) && !seen(ny, nx)) {
              seen(ny, nx) = 1;
              stack.push_back({nx, ny});
            }
          }
      }
    }
  }
  return components;
}

}  // namespace

TEST_CASE("gen_container is deterministic in the spec") {
  SceneSpec spec;
  spec.noise_seed = 1234;
  spec.dead_column_prob = 0.002;
  RawScan a = gen_container(spec);
  RawScan b = gen_container(spec);
  CHECK((a.pixels == b.pixels).all());
  CHECK(a.air_value == b.air_value);
}

TEST_CASE("40ft containers are 2570 px wide") {
  SceneSpec spec;
  spec.container = ContainerClass::k40ft;
  spec.noise_seed = 9;
  RawScan scan = gen_container(spec);
  CHECK(scan.width() == 2570);
  CHECK(scan.height() == 850);
}

TEST_CASE("empty containers have no dark pixels outside the floor band") {
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    SceneSpec spec;
    spec.noise_seed = seed;
    spec.dead_column_prob = 0.0;
    RawScan scan = gen_container(spec);
    const SceneGeometry g = scene_geometry(scan.width());
    const double floor_level = 0.3 * scan.air_value;
    std::uint32_t darkest = 65535;
    for (int y = 0; y < scan.height(); ++y) {
      if (y >= g.floor_start && y < g.floor_end) continue;  // floor band
      if (y >= g.roof_end - 8 && y < g.roof_end) continue;  // roof band
      for (int x = 0; x < scan.width(); ++x) {
        const bool wall_band = (x >= g.wall_left && x < g.wall_left + 6) ||
                               (x >= g.wall_right - 6 && x < g.wall_right);
        if (wall_band) continue;
        darkest = std::min<std::uint32_t>(darkest, scan.pixels(y, x));
      }
    }
    CHECK(darkest >= floor_level);
  }
}

TEST_CASE("dead columns appear at the configured rate and are dead") {
  SceneSpec spec;
  spec.noise_seed = 5;
  spec.dead_column_prob = 0.01;
  RawScan scan = gen_container(spec);
  int dead = 0;
  for (int x = 0; x < scan.width(); ++x) {
    int below = 0;
    for (int y = 0; y < scan.height(); ++y)
      if (scan.pixels(y, x) < 0.02 * scan.air_value) ++below;
    if (below > 0.95 * scan.height()) ++dead;
  }
  CHECK(dead >= 3);  // 1290 columns at 1%
  CHECK(dead <= 40);
}

TEST_CASE("gen_cargo with zero objects returns the scan unchanged") {
  SceneSpec spec;
  spec.clutter = Clutter::kLight;
  spec.noise_seed = 3;
  RawScan scan = gen_container(spec);
  RawScan out = gen_cargo(spec, scan);
  CHECK((out.pixels == scan.pixels).all());
}

TEST_CASE("gen_cargo only attenuates") {
  SceneSpec spec;
  spec.clutter = Clutter::kLight;
  spec.n_objects = 12;
  spec.noise_seed = 17;
  RawScan scan = gen_container(spec);
  RawScan out = gen_cargo(spec, scan);
  CHECK((out.pixels <= scan.pixels).all());
}

TEST_CASE("dense clutter covers 60-100% of the cargo area, light at most 30%") {
  for (std::uint64_t seed : {100u, 200u, 300u}) {
    SceneSpec dense;
    dense.clutter = Clutter::kDense;
    dense.n_objects = 30;
    dense.noise_seed = seed;
    double coverage = 0.0;
    gen_cargo(dense, gen_container(dense), &coverage);
    CHECK(coverage >= 0.6);
    CHECK(coverage <= 1.0);

    SceneSpec light;
    light.clutter = Clutter::kLight;
    light.n_objects = 10;
    light.noise_seed = seed;
    gen_cargo(light, gen_container(light), &coverage);
    CHECK(coverage <= 0.3);
    CHECK(coverage > 0.0);
  }
}

TEST_CASE("gen_threat produces an attenuating patch with exact background") {
  ThreatSpec spec;
  spec.bbox_w = 44;
  spec.bbox_h = 36;
  spec.min_attenuation = 2.5;
  spec.shape_seed = 77;
  tip::ThreatInstance threat = gen_threat(spec);
  CHECK(threat.width() == 44);
  CHECK(threat.height() == 36);
  int mask_px = 0;
  for (int y = 0; y < threat.height(); ++y)
    for (int x = 0; x < threat.width(); ++x) {
      if (threat.mask(y, x)) {
        ++mask_px;
        CHECK(threat.patch.values(y, x) < 1.0);
      } else {
        CHECK(threat.patch.values(y, x) == 1.0);
      }
    }
  CHECK(mask_px > 0);
  // peak attenuation matches the requested level
  const double peak = -std::log(threat.patch.values.minCoeff());
  CHECK(peak == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("gen_threat masks are single 8-connected components") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ThreatSpec spec;
    spec.bbox_w = 20 + static_cast<int>(seed % 41);
    spec.bbox_h = 60 - static_cast<int>(seed % 41);
    spec.min_attenuation = 1.0 + 3.0 * (seed % 7) / 6.0;
    spec.shape_seed = seed;
    tip::ThreatInstance threat = gen_threat(spec);
    CHECK(component_count(threat.mask) == 1);
  }
}

TEST_CASE("different shape seeds give diverse masks") {
  ThreatSpec spec;
  spec.bbox_w = 40;
  spec.bbox_h = 40;
  spec.min_attenuation = 2.0;
  // Diversity measured against the union of the two masks: at least 10% of
  // the shapes' pixels must differ between any two seeds.
  int diverse_pairs = 0;
  tip::ThreatInstance prev = gen_threat(spec);
  for (std::uint64_t seed = 1; seed < 100; ++seed) {
    spec.shape_seed = seed;
    tip::ThreatInstance cur = gen_threat(spec);
    int differing = 0, united = 0;
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x) {
        if (cur.mask(y, x) != prev.mask(y, x)) ++differing;
        if (cur.mask(y, x) || prev.mask(y, x)) ++united;
      }
    if (differing >= 0.10 * united) ++diverse_pairs;
    prev = std::move(cur);
  }
  CHECK(diverse_pairs == 99);
}

TEST_CASE("gen_threat validates spec bounds") {
  ThreatSpec spec;
  spec.bbox_w = 10;
  CHECK_THROWS_AS(gen_threat(spec), Error);
  spec.bbox_w = 40;
  spec.min_attenuation = 0.5;
  CHECK_THROWS_AS(gen_threat(spec), Error);
}

TEST_CASE("scene spec JSON round-trip") {
  SceneSpec spec;
  spec.container = ContainerClass::k40ft;
  spec.clutter = Clutter::kDense;
  spec.n_objects = 23;
  spec.noise_seed = 987654321;
  spec.dead_column_prob = 0.004;
  spec.column_gain_sd = 0.05;
  SceneSpec back = scene_spec_from_json(scene_spec_to_json(spec));
  CHECK(back.container == spec.container);
  CHECK(back.clutter == spec.clutter);
  CHECK(back.n_objects == spec.n_objects);
  CHECK(back.noise_seed == spec.noise_seed);
  CHECK(back.dead_column_prob == doctest::Approx(spec.dead_column_prob));
  CHECK(back.column_gain_sd == doctest::Approx(spec.column_gain_sd));
}

TEST_CASE("generated scenes stay within transmission bounds after preprocessing") {
  SceneSpec spec;
  spec.clutter = Clutter::kDense;
  spec.n_objects = 25;
  spec.noise_seed = 51;
  spec.dead_column_prob = 0.003;
  RawScan scan = gen_scene(spec);
  PreprocessResult pre = preprocess(scan);
  CHECK((pre.image.values >= TransmissionImage::kTransmissionFloor).all());
  CHECK((pre.image.values <= 1.0).all());
}
