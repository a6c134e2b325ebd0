#pragma once

#include <cstdint>
#include <string>

#include "cargoscan/image.hpp"
#include "cargoscan/tip.hpp"

namespace cargoscan::synth {

enum class ContainerClass { k20ft, k40ft };
enum class Clutter { kEmpty, kLight, kDense };

inline constexpr int kSceneHeight = 850;
inline constexpr std::uint16_t kAirCounts = 60000;

inline int container_width(ContainerClass c) { return c == ContainerClass::k20ft ? 1290 : 2570; }

struct SceneSpec {
  ContainerClass container = ContainerClass::k20ft;
  Clutter clutter = Clutter::kEmpty;
  int n_objects = 0;
  std::uint64_t noise_seed = 0;
  double dead_column_prob = 0.0;
  double column_gain_sd = 0.03;
};

// Horizontal bands of the generated scene, exposed for tests and placement.
struct SceneGeometry {
  int wall_left, wall_right;    // container outline columns [wall_left, wall_right)
  int roof_end;                  // container content starts at this row
  int floor_start, floor_end;    // floor/rail band rows [floor_start, floor_end)
};
SceneGeometry scene_geometry(int width);

// Empty container scan: air band, corrugated shell, roof/floor structure,
// per-column gain, shot noise, salt-and-pepper speckle, optional dead columns.
// Pure function of the spec (bit-identical for equal specs).
RawScan gen_container(const SceneSpec& spec);

// Composites boxes, cylinders and sheet stacks multiplicatively into the
// cargo area. Dense clutter is topped up to >= 60% coverage; light clutter is
// capped at <= 30%. coverage_out, when given, receives the covered fraction
// of the cargo area.
RawScan gen_cargo(const SceneSpec& spec, const RawScan& scan, double* coverage_out = nullptr);

// gen_container followed by gen_cargo when the spec asks for clutter.
RawScan gen_scene(const SceneSpec& spec);

struct ThreatSpec {
  int bbox_w = 40, bbox_h = 40;    // in [20, 60]
  double min_attenuation = 2.0;    // peak -ln t, in [1.0, 4.0]
  std::uint64_t shape_seed = 0;
};

// Compact multi-part metallic-like transmission patch with a single
// 8-connected mask; peak attenuation equals spec.min_attenuation.
tip::ThreatInstance gen_threat(const ThreatSpec& spec);

// JSON (de)serialization of scene specs, used for dataset sidecars.
std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& json);

}  // namespace cargoscan::synth
