#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cargoscan/image.hpp"
#include "cargoscan/types.hpp"

namespace cargoscan::tip {

// Background-corrected threat patch. Non-mask pixels are exactly 1.0 so the
// patch is a multiplicative no-op outside the threat footprint.
struct ThreatInstance {
  TransmissionImage patch;
  PlaneU8 mask;  // 0/1, same dims as patch, non-empty, single 8-connected blob
  std::string id;
  enum class Provenance { kExtracted, kSynthetic } provenance = Provenance::kSynthetic;

  int width() const { return patch.width(); }
  int height() const { return patch.height(); }
};

struct AugmentParams {
  double alpha = 1.0;  // attenuation scaling exponent, [0.5, 2.0]
  bool flip_h = false;
  bool flip_v = false;
};

// Divides the patch by the mean of pixels outside mask+exclusion (needs at
// least 16 such pixels), clamps to the transmission range and forces non-mask
// pixels to exactly 1.0. `exclusion` may be empty (0x0).
ThreatInstance extract_threat(const TransmissionImage& patch, const PlaneU8& mask,
                              const PlaneU8& exclusion);

// t -> t^alpha inside the mask, then joint h/v flips of patch and mask.
ThreatInstance augment(const ThreatInstance& threat, const AugmentParams& params);

struct PixelPos {
  int x = 0;
  int y = 0;
};

struct ProjectResult {
  TransmissionImage image;
  int clamped = 0;  // pixels that saturated at the transmission floor
};

// Multiplies the patch into the target at `pos` (top-left), clamped to the
// transmission range. The patch must fit inside the target.
ProjectResult project(const ThreatInstance& threat, const TransmissionImage& target, PixelPos pos);

// --- Dataset assembly -------------------------------------------------------

struct BBox {
  int x = 0, y = 0, w = 0, h = 0;
};

struct Injection {
  std::string threat_id;
  BBox bbox;
  AugmentParams params;
};

struct ManifestEntry {
  std::string scan_path;
  int label = 0;  // 1 = threat present
  std::string split;  // "train" | "test"
  std::vector<Injection> injections;  // empty for benign entries
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  void save_jsonl(const std::string& path) const;
  static DatasetManifest load_jsonl(const std::string& path);
  // Throws when a threat id or scan path appears in both splits.
  void validate_disjoint() const;
};

struct ScanInfo {
  std::string path;
  int width = 0;
  int height = 0;
};

struct ThreatSize {
  std::string id;
  int width = 0;
  int height = 0;
};

struct DatasetOptions {
  double positive_frac = 0.5;
  double train_frac = 0.75;
  int max_threats_per_positive = 1;
  int border_margin = 32;  // placement keeps this margin plus the air band
};

// Deterministic split + injection plan. Threat pools for train and test are
// disjoint; exactly round(positive_frac * N) entries receive injections.
DatasetManifest build_dataset(const std::vector<ScanInfo>& scans,
                              const std::vector<ThreatSize>& threats,
                              const DatasetOptions& options, std::uint64_t seed);

}  // namespace cargoscan::tip
