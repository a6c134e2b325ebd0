#include "cargoscan/tip.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cargoscan/rng.hpp"

namespace cargoscan::tip {

ThreatInstance extract_threat(const TransmissionImage& patch, const PlaneU8& mask,
                              const PlaneU8& exclusion) {
  const int w = patch.width(), h = patch.height();
  if (mask.rows() != h || mask.cols() != w) throw_domain("extract_threat: mask dims mismatch");
  const bool has_excl = exclusion.size() > 0;
  if (has_excl && (exclusion.rows() != h || exclusion.cols() != w))
    throw_domain("extract_threat: exclusion dims mismatch");

  double sum = 0.0;
  long count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(y, x)) continue;
      if (has_excl && exclusion(y, x)) continue;
      sum += patch.values(y, x);
      ++count;
    }
  }
  if (count < 16) throw_domain("extract_threat: fewer than 16 background pixels");
  const double mean = sum / count;

  ThreatInstance out;
  out.provenance = ThreatInstance::Provenance::kExtracted;
  out.mask = mask;
  out.patch.values.resize(h, w);
  long mask_pixels = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(y, x)) {
        out.patch.values(y, x) = clamp_transmission(patch.values(y, x) / mean);
        ++mask_pixels;
      } else {
        out.patch.values(y, x) = 1.0;
      }
    }
  }
  if (mask_pixels == 0) throw_domain("extract_threat: empty mask");
  return out;
}

ThreatInstance augment(const ThreatInstance& threat, const AugmentParams& params) {
  if (params.alpha < 0.5 || params.alpha > 2.0)
    throw_config("augment: alpha outside [0.5, 2.0]");
  ThreatInstance out = threat;
  if (params.alpha != 1.0) {
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x)
        if (out.mask(y, x))
          out.patch.values(y, x) = clamp_transmission(std::pow(out.patch.values(y, x), params.alpha));
  }
  if (params.flip_h) {
    out.patch.values = out.patch.values.rowwise().reverse().eval();
    out.mask = out.mask.rowwise().reverse().eval();
  }
  if (params.flip_v) {
    out.patch.values = out.patch.values.colwise().reverse().eval();
    out.mask = out.mask.colwise().reverse().eval();
  }
  return out;
}

ProjectResult project(const ThreatInstance& threat, const TransmissionImage& target, PixelPos pos) {
  const int tw = threat.width(), th = threat.height();
  if (pos.x < 0 || pos.y < 0 || pos.x + tw > target.width() || pos.y + th > target.height())
    throw_domain("project: patch footprint outside the target image");

  ProjectResult result;
  result.image = target;
  for (int y = 0; y < th; ++y) {
    for (int x = 0; x < tw; ++x) {
      const double v = target.values(pos.y + y, pos.x + x) * threat.patch.values(y, x);
      const double clamped = clamp_transmission(v);
      if (clamped != v) ++result.clamped;
      result.image.values(pos.y + y, pos.x + x) = clamped;
    }
  }
  return result;
}

void DatasetManifest::save_jsonl(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw_io("manifest: cannot open " + path + " for writing");
  nlohmann::json header;
  header["type"] = "cargoscan-manifest";
  header["seed"] = seed;
  out << header.dump() << "\n";
  for (const ManifestEntry& e : entries) {
    nlohmann::json j;
    j["scan_path"] = e.scan_path;
    j["label"] = e.label ? "threat" : "benign";
    j["split"] = e.split;
    if (!e.injections.empty()) {
      const Injection& first = e.injections.front();
      j["threat_id"] = first.threat_id;
      j["bbox"] = {first.bbox.x, first.bbox.y, first.bbox.w, first.bbox.h};
      nlohmann::json arr = nlohmann::json::array();
      for (const Injection& inj : e.injections) {
        arr.push_back({{"threat_id", inj.threat_id},
                       {"bbox", {inj.bbox.x, inj.bbox.y, inj.bbox.w, inj.bbox.h}},
                       {"alpha", inj.params.alpha},
                       {"flip_h", inj.params.flip_h},
                       {"flip_v", inj.params.flip_v}});
      }
      j["injections"] = arr;
    }
    out << j.dump() << "\n";
  }
  if (!out) throw_io("manifest: short write to " + path);
}

DatasetManifest DatasetManifest::load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("manifest: cannot open " + path);
  DatasetManifest m;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw_format(std::string("manifest: bad JSON line: ") + e.what());
    }
    if (!saw_header && j.value("type", "") == "cargoscan-manifest") {
      m.seed = j.value("seed", std::uint64_t{0});
      saw_header = true;
      continue;
    }
    ManifestEntry e;
    e.scan_path = j.at("scan_path").get<std::string>();
    e.label = j.at("label").get<std::string>() == "threat" ? 1 : 0;
    e.split = j.at("split").get<std::string>();
    if (j.contains("injections")) {
      for (const auto& inj_json : j["injections"]) {
        Injection inj;
        inj.threat_id = inj_json.at("threat_id").get<std::string>();
        const auto& bb = inj_json.at("bbox");
        inj.bbox = {bb[0].get<int>(), bb[1].get<int>(), bb[2].get<int>(), bb[3].get<int>()};
        inj.params.alpha = inj_json.value("alpha", 1.0);
        inj.params.flip_h = inj_json.value("flip_h", false);
        inj.params.flip_v = inj_json.value("flip_v", false);
        e.injections.push_back(inj);
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void DatasetManifest::validate_disjoint() const {
  std::vector<std::string> train_threats, test_threats, train_scans, test_scans;
  for (const ManifestEntry& e : entries) {
    auto& scans = e.split == "train" ? train_scans : test_scans;
    auto& threats = e.split == "train" ? train_threats : test_threats;
    scans.push_back(e.scan_path);
    for (const Injection& inj : e.injections) threats.push_back(inj.threat_id);
  }
  auto overlaps = [](std::vector<std::string>& a, std::vector<std::string>& b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::string> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    return !both.empty();
  };
  if (overlaps(train_scans, test_scans)) throw_domain("manifest: scan paths shared across splits");
  if (overlaps(train_threats, test_threats)) throw_domain("manifest: threat ids shared across splits");
}

DatasetManifest build_dataset(const std::vector<ScanInfo>& scans,
                              const std::vector<ThreatSize>& threats,
                              const DatasetOptions& options, std::uint64_t seed) {
  const int n = static_cast<int>(scans.size());
  if (n < 2) throw_config("build_dataset: need at least two scans");
  if (options.positive_frac <= 0.0 || options.positive_frac >= 1.0)
    throw_config("build_dataset: positive_frac must lie in (0,1)");
  if (options.train_frac <= 0.0 || options.train_frac >= 1.0)
    throw_config("build_dataset: train_frac must lie in (0,1)");
  if (options.max_threats_per_positive < 1)
    throw_config("build_dataset: max_threats_per_positive must be >= 1");

  Rng rng(seed);

  std::vector<int> scan_order(n);
  std::iota(scan_order.begin(), scan_order.end(), 0);
  for (int i = n - 1; i > 0; --i)
    std::swap(scan_order[i], scan_order[rng.uniform_int(i + 1)]);

  const int n_train = std::clamp(static_cast<int>(std::lround(options.train_frac * n)), 1, n - 1);

  const int t = static_cast<int>(threats.size());
  if (t < 2) throw_config("build_dataset: need at least two threats for disjoint split pools");
  std::vector<int> threat_order(t);
  std::iota(threat_order.begin(), threat_order.end(), 0);
  for (int i = t - 1; i > 0; --i)
    std::swap(threat_order[i], threat_order[rng.uniform_int(i + 1)]);
  const int t_train = std::clamp(static_cast<int>(std::lround(options.train_frac * t)), 1, t - 1);

  const int n_positive = static_cast<int>(std::lround(options.positive_frac * n));
  int pos_train = std::clamp(static_cast<int>(std::lround(options.positive_frac * n_train)), 0, n_train);
  pos_train = std::min(pos_train, n_positive);
  const int pos_test = n_positive - pos_train;
  if (pos_test > n - n_train)
    throw_config("build_dataset: positive count does not fit the test split");

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.entries.resize(n);

  for (int i = 0; i < n; ++i) {
    const bool in_train = i < n_train;
    const ScanInfo& scan = scans[scan_order[i]];
    ManifestEntry& entry = manifest.entries[i];
    entry.scan_path = scan.path;
    entry.split = in_train ? "train" : "test";

    const bool positive = in_train ? (i < pos_train) : (i - n_train < pos_test);
    if (!positive) continue;
    entry.label = 1;

    const int pool_base = in_train ? 0 : t_train;
    const int pool_size = in_train ? t_train : t - t_train;
    const int n_inject = options.max_threats_per_positive == 1
                             ? 1
                             : 1 + static_cast<int>(rng.uniform_int(options.max_threats_per_positive));
    for (int k = 0; k < n_inject; ++k) {
      const ThreatSize& threat = threats[threat_order[pool_base + rng.uniform_int(pool_size)]];
      Injection inj;
      inj.threat_id = threat.id;
      inj.params.alpha = rng.uniform(0.5, 2.0);
      inj.params.flip_h = rng.bernoulli(0.5);
      inj.params.flip_v = rng.bernoulli(0.5);
      // uniform placement inside the cargo interior: clear of the air band
      // plus a border margin on every side
      const int margin = options.border_margin;
      const int x_lo = margin, x_hi = scan.width - margin - threat.width;
      const int y_lo = 16 + margin, y_hi = scan.height - margin - threat.height;
      if (x_hi < x_lo || y_hi < y_lo)
        throw_config("build_dataset: threat does not fit scan " + scan.path);
      inj.bbox.x = x_lo + static_cast<int>(rng.uniform_int(x_hi - x_lo + 1));
      inj.bbox.y = y_lo + static_cast<int>(rng.uniform_int(y_hi - y_lo + 1));
      inj.bbox.w = threat.width;
      inj.bbox.h = threat.height;
      entry.injections.push_back(inj);
    }
  }

  manifest.validate_disjoint();
  return manifest;
}

}  // namespace cargoscan::tip
